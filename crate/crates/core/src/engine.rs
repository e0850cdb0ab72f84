//! Closed-loop orchestration: the plant is integrated with RK4 on a fixed
//! base grid, the controller is advanced in closed form, and both detectors
//! are localised inside each step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, DetectorStats};
use crate::controller::{
    ed2_on_arrival, ControllerDesign, ControllerError, ControllerInit, ControllerState, GainSet,
    TriggerThresholds,
};
use crate::linalg::{
    build_companion, eigen_real_parts, locate_crossing, rk4_step, solve_lyapunov, LyapunovCert,
    NumericsError, HURWITZ_TOL,
};
use crate::plant::{ed1_condition, ed1_fire, PlantError, PlantModel, PlantState};

/// Aborts a run once this many events have fired.
pub const EVENT_STORM_LIMIT: usize = 1_000_000;
pub const DEFAULT_EVENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    #[serde(rename = "ED1")]
    Ed1,
    #[serde(rename = "ED2")]
    Ed2,
}

/// Which error signal crossed its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "e_y")]
    Y,
    #[serde(rename = "e_ybar")]
    Ybar,
    #[serde(rename = "e_xi")]
    Xi,
    #[serde(rename = "e_zeta")]
    Zeta,
    #[serde(rename = "e_h")]
    ThetaHat,
    #[serde(rename = "e_f")]
    AlphaF,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::Ed1 => "ED1",
            Detector::Ed2 => "ED2",
        })
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ED1" => Ok(Detector::Ed1),
            "ED2" => Ok(Detector::Ed2),
            other => Err(format!("unknown detector {other:?}")),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Y => "e_y",
            Condition::Ybar => "e_ybar",
            Condition::Xi => "e_xi",
            Condition::Zeta => "e_zeta",
            Condition::ThetaHat => "e_h",
            Condition::AlphaF => "e_f",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "e_y" => Condition::Y,
            "e_ybar" => Condition::Ybar,
            "e_xi" => Condition::Xi,
            "e_zeta" => Condition::Zeta,
            "e_h" => Condition::ThetaHat,
            "e_f" => Condition::AlphaF,
            other => return Err(format!("unknown condition {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub detector: Detector,
    pub condition: Condition,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub theta_hat: f64,
    pub alpha_f: Vec<f64>,
}

impl InitialConditions {
    pub fn controller(&self) -> ControllerInit {
        ControllerInit {
            xi: self.xi.clone(),
            zeta: self.zeta.clone(),
            theta_hat: self.theta_hat,
            alpha_f: self.alpha_f.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: PlantModel,
    pub k: Vec<f64>,
    pub gains: GainSet,
    pub thresholds: TriggerThresholds,
    pub init: InitialConditions,
    pub t_end: f64,
    pub h: f64,
    pub record_stride: usize,
    pub event_tol: f64,
    pub q: Option<f64>,
    /// Start of the window for the ultimate-bound estimate; `t_end / 2` if unset.
    pub tail_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("{field} has length {found}, expected {expected}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("A_c built from k is not Hurwitz (largest real part {max_real})")]
    NotHurwitz { max_real: f64 },
    #[error("tail_start = {tail_start} must lie in [0, t_end = {t_end})")]
    TailStart { tail_start: f64, t_end: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl SimConfig {
    pub fn order(&self) -> usize {
        self.model.order()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        let n = self.order();
        let dims: [(&'static str, usize, usize); 5] = [
            ("k", n, self.k.len()),
            ("x0", n, self.init.x.len()),
            ("xi0", n, self.init.xi.len()),
            ("zeta0", n, self.init.zeta.len()),
            ("alpha_f0", n.saturating_sub(1), self.init.alpha_f.len()),
        ];
        for (field, expected, found) in dims {
            if expected != found {
                return Err(ConfigError::Dimension {
                    field,
                    expected,
                    found,
                });
            }
        }
        self.gains.validate(n)?;
        self.thresholds.validate()?;
        for (field, value) in [("t_end", self.t_end), ("h", self.h), ("event_tol", self.event_tol)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { field, value });
            }
        }
        if self.record_stride == 0 {
            return Err(ConfigError::NonPositive {
                field: "record_stride",
                value: 0.0,
            });
        }
        if let Some(q) = self.q {
            if !(q > 0.0) {
                return Err(ConfigError::NonPositive { field: "q", value: q });
            }
        }
        let tail = self.tail_start();
        if !(tail >= 0.0 && tail < self.t_end) {
            return Err(ConfigError::TailStart {
                tail_start: tail,
                t_end: self.t_end,
            });
        }
        let max_real = eigen_real_parts(&build_companion(&self.k))?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(max_real < HURWITZ_TOL) {
            return Err(ConfigError::NotHurwitz { max_real });
        }
        Ok(())
    }

    pub fn tail_start(&self) -> f64 {
        self.tail_start.unwrap_or(0.5 * self.t_end)
    }

    pub fn design(&self) -> ControllerDesign {
        ControllerDesign {
            k: self.k.clone(),
            a_c: build_companion(&self.k),
            gains: self.gains.clone(),
            thresholds: self.thresholds,
            psi: self.model.psi.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("non-finite {signal} at t = {t}")]
    NonFinite { t: f64, signal: String },
    #[error("plant failure at t = {t}: {source}")]
    Plant {
        t: f64,
        #[source]
        source: PlantError,
    },
    #[error("controller failure at t = {t}: {source}")]
    Controller {
        t: f64,
        #[source]
        source: ControllerError,
    },
    #[error("event storm: more than {limit} events by t = {t}")]
    EventStorm { t: f64, limit: usize },
    #[error("event localisation failed at t = {t}: {source}")]
    Localisation {
        t: f64,
        #[source]
        source: NumericsError,
    },
    #[error("recorded series is inconsistent: {0}")]
    Inconsistent(String),
}

impl EngineError {
    /// Time of failure, when the error happened during integration.
    pub fn time(&self) -> Option<f64> {
        match self {
            EngineError::NonFinite { t, .. }
            | EngineError::Plant { t, .. }
            | EngineError::Controller { t, .. }
            | EngineError::EventStorm { t, .. }
            | EngineError::Localisation { t, .. } => Some(*t),
            EngineError::Config(_) | EngineError::Inconsistent(_) => None,
        }
    }
}

/// One recorded instant of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
    /// Plant-side hold of the last transmitted output.
    pub ybar: f64,
    pub u: f64,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub theta_hat: f64,
    pub alpha_f: Vec<f64>,
    pub eps_norm: f64,
    pub v: f64,
    /// Output value the controller latched at its last ED2 firing.
    pub ybar_tj: f64,
    pub ydot: f64,
}

/// Fields needed to recompute the summary from the raw series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub t_end: f64,
    pub h: f64,
    pub event_tol: f64,
    pub tail_start: f64,
    pub gamma_y: f64,
    pub gamma_ybar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ed1_count: usize,
    pub ed2_count: usize,
    pub ed1: DetectorStats,
    pub ed2: DetectorStats,
    pub tail_sup_y: f64,
    pub v0: f64,
    pub v_max: f64,
    pub lemma1_max_error: f64,
    pub lemma1_violations: usize,
    pub lemma1_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub summary: Summary,
    pub meta: RunMeta,
    pub lyapunov: LyapunovCert,
}

/// Summary statistics of a recorded series.
pub fn summarize(samples: &[Sample], events: &[EventRecord], meta: &RunMeta) -> Result<Summary, EngineError> {
    let stats = analysis::trigger_statistics(events);
    let tail_sup_y = analysis::tail_sup(samples, meta.tail_start)
        .map_err(|e| EngineError::Inconsistent(e.to_string()))?;
    let audit = analysis::lemma1_audit_samples(samples, meta.gamma_y, meta.gamma_ybar, meta.event_tol);
    Ok(Summary {
        ed1_count: stats.ed1.count,
        ed2_count: stats.ed2.count,
        ed1: stats.ed1,
        ed2: stats.ed2,
        tail_sup_y,
        v0: samples.first().map_or(f64::NAN, |s| s.v),
        v_max: samples.iter().map(|s| s.v).fold(f64::NEG_INFINITY, f64::max),
        lemma1_max_error: audit.max_error,
        lemma1_violations: audit.violations,
        lemma1_slack: audit.slack,
    })
}

/// Recomputes the summary from the raw series and checks it against the stored one.
pub fn replay_summary(result: &SimResult) -> Result<Summary, EngineError> {
    let replayed = summarize(&result.samples, &result.events, &result.meta)?;
    if !summaries_identical(&replayed, &result.summary) {
        return Err(EngineError::Inconsistent(format!(
            "stored summary {:?} differs from replay {:?}",
            result.summary, replayed
        )));
    }
    Ok(replayed)
}

// NaN-aware exact comparison: an empty series legitimately stores NaN for v0.
pub fn summaries_identical(a: &Summary, b: &Summary) -> bool {
    let fa = summary_floats(a);
    let fb = summary_floats(b);
    a.ed1_count == b.ed1_count
        && a.ed2_count == b.ed2_count
        && a.ed1.count == b.ed1.count
        && a.ed2.count == b.ed2.count
        && a.lemma1_violations == b.lemma1_violations
        && fa.iter().zip(&fb).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn summary_floats(s: &Summary) -> [f64; 9] {
    [
        s.ed1.min_gap,
        s.ed1.mean_gap,
        s.ed2.min_gap,
        s.ed2.mean_gap,
        s.tail_sup_y,
        s.v0,
        s.v_max,
        s.lemma1_max_error,
        s.lemma1_slack,
    ]
}

struct Loop<'a> {
    config: &'a SimConfig,
    design: ControllerDesign,
    cert: LyapunovCert,
    plant: PlantState,
    ctrl: ControllerState,
    samples: Vec<Sample>,
    events: Vec<EventRecord>,
}

impl<'a> Loop<'a> {
    fn plant_step(&self, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>, EngineError> {
        let model = &self.config.model;
        let u = self.ctrl.u_held;
        let res: Result<Vec<f64>, StepError> =
            rk4_step(|_, s: &[f64]| model.derivative(s, u).map_err(StepError::Plant), t, x, dt);
        match res {
            Ok(next) => Ok(next),
            Err(StepError::Plant(source)) => Err(EngineError::Plant { t, source }),
            Err(StepError::Numerics(e)) => Err(EngineError::NonFinite {
                t,
                signal: format!("plant state x ({e})"),
            }),
        }
    }

    fn record(&mut self) -> Result<(), EngineError> {
        let t = self.plant.t;
        let x = self.plant.x.clone();
        let xi = self.ctrl.xi_at(t);
        let zeta = self.ctrl.zeta_at(t);
        let theta_hat = self.ctrl.theta_hat_at(t);
        let alpha_f = self.ctrl.alpha_f_at(t);
        let theta = self.config.model.theta;
        let frame = analysis::diagnostic_frame(
            t,
            &x,
            &xi,
            &zeta,
            theta_hat,
            &alpha_f,
            theta,
            &self.design,
            &self.cert.p,
        )
        .map_err(|e| EngineError::NonFinite {
            t,
            signal: format!("diagnostic frame ({e})"),
        })?;
        let ydot = self
            .config
            .model
            .derivative(&x, self.ctrl.u_held)
            .map_err(|source| EngineError::Plant { t, source })?[0];
        let sample = Sample {
            t,
            y: x[0],
            ybar: self.plant.y_latched,
            u: self.ctrl.u_held,
            x,
            xi,
            zeta,
            theta_hat,
            alpha_f,
            eps_norm: frame.eps.iter().map(|e| e * e).sum::<f64>().sqrt(),
            v: frame.v,
            ybar_tj: self.ctrl.latched.ybar,
            ydot,
        };
        let finite = sample
            .x
            .iter()
            .chain(&sample.xi)
            .chain(&sample.zeta)
            .chain(&sample.alpha_f)
            .chain([sample.theta_hat, sample.u, sample.v, sample.ydot].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(EngineError::NonFinite {
                t,
                signal: "recorded sample".into(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    fn push_event(&mut self, ev: EventRecord) -> Result<(), EngineError> {
        self.events.push(ev);
        if self.events.len() > EVENT_STORM_LIMIT {
            return Err(EngineError::EventStorm {
                t: ev.t,
                limit: EVENT_STORM_LIMIT,
            });
        }
        Ok(())
    }

    fn fire_deadline(&mut self) -> Result<(), EngineError> {
        let t = self.plant.t;
        let cause = self
            .ctrl
            .deadline_condition
            .expect("a finite deadline always names its condition");
        let ev = self
            .ctrl
            .ed2_fire(&self.design, t, self.plant.y_latched, cause)
            .map_err(|source| EngineError::Controller { t, source })?;
        self.push_event(ev)
    }

    fn run(mut self) -> Result<SimResult, EngineError> {
        let cfg = self.config;
        let t_end = cfg.t_end;
        let gamma_y = cfg.thresholds.gamma_y;
        let gamma_ybar = cfg.thresholds.gamma_ybar;
        let mut step_index: usize = 0;
        let mut last_recorded = 0.0;

        self.record()?;
        while self.plant.t < t_end {
            let t0 = self.plant.t;
            let grid_end = (((step_index + 1) as f64) * cfg.h).min(t_end);
            let deadline = self.ctrl.deadline;
            let step_end = grid_end.min(deadline);
            let x0 = self.plant.x.clone();
            let x_end = self.plant_step(t0, &x0, step_end - t0)?;

            if ed1_condition(x_end[0], &self.plant, gamma_y) >= 0.0 {
                // plant-side crossing inside the step: rewind and bisect
                let mut failure = None;
                let t_star = {
                    let this = &self;
                    let g = |s: f64| match this.plant_step(t0, &x0, s - t0) {
                        Ok(x) => ed1_condition(x[0], &this.plant, gamma_y),
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    };
                    locate_crossing(g, t0, step_end, cfg.event_tol)
                };
                if let Some(e) = failure {
                    return Err(e);
                }
                let t_star = t_star.map_err(|source| EngineError::Localisation { t: t0, source })?;
                self.plant.x = self.plant_step(t0, &x0, t_star - t0)?;
                self.plant.t = t_star;
                self.record()?;

                let y_star = self.plant.y();
                let ev = ed1_fire(&mut self.plant, t_star, y_star)
                    .map_err(|source| EngineError::Plant { t: t_star, source })?;
                self.push_event(ev)?;
                if ed2_on_arrival(&self.ctrl, y_star, gamma_ybar) {
                    let ev = self
                        .ctrl
                        .ed2_fire(&self.design, t_star, y_star, Condition::Ybar)
                        .map_err(|source| EngineError::Controller { t: t_star, source })?;
                    self.push_event(ev)?;
                } else if t_star >= self.ctrl.deadline {
                    self.fire_deadline()?;
                }
                self.record()?;
                last_recorded = t_star;
            } else {
                self.plant.x = x_end;
                self.plant.t = step_end;
                if step_end >= deadline {
                    self.record()?;
                    self.fire_deadline()?;
                    self.record()?;
                    last_recorded = step_end;
                }
            }

            if self.plant.t >= grid_end {
                self.plant.t = grid_end;
                step_index += 1;
                if step_index.is_multiple_of(cfg.record_stride) && last_recorded != grid_end {
                    self.record()?;
                    last_recorded = grid_end;
                }
            }
        }
        if last_recorded != self.plant.t {
            self.record()?;
        }

        if self.plant.ed1_count + self.ctrl.ed2_count != self.events.len() {
            return Err(EngineError::Inconsistent(format!(
                "detector counters {} + {} disagree with {} logged events",
                self.plant.ed1_count,
                self.ctrl.ed2_count,
                self.events.len()
            )));
        }
        let meta = RunMeta {
            t_end,
            h: cfg.h,
            event_tol: cfg.event_tol,
            tail_start: cfg.tail_start(),
            gamma_y,
            gamma_ybar,
        };
        let summary = summarize(&self.samples, &self.events, &meta)?;
        Ok(SimResult {
            samples: self.samples,
            events: self.events,
            summary,
            meta,
            lyapunov: self.cert,
        })
    }
}

enum StepError {
    Plant(PlantError),
    Numerics(NumericsError),
}

impl From<NumericsError> for StepError {
    fn from(e: NumericsError) -> Self {
        StepError::Numerics(e)
    }
}

/// Deterministic closed-loop run on `[0, t_end]`.
pub fn run_simulation(config: &SimConfig) -> Result<SimResult, EngineError> {
    config.validate()?;
    let design = config.design();
    let cert = solve_lyapunov(&design.a_c).map_err(ConfigError::from)?;
    let plant = PlantState::new(config.init.x.clone());
    let ctrl = ControllerState::initialize(&design, &config.init.controller(), plant.y_latched)
        .map_err(|source| EngineError::Controller { t: 0.0, source })?;
    Loop {
        config,
        design,
        cert,
        plant,
        ctrl,
        samples: Vec::new(),
        events: Vec::new(),
    }
    .run()
}
