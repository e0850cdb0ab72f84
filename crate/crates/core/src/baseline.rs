//! Full-state event-triggered backstepping used as the comparison loop for
//! the second-order example. The plant is monitored continuously (one
//! plant-to-controller transmission per base step), and the control is held
//! until the freshly computed law drifts by `gamma_c`.
//!
//! By default the crossing is localised by bisection inside each step.
//! [`TriggerCheck::Transmission`] evaluates the trigger only at base-grid
//! instants instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::linalg::{locate_crossing, rk4_step, NumericsError};
use crate::plant::{PlantError, PlantModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCheck {
    /// Bisect to the first crossing in continuous time.
    #[default]
    Bisection,
    /// Evaluate `|v - v(t_j)| >= gamma_c` only at base-grid instants.
    Transmission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub model: PlantModel,
    /// Gain on `z_2` in the control law.
    pub k_fb: f64,
    /// Gain on `x_1` in `alpha_1`.
    pub c_fb: f64,
    pub gamma_c: f64,
    /// Leakage in the adaptive law.
    pub leak: f64,
    pub h: f64,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub theta_hat0: f64,
    pub event_tol: f64,
    pub trigger_check: TriggerCheck,
    pub tail_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("the comparison loop only supports second-order plants, got n = {0}")]
    Unsupported(usize),
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("x0 has length {0}, expected 2")]
    Dimension(usize),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

impl BaselineConfig {
    /// Gains of the comparison design with the given plant and timing.
    pub fn standard(model: PlantModel, h: f64, t_end: f64, x0: Vec<f64>, theta_hat0: f64) -> Self {
        Self {
            model,
            k_fb: 4.0,
            c_fb: 4.0,
            gamma_c: 0.06,
            leak: 1.5,
            h,
            t_end,
            x0,
            theta_hat0,
            event_tol: 1e-9,
            trigger_check: TriggerCheck::Bisection,
            tail_start: None,
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        self.model.validate()?;
        if self.model.order() != 2 {
            return Err(BaselineError::Unsupported(self.model.order()));
        }
        if self.x0.len() != 2 {
            return Err(BaselineError::Dimension(self.x0.len()));
        }
        let positive = [
            ("gamma_c", self.gamma_c),
            ("h", self.h),
            ("t_end", self.t_end),
            ("event_tol", self.event_tol),
        ];
        for (field, value) in positive {
            if !(value > 0.0) {
                return Err(BaselineError::NonPositive { field, value });
            }
        }
        Ok(())
    }

    pub fn tail_start(&self) -> f64 {
        self.tail_start.unwrap_or(0.5 * self.t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineTerms {
    pub alpha1: f64,
    pub dalpha1_dx1: f64,
    pub dalpha1_dtheta: f64,
    pub z2: f64,
    pub theta_hat_dot: f64,
    pub v: f64,
}

/// Control law and adaptive law of the comparison design, evaluated on the full state.
pub fn baseline_terms(x: &[f64], theta_hat: f64, k_fb: f64, c_fb: f64, leak: f64) -> BaselineTerms {
    let (x1, x2) = (x[0], x[1]);
    let (s, c) = x1.sin_cos();
    let alpha1 = -c_fb * x1 - theta_hat * c;
    let dalpha1_dx1 = -c_fb + theta_hat * s;
    let dalpha1_dtheta = -c;
    let z1 = x1;
    let z2 = x2 - alpha1;
    let theta_hat_dot = x1 * c + z2 * (x1 + 1.0 - dalpha1_dx1 * c) - leak * theta_hat;
    let v = -k_fb * z2 - z1 + dalpha1_dx1 * x2 - theta_hat * (x1 + 1.0 - dalpha1_dx1)
        + dalpha1_dtheta * theta_hat_dot;
    BaselineTerms {
        alpha1,
        dalpha1_dx1,
        dalpha1_dtheta,
        z2,
        theta_hat_dot,
        v,
    }
}

/// `v` with the standard comparison gains.
pub fn baseline_v(x: &[f64], theta_hat: f64) -> f64 {
    baseline_terms(x, theta_hat, 4.0, 4.0, 1.5).v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub theta_hat: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineTrigger {
    pub t: f64,
    /// `|v(t*) - v(t_j)|` at firing.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineResult {
    pub samples: Vec<BaselineSample>,
    pub triggers: Vec<BaselineTrigger>,
    /// One transmission per base step.
    pub plant_to_controller: usize,
    pub controller_to_plant: usize,
    pub tail_sup_y: f64,
    pub max_abs_vdot: f64,
}

enum StepError {
    Plant(PlantError),
    Numerics,
}

impl From<NumericsError> for StepError {
    fn from(_: NumericsError) -> Self {
        StepError::Numerics
    }
}

struct BaselineLoop<'a> {
    cfg: &'a BaselineConfig,
    u: f64,
}

impl BaselineLoop<'_> {
    fn terms(&self, s: &[f64]) -> BaselineTerms {
        baseline_terms(&s[..2], s[2], self.cfg.k_fb, self.cfg.c_fb, self.cfg.leak)
    }

    /// Augmented state `[x1, x2, theta_hat]`.
    fn step(&self, t: f64, s: &[f64], dt: f64) -> Result<Vec<f64>, EngineError> {
        let res: Result<Vec<f64>, StepError> = rk4_step(
            |_, s: &[f64]| {
                let mut d = self.cfg.model.derivative(&s[..2], self.u).map_err(StepError::Plant)?;
                d.push(self.terms(s).theta_hat_dot);
                Ok(d)
            },
            t,
            s,
            dt,
        );
        res.map_err(|e| match e {
            StepError::Plant(source) => EngineError::Plant { t, source },
            StepError::Numerics => EngineError::NonFinite {
                t,
                signal: "baseline state".into(),
            },
        })
    }
}

pub fn run_baseline(cfg: &BaselineConfig) -> Result<BaselineResult, EngineError> {
    cfg.validate()
        .map_err(|e| EngineError::Inconsistent(format!("invalid baseline configuration: {e}")))?;
    let mut state = vec![cfg.x0[0], cfg.x0[1], cfg.theta_hat0];
    let mut lp = BaselineLoop { cfg, u: 0.0 };
    let mut v_j = lp.terms(&state).v;
    lp.u = v_j;
    let mut t = 0.0;
    let mut step_index = 0usize;
    let mut samples = vec![BaselineSample {
        t,
        x: state[..2].to_vec(),
        theta_hat: state[2],
        u: lp.u,
        v: v_j,
    }];
    let mut triggers = Vec::new();
    let mut max_abs_vdot: f64 = 0.0;

    while t < cfg.t_end {
        let grid_end = (((step_index + 1) as f64) * cfg.h).min(cfg.t_end);
        let s0 = state.clone();
        let v0 = lp.terms(&s0).v;
        let s_end = lp.step(t, &s0, grid_end - t)?;
        let v_end = lp.terms(&s_end).v;
        if !v_end.is_finite() {
            return Err(EngineError::NonFinite {
                t: grid_end,
                signal: "baseline control v".into(),
            });
        }
        let g = |v: f64| (v - v_j).abs() - cfg.gamma_c;
        let bisect = cfg.trigger_check == TriggerCheck::Bisection;
        let (t_next, s_next) = if bisect && g(v_end) >= 0.0 {
            let mut failure = None;
            let t_star = locate_crossing(
                |s| match lp.step(t, &s0, s - t) {
                    Ok(st) => g(lp.terms(&st).v),
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                },
                t,
                grid_end,
                cfg.event_tol,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let t_star = t_star.map_err(|source| EngineError::Localisation { t, source })?;
            (t_star, lp.step(t, &s0, t_star - t)?)
        } else {
            (grid_end, s_end)
        };
        let v_next = lp.terms(&s_next).v;
        if t_next > t {
            max_abs_vdot = max_abs_vdot.max((v_next - v0).abs() / (t_next - t));
        }
        state = s_next;
        t = t_next;
        if g(v_next) >= 0.0 {
            samples.push(BaselineSample {
                t,
                x: state[..2].to_vec(),
                theta_hat: state[2],
                u: lp.u,
                v: v_next,
            });
            triggers.push(BaselineTrigger {
                t,
                value: (v_next - v_j).abs(),
            });
            v_j = v_next;
            lp.u = v_j;
        }
        if t >= grid_end {
            t = grid_end;
            step_index += 1;
        }
        samples.push(BaselineSample {
            t,
            x: state[..2].to_vec(),
            theta_hat: state[2],
            u: lp.u,
            v: v_next,
        });
    }

    let tail_start = cfg.tail_start();
    let tail_sup_y = samples
        .iter()
        .filter(|s| s.t >= tail_start)
        .map(|s| s.x[0].abs())
        .fold(0.0, f64::max);
    Ok(BaselineResult {
        samples,
        controller_to_plant: triggers.len(),
        triggers,
        plant_to_controller: step_index,
        tail_sup_y,
        max_abs_vdot,
    })
}
