//! Controller-side stack: observer, adaptive law, dynamic filters, virtual
//! inputs and the stabilising law, all driven by values sampled at the last
//! ED2 instant `t_j`, plus the ED2 detector itself.
//!
//! Between ED2 firings every controller state moves along a straight line,
//! `s(t) = s(t_j) + s_dot (t - t_j)`, so the threshold crossings of the
//! `xi`, `zeta`, `theta_hat` and `alpha_f` errors are known in closed form
//! at `t_j`. Only the transmitted-output condition has to wait for arrivals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Condition, Detector, EventRecord};
use crate::expr::{EvalError, NonlinearityExpr};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("{field} has length {found}, expected {expected}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: String, value: f64 },
    #[error("rho_{index} = {rho} violates rho_i >= {offset} + phi_i + varrho_i = {bound}")]
    FilterGain {
        index: usize,
        rho: f64,
        offset: f64,
        bound: f64,
    },
    #[error("gamma_ybar = {gamma_ybar} must exceed gamma_y = {gamma_y}")]
    ThresholdOrder { gamma_y: f64, gamma_ybar: f64 },
    #[error("controller needs order n >= 2, got {0}")]
    OrderTooSmall(usize),
    #[error("psi_{index}: {source}")]
    Eval {
        index: usize,
        #[source]
        source: EvalError,
    },
    #[error("non-finite {signal} recomputed at t = {t}")]
    NonFinite { signal: &'static str, t: f64 },
    #[error("ED2 fire at t = {t_star} precedes the last sample t_j = {t_j}")]
    Backwards { t_star: f64, t_j: f64 },
}

/// Design gains. Filter-related vectors are indexed `2..=n` and stored from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub c: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub varrho: Vec<f64>,
    pub delta: f64,
    pub sigma: f64,
}

/// Offset of the filter-gain bound enforced when a configuration is loaded.
pub const LOAD_FILTER_OFFSET: f64 = 1.5;
/// Offset used throughout the stability argument; reported by the advisor.
pub const STRICT_FILTER_OFFSET: f64 = 2.0;

impl GainSet {
    pub fn validate(&self, n: usize) -> Result<(), ControllerError> {
        if n < 2 {
            return Err(ControllerError::OrderTooSmall(n));
        }
        let check_len = |field, v: &Vec<f64>, expected| {
            if v.len() == expected {
                Ok(())
            } else {
                Err(ControllerError::Dimension {
                    field,
                    expected,
                    found: v.len(),
                })
            }
        };
        check_len("c", &self.c, n)?;
        check_len("rho", &self.rho, n - 1)?;
        check_len("phi", &self.phi, n - 1)?;
        check_len("varrho", &self.varrho, n - 1)?;

        let named = [("c", &self.c, 1), ("rho", &self.rho, 2), ("phi", &self.phi, 2), ("varrho", &self.varrho, 2)];
        for (name, v, base) in named {
            for (i, &value) in v.iter().enumerate() {
                if !(value > 0.0) {
                    return Err(ControllerError::NonPositive {
                        field: format!("{name}_{}", i + base),
                        value,
                    });
                }
            }
        }
        for (field, value) in [("delta", self.delta), ("sigma", self.sigma)] {
            if !(value > 0.0) {
                return Err(ControllerError::NonPositive {
                    field: field.into(),
                    value,
                });
            }
        }
        for i in 0..n - 1 {
            let bound = LOAD_FILTER_OFFSET + self.phi[i] + self.varrho[i];
            if self.rho[i] < bound {
                return Err(ControllerError::FilterGain {
                    index: i + 2,
                    rho: self.rho[i],
                    offset: LOAD_FILTER_OFFSET,
                    bound,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerThresholds {
    pub gamma_y: f64,
    pub gamma_ybar: f64,
    pub gamma_xi: f64,
    pub gamma_zeta: f64,
    pub gamma_h: f64,
    pub gamma_f: f64,
}

impl TriggerThresholds {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let all = [
            ("gamma_y", self.gamma_y),
            ("gamma_ybar", self.gamma_ybar),
            ("gamma_xi", self.gamma_xi),
            ("gamma_zeta", self.gamma_zeta),
            ("gamma_h", self.gamma_h),
            ("gamma_f", self.gamma_f),
        ];
        for (field, value) in all {
            if !(value > 0.0) {
                return Err(ControllerError::NonPositive {
                    field: field.into(),
                    value,
                });
            }
        }
        if !(self.gamma_ybar > self.gamma_y) {
            return Err(ControllerError::ThresholdOrder {
                gamma_y: self.gamma_y,
                gamma_ybar: self.gamma_ybar,
            });
        }
        Ok(())
    }

    /// Output-error bound `gamma_y + gamma_ybar` between `y(t)` and `ybar(t_j)`.
    pub fn gamma_tilde(&self) -> f64 {
        self.gamma_y + self.gamma_ybar
    }
}

/// Everything the controller side knows: observer gains, design gains,
/// thresholds and the nonlinearities. Never the true parameter.
#[derive(Debug, Clone)]
pub struct ControllerDesign {
    pub k: Vec<f64>,
    pub a_c: Mat,
    pub gains: GainSet,
    pub thresholds: TriggerThresholds,
    pub psi: Vec<NonlinearityExpr>,
}

impl ControllerDesign {
    pub fn order(&self) -> usize {
        self.k.len()
    }
}

/// Values sampled at the last ED2 instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Latched {
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub theta_hat: f64,
    /// `alpha_{2f} .. alpha_{nf}`
    pub alpha_f: Vec<f64>,
    pub ybar: f64,
    pub t_j: f64,
}

/// Right-hand sides held constant on `[t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Derivs {
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub theta_hat: f64,
    pub alpha_f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub latched: Latched,
    pub derivs: Derivs,
    /// Virtual inputs `alpha_1 .. alpha_{n-1}` evaluated on the latched tuple.
    pub alpha: Vec<f64>,
    pub u_held: f64,
    pub deadline: f64,
    /// Which error reaches its threshold first at `deadline`.
    pub deadline_condition: Option<Condition>,
    pub ed2_count: usize,
}

/// Initial controller states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerInit {
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub theta_hat: f64,
    pub alpha_f: Vec<f64>,
}

fn eval_psi(psi: &[NonlinearityExpr], y: f64) -> Result<Vec<f64>, ControllerError> {
    psi.iter()
        .enumerate()
        .map(|(i, p)| p.eval(y).map_err(|source| ControllerError::Eval { index: i + 1, source }))
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn affine(base: &[f64], slope: &[f64], dt: f64) -> Vec<f64> {
    base.iter().zip(slope).map(|(b, s)| b + s * dt).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `xi_dot = A_c xi(t_j) + k ybar(t_j) + b u`, `zeta_dot = A_c zeta(t_j) + psi(ybar(t_j))`.
pub fn observer_derivatives(
    latched: &Latched,
    u: f64,
    a_c: &Mat,
    k: &[f64],
    psi: &[NonlinearityExpr],
) -> Result<(Vec<f64>, Vec<f64>), ControllerError> {
    let n = k.len();
    let psi_val = eval_psi(psi, latched.ybar)?;
    let mut xi_dot = vec![0.0; n];
    let mut zeta_dot = vec![0.0; n];
    for r in 0..n {
        let mut ax = 0.0;
        let mut az = 0.0;
        for c in 0..n {
            ax += a_c[(r, c)] * latched.xi[c];
            az += a_c[(r, c)] * latched.zeta[c];
        }
        xi_dot[r] = ax + k[r] * latched.ybar;
        zeta_dot[r] = az + psi_val[r];
    }
    xi_dot[n - 1] += u;
    Ok((xi_dot, zeta_dot))
}

/// `theta_hat_dot = ybar (psi_1(ybar) + zeta_2) - delta theta_hat`, all at `t_j`.
pub fn adaptive_derivative(
    latched: &Latched,
    delta: f64,
    psi1: &NonlinearityExpr,
) -> Result<f64, ControllerError> {
    let p1 = psi1
        .eval(latched.ybar)
        .map_err(|source| ControllerError::Eval { index: 1, source })?;
    Ok(latched.ybar * (p1 + latched.zeta[1]) - delta * latched.theta_hat)
}

/// `alpha_if_dot = rho_i (alpha_{i-1}(t_j) - alpha_if(t_j))` for `i = 2..=n`.
pub fn filter_derivative(latched: &Latched, rho: &[f64], alpha: &[f64]) -> Vec<f64> {
    latched
        .alpha_f
        .iter()
        .zip(rho)
        .zip(alpha)
        .map(|((af, r), a_prev)| r * (-af + a_prev))
        .collect()
}

/// Virtual inputs `alpha_1 .. alpha_{n-1}` from the latched tuple.
pub fn virtual_inputs(
    latched: &Latched,
    gains: &GainSet,
    k: &[f64],
    psi1: &NonlinearityExpr,
) -> Result<Vec<f64>, ControllerError> {
    let n = k.len();
    let ybar = latched.ybar;
    let p1 = psi1
        .eval(ybar)
        .map_err(|source| ControllerError::Eval { index: 1, source })?;
    let mut alpha = Vec::with_capacity(n - 1);
    alpha.push(-gains.c[0] * ybar - latched.theta_hat * (p1 + latched.zeta[1]));
    // step i (1-based) uses z_i = xi_i - alpha_if and upsilon_i = alpha_if - alpha_{i-1}
    for i in 2..n {
        let af = latched.alpha_f[i - 2];
        let z = latched.xi[i - 1] - af;
        let upsilon = af - alpha[i - 2];
        alpha.push(-gains.c[i - 1] * z - k[i - 1] * (ybar - latched.xi[0]) - gains.rho[i - 2] * upsilon);
    }
    Ok(alpha)
}

/// `u = -c_n z_n(t_j) - k_n (ybar(t_j) - xi_1(t_j)) - rho_n upsilon_n(t_j)`.
pub fn control_law(latched: &Latched, gains: &GainSet, alpha: &[f64], k_n: f64) -> f64 {
    let n = gains.c.len();
    let af_n = latched.alpha_f[n - 2];
    let z_n = latched.xi[n - 1] - af_n;
    let upsilon_n = af_n - alpha[n - 2];
    -gains.c[n - 1] * z_n - k_n * (latched.ybar - latched.xi[0]) - gains.rho[n - 2] * upsilon_n
}

/// Earliest of the four closed-form threshold crossings; `+inf` when every
/// derivative block is zero.
pub fn compute_deadline(
    latched: &Latched,
    derivs: &Derivs,
    thresholds: &TriggerThresholds,
) -> (f64, Option<Condition>) {
    let candidates = [
        (Condition::Xi, thresholds.gamma_xi, norm(&derivs.xi)),
        (Condition::Zeta, thresholds.gamma_zeta, norm(&derivs.zeta)),
        (Condition::ThetaHat, thresholds.gamma_h, derivs.theta_hat.abs()),
        (Condition::AlphaF, thresholds.gamma_f, norm(&derivs.alpha_f)),
    ];
    let mut best = (f64::INFINITY, None);
    for (cond, gamma, rate) in candidates {
        if rate > 0.0 {
            let dt = gamma / rate;
            if dt < best.0 {
                best = (dt, Some(cond));
            }
        }
    }
    (latched.t_j + best.0, best.1)
}

/// Transmitted-output condition, checked only when a new `ybar` arrives.
pub fn ed2_on_arrival(state: &ControllerState, ybar_new: f64, gamma_ybar: f64) -> bool {
    (ybar_new - state.latched.ybar).abs() >= gamma_ybar
}

impl ControllerState {
    /// Latches the initial conditions at `t = 0` and computes `u(0)`; not counted as an event.
    pub fn initialize(
        design: &ControllerDesign,
        init: &ControllerInit,
        ybar0: f64,
    ) -> Result<Self, ControllerError> {
        let latched = Latched {
            xi: init.xi.clone(),
            zeta: init.zeta.clone(),
            theta_hat: init.theta_hat,
            alpha_f: init.alpha_f.clone(),
            ybar: ybar0,
            t_j: 0.0,
        };
        let mut state = ControllerState {
            latched,
            derivs: Derivs::default(),
            alpha: Vec::new(),
            u_held: 0.0,
            deadline: f64::INFINITY,
            deadline_condition: None,
            ed2_count: 0,
        };
        state.recompute(design)?;
        Ok(state)
    }

    pub fn xi_at(&self, t: f64) -> Vec<f64> {
        affine(&self.latched.xi, &self.derivs.xi, t - self.latched.t_j)
    }

    pub fn zeta_at(&self, t: f64) -> Vec<f64> {
        affine(&self.latched.zeta, &self.derivs.zeta, t - self.latched.t_j)
    }

    pub fn theta_hat_at(&self, t: f64) -> f64 {
        self.latched.theta_hat + self.derivs.theta_hat * (t - self.latched.t_j)
    }

    pub fn alpha_f_at(&self, t: f64) -> Vec<f64> {
        affine(&self.latched.alpha_f, &self.derivs.alpha_f, t - self.latched.t_j)
    }

    /// Sampling errors `(e_xi, e_zeta, e_h, e_f)` at `t`.
    pub fn errors_at(&self, t: f64) -> [f64; 4] {
        [
            distance(&self.xi_at(t), &self.latched.xi),
            distance(&self.zeta_at(t), &self.latched.zeta),
            (self.theta_hat_at(t) - self.latched.theta_hat).abs(),
            distance(&self.alpha_f_at(t), &self.latched.alpha_f),
        ]
    }

    fn error_for(&self, cond: Condition, t: f64, ybar_now: f64) -> f64 {
        let e = self.errors_at(t);
        match cond {
            Condition::Ybar => (ybar_now - self.latched.ybar).abs(),
            Condition::Xi => e[0],
            Condition::Zeta => e[1],
            Condition::ThetaHat => e[2],
            Condition::AlphaF => e[3],
            Condition::Y => f64::NAN,
        }
    }

    fn recompute(&mut self, design: &ControllerDesign) -> Result<(), ControllerError> {
        let n = design.order();
        let t = self.latched.t_j;
        let alpha = virtual_inputs(&self.latched, &design.gains, &design.k, &design.psi[0])?;
        let u = control_law(&self.latched, &design.gains, &alpha, design.k[n - 1]);
        if !u.is_finite() {
            return Err(ControllerError::NonFinite { signal: "u", t });
        }
        let (xi_dot, zeta_dot) =
            observer_derivatives(&self.latched, u, &design.a_c, &design.k, &design.psi)?;
        let theta_hat_dot = adaptive_derivative(&self.latched, design.gains.delta, &design.psi[0])?;
        let alpha_f_dot = filter_derivative(&self.latched, &design.gains.rho, &alpha);
        let derivs = Derivs {
            xi: xi_dot,
            zeta: zeta_dot,
            theta_hat: theta_hat_dot,
            alpha_f: alpha_f_dot,
        };
        let finite = derivs
            .xi
            .iter()
            .chain(&derivs.zeta)
            .chain(&derivs.alpha_f)
            .chain(std::iter::once(&derivs.theta_hat))
            .chain(&alpha)
            .all(|v| v.is_finite());
        if !finite {
            return Err(ControllerError::NonFinite {
                signal: "controller derivative",
                t,
            });
        }
        let (deadline, cond) = compute_deadline(&self.latched, &derivs, &design.thresholds);
        self.alpha = alpha;
        self.u_held = u;
        self.derivs = derivs;
        self.deadline = deadline;
        self.deadline_condition = cond;
        Ok(())
    }

    /// Advances every state to `t_star`, re-latches them together with the
    /// current `ybar`, and recomputes the control and the next deadline.
    pub fn ed2_fire(
        &mut self,
        design: &ControllerDesign,
        t_star: f64,
        ybar_now: f64,
        cause: Condition,
    ) -> Result<EventRecord, ControllerError> {
        if t_star < self.latched.t_j {
            return Err(ControllerError::Backwards {
                t_star,
                t_j: self.latched.t_j,
            });
        }
        let value = self.error_for(cause, t_star, ybar_now);
        self.latched = Latched {
            xi: self.xi_at(t_star),
            zeta: self.zeta_at(t_star),
            theta_hat: self.theta_hat_at(t_star),
            alpha_f: self.alpha_f_at(t_star),
            ybar: ybar_now,
            t_j: t_star,
        };
        self.recompute(design)?;
        self.ed2_count += 1;
        Ok(EventRecord {
            t: t_star,
            detector: Detector::Ed2,
            condition: cause,
            value,
        })
    }
}
