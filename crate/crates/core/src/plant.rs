//! The uncertain output-feedback plant, its output hold and the plant-side
//! event detector (ED1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Condition, Detector, EventRecord};
use crate::expr::{EvalError, NonlinearityExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant order must be at least 1")]
    EmptyModel,
    #[error("{field} has length {found}, expected {expected}")]
    Dimension {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("|theta| = {theta} exceeds theta_bar = {theta_bar}")]
    ThetaOutOfBounds { theta: f64, theta_bar: f64 },
    #[error("{field}[{index}] = {value} must be strictly positive")]
    NonPositive {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("psi_{index}: {source}")]
    Eval {
        index: usize,
        #[source]
        source: EvalError,
    },
    #[error("ED1 fired at t = {t_star} which is not after the previous firing at {tbar_last}")]
    NonMonotoneFiring { t_star: f64, tbar_last: f64 },
}

/// `x_i' = x_{i+1} + theta psi_i(y)`, `x_n' = u + theta psi_n(y)`, `y = x_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub theta: f64,
    pub theta_bar: f64,
    pub psi: Vec<NonlinearityExpr>,
    /// Lipschitz constants `L_i` of each `psi_i`.
    pub lipschitz: Vec<f64>,
    /// Bounds `Psi_i` on `|d psi_i / dy|`.
    pub psi_bounds: Vec<f64>,
}

impl PlantModel {
    pub fn order(&self) -> usize {
        self.psi.len()
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let n = self.order();
        if n == 0 {
            return Err(PlantError::EmptyModel);
        }
        for (field, v) in [("lipschitz", &self.lipschitz), ("psi_bounds", &self.psi_bounds)] {
            if v.len() != n {
                return Err(PlantError::Dimension {
                    field,
                    expected: n,
                    found: v.len(),
                });
            }
            if let Some((index, &value)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
                return Err(PlantError::NonPositive { field, index, value });
            }
        }
        if !(self.theta.abs() <= self.theta_bar) {
            return Err(PlantError::ThetaOutOfBounds {
                theta: self.theta,
                theta_bar: self.theta_bar,
            });
        }
        Ok(())
    }

    /// Aggregate Lipschitz constant `sqrt(sum L_i^2)`.
    pub fn lipschitz_norm(&self) -> f64 {
        self.lipschitz.iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    pub fn psi_at(&self, y: f64) -> Result<Vec<f64>, PlantError> {
        self.psi
            .iter()
            .enumerate()
            .map(|(i, p)| p.eval(y).map_err(|source| PlantError::Eval { index: i + 1, source }))
            .collect()
    }

    pub fn psi1(&self, y: f64) -> Result<f64, PlantError> {
        self.psi[0]
            .eval(y)
            .map_err(|source| PlantError::Eval { index: 1, source })
    }

    pub fn derivative(&self, x: &[f64], u: f64) -> Result<Vec<f64>, PlantError> {
        plant_derivative(x, u, self)
    }
}

pub fn plant_derivative(x: &[f64], u: f64, model: &PlantModel) -> Result<Vec<f64>, PlantError> {
    let n = model.order();
    let psi = model.psi_at(x[0])?;
    Ok((0..n)
        .map(|i| {
            let drive = if i + 1 < n { x[i + 1] } else { u };
            drive + model.theta * psi[i]
        })
        .collect())
}

/// Continuous plant state plus the zero-order hold of the transmitted output.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub t: f64,
    pub x: Vec<f64>,
    /// `y(tbar_k)`, held until the next ED1 firing.
    pub y_latched: f64,
    pub tbar_last: f64,
    pub ed1_count: usize,
}

impl PlantState {
    /// Initial latch at `t = 0`; transmits `y(0)` without counting an event.
    pub fn new(x0: Vec<f64>) -> Self {
        let y0 = x0[0];
        Self {
            t: 0.0,
            x: x0,
            y_latched: y0,
            tbar_last: 0.0,
            ed1_count: 0,
        }
    }

    pub fn y(&self) -> f64 {
        self.x[0]
    }
}

/// `|y_now - y_latched| - gamma_y`; ED1 fires when this is `>= 0`.
pub fn ed1_condition(y_now: f64, state: &PlantState, gamma_y: f64) -> f64 {
    (y_now - state.y_latched).abs() - gamma_y
}

/// Latches `y_star` at `t_star` and reports the firing.
pub fn ed1_fire(
    state: &mut PlantState,
    t_star: f64,
    y_star: f64,
) -> Result<EventRecord, PlantError> {
    if !(t_star > state.tbar_last) {
        return Err(PlantError::NonMonotoneFiring {
            t_star,
            tbar_last: state.tbar_last,
        });
    }
    let e_y = (y_star - state.y_latched).abs();
    state.y_latched = y_star;
    state.tbar_last = t_star;
    state.ed1_count += 1;
    Ok(EventRecord {
        t: t_star,
        detector: Detector::Ed1,
        condition: Condition::Y,
        value: e_y,
    })
}
