//! Simulation core for event-triggered adaptive output-feedback control of
//! uncertain nonlinear systems in output-feedback form.
//!
//! The plant transmits its output only when it has drifted by `gamma_y` from
//! the last transmission (ED1). The controller runs an observer, an adaptive
//! law and dynamic-surface filters whose right-hand sides are frozen at its
//! own sampling instants, and resamples (ED2) when the received output moved
//! by `gamma_ybar` or any of its states drifted past its threshold.

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baseline;
pub mod controller;
pub mod engine;
pub mod expr;
pub mod linalg;
pub mod plant;

pub use analysis::{
    advise_parameters, invariance_check, lemma1_audit, practical_bound, trigger_statistics, AdvisorOptions,
    AdvisorReport, CheckKind, ConstraintResult, DetectorStats,
};
pub use baseline::{run_baseline, BaselineConfig, BaselineResult, TriggerCheck};
pub use controller::{GainSet, TriggerThresholds};
pub use engine::{
    replay_summary, run_simulation, Condition, ConfigError, Detector, EngineError, EventRecord, InitialConditions,
    Sample, SimConfig, SimResult, Summary,
};
pub use expr::{parse_expr, NonlinearityExpr};
pub use plant::PlantModel;
