//! TOML run configuration.
//!
//! ```toml
//! [system]
//! theta = 1.0
//! theta_bar = 1.5
//! psi = ["cos(y)", "y + 1"]
//! lipschitz = [1.0, 1.0]
//! psi_bounds = [1.0, 1.0]
//!
//! [observer]
//! k = [5.0, 5.0]
//!
//! [controller]
//! c = [8.5, 5.5]
//! rho = [12.0]
//! phi = [10.0]
//! varrho = [0.16]
//! delta = 1.0
//! sigma = 0.1
//!
//! [triggers]
//! gamma_y = 0.05
//! gamma_ybar = 0.051
//! gamma_xi = 0.2
//! gamma_zeta = 0.2
//! gamma_h = 0.2
//! gamma_f = 0.2
//!
//! [init]
//! x = [5.0, -5.0]
//! xi = [0.0, 0.0]
//! zeta = [0.0, -4.0]
//! theta_hat = 4.0
//! alpha_f = [0.0]
//!
//! [sim]
//! t_end = 10.0
//! h = 0.01
//!
//! [analysis]
//! q = 50.0
//! tail_start = 5.0
//! ```
//!
//! `[sim].record_stride` (default 1), `[sim].event_tol` (default 1e-9) and
//! an optional `[baseline]` section are also accepted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use etcsim_core::baseline::{BaselineConfig, TriggerCheck};
use etcsim_core::engine::DEFAULT_EVENT_TOL;
use etcsim_core::{parse_expr, GainSet, InitialConditions, PlantModel, SimConfig, TriggerThresholds};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub system: SystemSection,
    pub observer: ObserverSection,
    pub controller: GainSet,
    pub triggers: TriggerThresholds,
    pub init: InitialConditions,
    pub sim: SimSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub baseline: Option<BaselineSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub theta: f64,
    pub theta_bar: f64,
    pub psi: Vec<String>,
    pub lipschitz: Vec<f64>,
    pub psi_bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSection {
    pub k: Vec<f64>,
}

fn default_stride() -> usize {
    1
}

fn default_tol() -> f64 {
    DEFAULT_EVENT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub h: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default = "default_tol")]
    pub event_tol: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub q: Option<f64>,
    pub tail_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default = "BaselineSection::default_gain")]
    pub k: f64,
    #[serde(default = "BaselineSection::default_gain")]
    pub c: f64,
    #[serde(default = "BaselineSection::default_gamma_c")]
    pub gamma_c: f64,
    #[serde(default = "BaselineSection::default_leak")]
    pub leak: f64,
    pub theta_hat0: Option<f64>,
    #[serde(default)]
    pub trigger_check: TriggerCheck,
}

impl BaselineSection {
    fn default_gain() -> f64 {
        4.0
    }
    fn default_gamma_c() -> f64 {
        0.06
    }
    fn default_leak() -> f64 {
        1.5
    }
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            k: 4.0,
            c: 4.0,
            gamma_c: 0.06,
            leak: 1.5,
            theta_hat0: None,
            trigger_check: TriggerCheck::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
}

/// A parsed configuration file with the hash of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: FileConfig,
    pub sha256: String,
    pub raw: toml::Table,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
    let raw: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))?;
    let file = from_table(&raw)?;
    Ok(LoadedConfig {
        file,
        sha256: sha256_hex(&bytes),
        raw,
    })
}

pub fn from_table(raw: &toml::Table) -> Result<FileConfig, CliError> {
    FileConfig::deserialize(toml::Value::Table(raw.clone()))
        .map_err(|e| CliError::Config(e.to_string()))
}

impl FileConfig {
    pub fn plant_model(&self) -> Result<PlantModel, CliError> {
        let psi = self
            .system
            .psi
            .iter()
            .enumerate()
            .map(|(i, src)| {
                parse_expr(src).map_err(|source| CliError::Expression {
                    index: i + 1,
                    source_text: src.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PlantModel {
            theta: self.system.theta,
            theta_bar: self.system.theta_bar,
            psi,
            lipschitz: self.system.lipschitz.clone(),
            psi_bounds: self.system.psi_bounds.clone(),
        })
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(h) = ov.h {
            self.sim.h = h;
        }
        if let Some(t_end) = ov.t_end {
            self.sim.t_end = t_end;
            if self.analysis.tail_start.is_some_and(|s| s >= t_end) {
                eprintln!("note: tail_start is past the new horizon, using t_end / 2");
                self.analysis.tail_start = None;
            }
        }
    }

    /// Builds and validates the simulation configuration.
    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let cfg = SimConfig {
            model: self.plant_model()?,
            k: self.observer.k.clone(),
            gains: self.controller.clone(),
            thresholds: self.triggers,
            init: self.init.clone(),
            t_end: self.sim.t_end,
            h: self.sim.h,
            record_stride: self.sim.record_stride,
            event_tol: self.sim.event_tol,
            q: self.analysis.q,
            tail_start: self.analysis.tail_start,
        };
        cfg.validate().map_err(CliError::Invalid)?;
        Ok(cfg)
    }

    pub fn baseline_config(&self) -> Result<BaselineConfig, CliError> {
        let section = self.baseline.clone().unwrap_or_default();
        let model = self.plant_model()?;
        let mut cfg = BaselineConfig::standard(
            model,
            self.sim.h,
            self.sim.t_end,
            self.init.x.clone(),
            section.theta_hat0.unwrap_or(self.init.theta_hat),
        );
        cfg.k_fb = section.k;
        cfg.c_fb = section.c;
        cfg.gamma_c = section.gamma_c;
        cfg.leak = section.leak;
        cfg.trigger_check = section.trigger_check;
        cfg.event_tol = self.sim.event_tol;
        cfg.tail_start = self.analysis.tail_start;
        cfg.validate()
            .map_err(|e| CliError::Unsupported(e.to_string()))?;
        Ok(cfg)
    }
}
