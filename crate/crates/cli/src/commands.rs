use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use etcsim_core::analysis::{inf_as_string, InvarianceReport, Lemma1Audit};
use etcsim_core::engine::{summaries_identical, summarize, RunMeta};
use etcsim_core::{
    advise_parameters, invariance_check, lemma1_audit, practical_bound, run_baseline, run_simulation,
    AdvisorOptions, AdvisorReport, EngineError, SimResult, Summary, TriggerCheck,
};

use crate::config::{self, FileConfig, Overrides};
use crate::output::{self, Artifacts};
use crate::CliError;

pub const TRAJECTORY: &str = "trajectory.csv";
pub const EVENTS: &str = "events.csv";
pub const SUMMARY: &str = "summary.json";
pub const DIAGNOSTIC: &str = "diagnostic.json";
pub const ADVISOR: &str = "advisor.json";
pub const COMPARISON: &str = "comparison.json";
pub const BASELINE_TRAJECTORY: &str = "baseline_trajectory.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticalBound {
    pub tail_start: f64,
    pub sup_abs_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZenoReport {
    pub event_tol: f64,
    #[serde(with = "inf_as_string")]
    pub ed1_min_gap: f64,
    #[serde(with = "inf_as_string")]
    pub ed2_min_gap: f64,
    /// Both minimum gaps are positive and at least `event_tol`.
    pub excluded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovInfo {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub residual_norm: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryDoc {
    pub summary: Summary,
    pub meta: RunMeta,
    pub lemma1: Lemma1Audit,
    pub invariance: Option<InvarianceReport>,
    pub practical_bound: PracticalBound,
    pub zeno: ZenoReport,
    pub lyapunov: LyapunovInfo,
}

/// The part of `summary.json` that replay needs.
#[derive(Debug, Clone, Deserialize)]
pub struct StoredSummary {
    pub summary: Summary,
    pub meta: RunMeta,
}

#[derive(Debug, Serialize)]
struct Diagnostic {
    error: String,
    time: Option<f64>,
}

pub fn zeno_report(summary: &Summary, event_tol: f64) -> ZenoReport {
    let ok = |g: f64| g > 0.0 && g >= event_tol;
    ZenoReport {
        event_tol,
        ed1_min_gap: summary.ed1.min_gap,
        ed2_min_gap: summary.ed2.min_gap,
        excluded: ok(summary.ed1.min_gap) && ok(summary.ed2.min_gap),
    }
}

pub fn summary_doc(result: &SimResult, file: &FileConfig) -> Result<SummaryDoc, CliError> {
    let meta = result.meta.clone();
    let sup = practical_bound(result, meta.tail_start)
        .map_err(|e| CliError::Numerical(EngineError::Inconsistent(e.to_string())))?;
    Ok(SummaryDoc {
        summary: result.summary.clone(),
        lemma1: lemma1_audit(result, &file.triggers),
        invariance: file.analysis.q.map(|q| invariance_check(result, q)),
        practical_bound: PracticalBound {
            tail_start: meta.tail_start,
            sup_abs_y: sup,
        },
        zeno: zeno_report(&result.summary, meta.event_tol),
        lyapunov: LyapunovInfo {
            lambda_min: result.lyapunov.lambda_min,
            lambda_max: result.lyapunov.lambda_max,
            residual_norm: result.lyapunov.residual_norm,
        },
        meta,
    })
}

fn write_diagnostic(out: &Path, err: &EngineError) {
    let diag = Diagnostic {
        error: err.to_string(),
        time: err.time(),
    };
    // Best effort: the numerical error is what gets reported.
    if std::fs::create_dir_all(out).is_ok() {
        let _ = output::write_file(&out.join(DIAGNOSTIC), &output::json_bytes(&diag));
    }
}

fn load_with(config_path: &Path, ov: &Overrides) -> Result<(FileConfig, String), CliError> {
    let loaded = config::load(config_path)?;
    let mut file = loaded.file;
    file.apply(ov);
    Ok((file, loaded.sha256))
}

pub fn simulate(config_path: &Path, out: &Path, ov: &Overrides) -> Result<SummaryDoc, CliError> {
    let (file, sha) = load_with(config_path, ov)?;
    let cfg = file.sim_config()?;
    let result = run_simulation(&cfg).inspect_err(|e| write_diagnostic(out, e))?;
    let doc = summary_doc(&result, &file)?;
    let mut art = Artifacts::new(out);
    art.add(TRAJECTORY, output::trajectory_csv(&result.samples, cfg.order()));
    art.add(EVENTS, output::events_csv(&result.events));
    art.add(SUMMARY, output::json_bytes(&doc));
    art.write("simulate", config_path, &sha)?;
    Ok(doc)
}

/// Recomputes the summary of a `simulate` output directory from its CSVs.
pub fn replay(out: &Path) -> Result<Summary, CliError> {
    let path = out.join(SUMMARY);
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let stored: StoredSummary =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let samples = output::read_trajectory(&out.join(TRAJECTORY))?;
    let events = output::read_events(&out.join(EVENTS))?;
    let replayed = summarize(&samples, &events, &stored.meta)?;
    if !summaries_identical(&replayed, &stored.summary) {
        return Err(CliError::Replay(format!(
            "stored {:?}, recomputed {:?}",
            stored.summary, replayed
        )));
    }
    Ok(replayed)
}

pub struct AdviseArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub q: Option<f64>,
    pub c_delta: f64,
    pub c_small_delta: f64,
    pub c_bar_target: Option<f64>,
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<(), CliError> {
    if expected == found {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field} has length {found}, expected {expected}")))
    }
}

pub fn advise(args: &AdviseArgs) -> Result<AdvisorReport, CliError> {
    let loaded = config::load(&args.config)?;
    let file = &loaded.file;
    let model = file.plant_model()?;
    model
        .validate()
        .map_err(|e| CliError::Invalid(e.into()))?;
    let n = model.order();
    if n < 2 {
        return Err(CliError::Config(format!("the controller needs n >= 2, got {n}")));
    }
    let g = &file.controller;
    check_len("k", n, file.observer.k.len())?;
    check_len("c", n, g.c.len())?;
    check_len("rho", n - 1, g.rho.len())?;
    check_len("phi", n - 1, g.phi.len())?;
    check_len("varrho", n - 1, g.varrho.len())?;
    let q = args
        .q
        .or(file.analysis.q)
        .ok_or_else(|| CliError::Config("q is required (pass --q or set [analysis].q)".into()))?;
    let options = AdvisorOptions {
        c_big_delta: args.c_delta,
        c_small_delta: args.c_small_delta,
        c_bar_target: args.c_bar_target,
    };
    let report = advise_parameters(&model, &file.observer.k, g, &file.triggers, q, &options)?;
    let mut art = Artifacts::new(&args.out);
    art.add(ADVISOR, output::json_bytes(&report));
    art.write("advise", &args.config, &loaded.sha256)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCounts {
    /// Controller-to-plant transmissions.
    pub c2p: usize,
    /// Plant-to-controller transmissions.
    pub p2c: usize,
    pub tail_sup_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OursCounts {
    pub c2p: usize,
    pub p2c: usize,
    pub ed1_count: usize,
    pub ed2_count: usize,
    pub tail_sup_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ours: OursCounts,
    pub baseline: LoopCounts,
    pub baseline_trigger_check: TriggerCheck,
    pub tail_start: f64,
    /// `ours.tail_sup_y / baseline.tail_sup_y`.
    pub tail_ratio: f64,
}

/// The comparison loop is derived for `psi = (cos y, y + 1)` only.
fn check_example_shape(file: &FileConfig) -> Result<(), CliError> {
    let model = file.plant_model()?;
    if model.order() != 2 {
        return Err(CliError::Unsupported(format!(
            "the baseline loop needs a second-order plant, got n = {}",
            model.order()
        )));
    }
    let reference: [fn(f64) -> f64; 2] = [f64::cos, |y| y + 1.0];
    for i in 0..=200 {
        let y = -10.0 + 0.1 * i as f64;
        for (k, f) in reference.iter().enumerate() {
            let got = model.psi[k].eval(y).map_err(|e| CliError::Unsupported(e.to_string()))?;
            if (got - f(y)).abs() > 1e-12 * (1.0 + f(y).abs()) {
                return Err(CliError::Unsupported(format!(
                    "the baseline loop needs psi = (cos(y), y + 1); psi[{}] differs at y = {y}",
                    k + 1
                )));
            }
        }
    }
    Ok(())
}

pub fn compare_baseline(config_path: &Path, out: &Path, ov: &Overrides) -> Result<Comparison, CliError> {
    let (file, sha) = load_with(config_path, ov)?;
    check_example_shape(&file)?;
    let cfg = file.sim_config()?;
    let bcfg = file.baseline_config()?;
    let ours = run_simulation(&cfg).inspect_err(|e| write_diagnostic(out, e))?;
    let base = run_baseline(&bcfg).inspect_err(|e| write_diagnostic(out, e))?;
    let s = &ours.summary;
    let cmp = Comparison {
        ours: OursCounts {
            c2p: s.ed2_count,
            p2c: s.ed1_count,
            ed1_count: s.ed1_count,
            ed2_count: s.ed2_count,
            tail_sup_y: s.tail_sup_y,
        },
        baseline: LoopCounts {
            c2p: base.controller_to_plant,
            p2c: base.plant_to_controller,
            tail_sup_y: base.tail_sup_y,
        },
        baseline_trigger_check: bcfg.trigger_check,
        tail_start: cfg.tail_start(),
        tail_ratio: s.tail_sup_y / base.tail_sup_y,
    };
    let mut art = Artifacts::new(out);
    art.add(COMPARISON, output::json_bytes(&cmp));
    art.add(BASELINE_TRAJECTORY, output::baseline_csv(&base.samples));
    art.write("compare-baseline", config_path, &sha)?;
    Ok(cmp)
}
