//! Grid sweeps over a base configuration.
//!
//! ```toml
//! [[axis]]
//! paths = ["triggers.gamma_y", "triggers.gamma_ybar"]
//! values = [[0.05, 0.051], [0.3, 0.31]]
//!
//! [[axis]]
//! paths = ["controller.c[0]"]
//! values = [[8.5], [10.0]]
//! ```
//!
//! Paths inside one axis move together row by row; axes combine as a
//! cartesian product with the last axis varying fastest.

use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use etcsim_core::run_simulation;

use crate::config::{self, Overrides};
use crate::output::{fmt_f64, Artifacts};
use crate::CliError;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SPEC_COPY: &str = "sweep_spec.toml";
pub const THREADS_ENV: &str = "ETCSIM_THREADS";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub axis: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub paths: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Segment>, CliError> {
    let bad = || CliError::Sweep(format!("malformed path {path:?}"));
    let mut out = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if key.is_empty() {
            return Err(bad());
        }
        out.push(Segment::Key(key.to_string()));
        while !rest.is_empty() {
            let close = rest.find(']').ok_or_else(bad)?;
            if !rest.starts_with('[') {
                return Err(bad());
            }
            let idx = rest[1..close].parse().map_err(|_| bad())?;
            out.push(Segment::Index(idx));
            rest = &rest[close + 1..];
        }
    }
    Ok(out)
}

/// Replaces the number at `path`; the target must already exist and be numeric.
pub fn set_path(table: &mut toml::Table, path: &str, value: f64) -> Result<(), CliError> {
    let segs = parse_path(path)?;
    let invalid = || CliError::Sweep(format!("path {path:?} does not name a number in the base config"));
    let Some((Segment::Key(first), rest)) = segs.split_first() else {
        return Err(invalid());
    };
    let mut cur = table.get_mut(first).ok_or_else(invalid)?;
    for seg in rest {
        cur = match (seg, cur) {
            (Segment::Key(k), toml::Value::Table(t)) => t.get_mut(k).ok_or_else(invalid)?,
            (Segment::Index(i), toml::Value::Array(a)) => a.get_mut(*i).ok_or_else(invalid)?,
            _ => return Err(invalid()),
        };
    }
    match cur {
        toml::Value::Float(_) | toml::Value::Integer(_) => {
            *cur = toml::Value::Float(value);
            Ok(())
        }
        _ => Err(invalid()),
    }
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Sweep(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.axis.is_empty() {
            return Err(CliError::Sweep("empty grid: no [[axis]] entries".into()));
        }
        for (a, axis) in self.axis.iter().enumerate() {
            if axis.paths.is_empty() || axis.values.is_empty() {
                return Err(CliError::Sweep(format!("empty grid: axis {a} has no paths or values")));
            }
            if let Some(row) = axis.values.iter().find(|r| r.len() != axis.paths.len()) {
                return Err(CliError::Sweep(format!(
                    "axis {a}: row {row:?} has {} values for {} paths",
                    row.len(),
                    axis.paths.len()
                )));
            }
        }
        Ok(())
    }

    pub fn paths(&self) -> Vec<&str> {
        self.axis.iter().flat_map(|a| a.paths.iter().map(String::as_str)).collect()
    }

    pub fn len(&self) -> usize {
        self.axis.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of grid point `index`, aligned with [`SweepSpec::paths`].
    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut rows = vec![0; self.axis.len()];
        for (a, axis) in self.axis.iter().enumerate().rev() {
            rows[a] = index % axis.values.len();
            index /= axis.values.len();
        }
        self.axis
            .iter()
            .zip(rows)
            .flat_map(|(axis, r)| axis.values[r].iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub values: Vec<f64>,
    pub status: &'static str,
    pub ed1_count: Option<usize>,
    pub ed2_count: Option<usize>,
    pub tail_sup_y: Option<f64>,
    pub ed1_min_gap: Option<f64>,
    pub ed2_min_gap: Option<f64>,
    pub lemma1_violations: Option<usize>,
    pub message: String,
}

fn run_point(base: &toml::Table, spec: &SweepSpec, paths: &[&str], index: usize, ov: &Overrides) -> SweepRow {
    let values = spec.point(index);
    let mut row = SweepRow {
        index,
        values: values.clone(),
        status: "ok",
        ed1_count: None,
        ed2_count: None,
        tail_sup_y: None,
        ed1_min_gap: None,
        ed2_min_gap: None,
        lemma1_violations: None,
        message: String::new(),
    };
    let mut table = base.clone();
    let cfg = paths
        .iter()
        .zip(&values)
        .try_for_each(|(p, v)| set_path(&mut table, p, *v))
        .and_then(|()| config::from_table(&table))
        .and_then(|mut f| {
            f.apply(ov);
            f.sim_config()
        });
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            row.status = "config_error";
            row.message = e.to_string();
            return row;
        }
    };
    match run_simulation(&cfg) {
        Ok(r) => {
            let s = r.summary;
            row.ed1_count = Some(s.ed1_count);
            row.ed2_count = Some(s.ed2_count);
            row.tail_sup_y = Some(s.tail_sup_y);
            row.ed1_min_gap = Some(s.ed1.min_gap);
            row.ed2_min_gap = Some(s.ed2.min_gap);
            row.lemma1_violations = Some(s.lemma1_violations);
        }
        Err(e) => {
            row.status = "numerical_error";
            row.message = e.to_string();
        }
    }
    row
}

pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        },
    }
}

pub fn run_grid(base: &toml::Table, spec: &SweepSpec, ov: &Overrides, threads: Option<usize>) -> Result<Vec<SweepRow>, CliError> {
    spec.validate()?;
    let paths = spec.paths();
    // Reject bad paths up front rather than once per grid point.
    let mut probe = base.clone();
    for (p, v) in paths.iter().zip(spec.point(0)) {
        set_path(&mut probe, p, v)?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Sweep(e.to_string()))?;
    Ok(pool.install(|| {
        (0..spec.len())
            .into_par_iter()
            .map(|i| run_point(base, spec, &paths, i, ov))
            .collect()
    }))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn sweep_csv(paths: &[&str], rows: &[SweepRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["index".to_string()];
    header.extend(paths.iter().map(|p| p.to_string()));
    header.extend(
        [
            "status",
            "ed1_count",
            "ed2_count",
            "tail_sup_y",
            "ed1_min_gap",
            "ed2_min_gap",
            "lemma1_violations",
            "message",
        ]
        .map(String::from),
    );
    w.write_record(&header).expect("in-memory csv");
    for r in rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(r.values.iter().map(|v| fmt_f64(*v)));
        rec.extend([
            r.status.to_string(),
            opt(r.ed1_count),
            opt(r.ed2_count),
            opt_f64(r.tail_sup_y),
            opt_f64(r.ed1_min_gap),
            opt_f64(r.ed2_min_gap),
            opt(r.lemma1_violations),
            r.message.clone(),
        ]);
        w.write_record(&rec).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn sweep(config_path: &Path, spec_path: &Path, out: &Path, ov: &Overrides) -> Result<Vec<SweepRow>, CliError> {
    let loaded = config::load(config_path)?;
    let spec_text = std::fs::read_to_string(spec_path).map_err(|source| CliError::Read {
        path: spec_path.display().to_string(),
        source,
    })?;
    let spec = SweepSpec::parse(&spec_text)?;
    let rows = run_grid(&loaded.raw, &spec, ov, thread_cap()?)?;
    let mut art = Artifacts::new(out);
    art.add(SWEEP_CSV, sweep_csv(&spec.paths(), &rows));
    art.add(SPEC_COPY, spec_text.into_bytes());
    art.write("sweep", config_path, &loaded.sha256)?;
    Ok(rows)
}
