//! CSV and JSON artifacts.
//!
//! Floats are written as `{:.16e}` (17 significant digits) so every value
//! parses back to the same `f64`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use etcsim_core::baseline::BaselineSample;
use etcsim_core::{Condition, Detector, EventRecord, Sample};

use crate::config::sha256_hex;
use crate::CliError;

pub const TOOL_NAME: &str = "etcsim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend(["y", "ybar", "u"].map(String::from));
    h.extend((1..=n).map(|i| format!("xi{i}")));
    h.extend((1..=n).map(|i| format!("zeta{i}")));
    h.push("theta_hat".into());
    h.extend((2..=n).map(|i| format!("alpha_f{i}")));
    h.extend(["eps_norm", "V", "ybar_tj", "ydot"].map(String::from));
    h
}

pub fn trajectory_csv(samples: &[Sample], n: usize) -> Vec<u8> {
    let rows = samples.iter().map(|s| {
        let mut r = vec![s.t];
        r.extend(&s.x);
        r.extend([s.y, s.ybar, s.u]);
        r.extend(&s.xi);
        r.extend(&s.zeta);
        r.push(s.theta_hat);
        r.extend(&s.alpha_f);
        r.extend([s.eps_norm, s.v, s.ybar_tj, s.ydot]);
        r.into_iter().map(fmt_f64).collect()
    });
    csv_bytes(&trajectory_header(n), rows)
}

pub fn events_csv(events: &[EventRecord]) -> Vec<u8> {
    let header = ["t", "detector", "condition", "value"].map(String::from);
    let rows = events.iter().map(|e| {
        vec![
            fmt_f64(e.t),
            e.detector.to_string(),
            e.condition.to_string(),
            fmt_f64(e.value),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn baseline_csv(samples: &[BaselineSample]) -> Vec<u8> {
    let header = ["t", "x1", "x2", "y", "theta_hat", "u", "v"].map(String::from);
    let rows = samples.iter().map(|s| {
        [s.t, s.x[0], s.x[1], s.x[0], s.theta_hat, s.u, s.v]
            .into_iter()
            .map(fmt_f64)
            .collect()
    });
    csv_bytes(&header, rows)
}

fn parse_f64(field: &str, col: &str, line: u64) -> Result<f64, CliError> {
    field
        .parse()
        .map_err(|_| CliError::Config(format!("line {line}: column {col} is not a number: {field:?}")))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

/// Reads a trajectory written by [`trajectory_csv`].
pub fn read_trajectory(path: &Path) -> Result<Vec<Sample>, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rd.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let n = header
        .iter()
        .filter(|h| h.strip_prefix('x').is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())))
        .count();
    if n == 0 || header != trajectory_header(n) {
        return Err(CliError::Config(format!("{}: unexpected trajectory header", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        let v: Vec<f64> = rec
            .iter()
            .zip(&header)
            .map(|(f, col)| parse_f64(f, col, line))
            .collect::<Result<_, _>>()?;
        let mut it = v.into_iter();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
        let t = take(1)[0];
        let x = take(n);
        let yyu = take(3);
        let xi = take(n);
        let zeta = take(n);
        let theta_hat = take(1)[0];
        let alpha_f = take(n - 1);
        let tail = take(4);
        out.push(Sample {
            t,
            x,
            y: yyu[0],
            ybar: yyu[1],
            u: yyu[2],
            xi,
            zeta,
            theta_hat,
            alpha_f,
            eps_norm: tail[0],
            v: tail[1],
            ybar_tj: tail[2],
            ydot: tail[3],
        });
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        if rec.len() != 4 {
            return Err(CliError::Config(format!("{}: line {line}: expected 4 fields", path.display())));
        }
        let detector: Detector = rec[1].parse().map_err(|e| CliError::Config(format!("line {line}: {e}")))?;
        let condition: Condition = rec[2].parse().map_err(|e| CliError::Config(format!("line {line}: {e}")))?;
        out.push(EventRecord {
            t: parse_f64(&rec[0], "t", line)?,
            detector,
            condition,
            value: parse_f64(&rec[3], "value", line)?,
        });
    }
    Ok(out)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable value");
    v.push(b'\n');
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub output_dir: String,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Files of one command, written together with a manifest.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn write(self, command: &str, config_path: &Path, config_sha256: &str) -> Result<RunManifest, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|source| CliError::Write {
            path: self.dir.display().to_string(),
            source,
        })?;
        let mut entries = Vec::new();
        for (name, bytes) in &self.files {
            write_file(&self.dir.join(name), bytes)?;
            entries.push(FileEntry {
                name: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            });
        }
        let manifest = RunManifest {
            tool: TOOL_NAME.into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config_path: config_path.display().to_string(),
            config_sha256: config_sha256.into(),
            output_dir: self.dir.display().to_string(),
            files: entries,
        };
        write_file(&self.dir.join(MANIFEST), &json_bytes(&manifest))?;
        Ok(manifest)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}
