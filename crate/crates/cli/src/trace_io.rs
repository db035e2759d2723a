//! Trace CSV files and their metadata sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use adacrit_core::{OptimizerConfig, TheoremBudget, Trace, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::experiment::RunOutput;

pub const HEADER: [&str; 6] = ["t", "f", "grad_norm", "alpha", "lambda_min", "f_test"];

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn trace_to_csv(trace: &Trace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in &trace.rows {
        w.write_record([
            r.t.to_string(),
            fmt_f64(r.f),
            fmt_f64(r.grad_norm),
            cell(r.alpha),
            cell(r.lambda_min),
            cell(r.f_test),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), HarnessError> {
    write_file(path, trace_to_csv(trace).as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Trace, HarnessError> {
    let bad = |reason: String| HarnessError::Trace {
        path: path.to_path_buf(),
        reason,
    };
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut trace = Trace::default();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64, HarnessError> {
            rec[k].parse().map_err(|_| bad(format!("line {line}: bad {} value {:?}", HEADER[k], &rec[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>, HarnessError> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let t = rec[0].parse().map_err(|_| bad(format!("line {line}: bad t {:?}", &rec[0])))?;
        let mut row = TraceRecord::new(t, num(1)?, num(2)?);
        row.alpha = opt(3)?;
        row.lambda_min = opt(4)?;
        row.f_test = opt(5)?;
        trace.push(row);
    }
    Ok(trace)
}

pub fn read_trace(path: &Path) -> Result<Trace, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_trace(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub label: String,
    pub seed: u64,
    pub tool_version: String,
    pub optimizer: OptimizerConfig,
    pub max_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<TheoremBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<String>,
}

/// Written next to every trace. Loading it as a configuration replays the
/// run that produced the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
}

impl Sidecar {
    /// `config` must describe exactly the single run in `out`.
    pub fn new(config: &ExperimentConfig, out: &RunOutput) -> Self {
        let mut config = config.clone();
        config.seeds = vec![out.seed];
        config.grid = None;
        config.sweep = None;
        config.compare = None;
        config.out_dir = None;
        Sidecar {
            provenance: Provenance {
                label: config.label(),
                seed: out.seed,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                optimizer: out.optimizer.clone(),
                max_steps: out.max_steps,
                budget: out.budget.clone(),
                diverged: out.diverged.clone(),
            },
            config,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sidecar serializes")
    }
}

/// `<dir>/<stem>.csv` and `<dir>/<stem>.toml`; returns the CSV path.
pub fn write_run(dir: &Path, stem: &str, config: &ExperimentConfig, out: &RunOutput) -> Result<PathBuf, HarnessError> {
    let csv = dir.join(format!("{stem}.csv"));
    write_trace(&out.trace, &csv)?;
    write_file(&dir.join(format!("{stem}.toml")), Sidecar::new(config, out).to_toml().as_bytes())?;
    Ok(csv)
}

/// File-name-safe version of a label.
pub fn slug(s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    while out.contains("__") {
        out = out.replace("__", "_");
    }
    out.trim_matches('_').to_string()
}
