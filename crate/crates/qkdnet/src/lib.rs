//! File formats and command implementations for the `qkdnet` binary.
//!
//! Scenarios are JSON documents; a run writes `metrics.json` and, when
//! tracing, `trace.jsonl`. A sweep writes `sweep.csv`.

pub mod sweep;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use qkdnet_core::scenario::{Scenario, Warning};
use qkdnet_core::sim::{self, Metrics, Outcome, TraceLevel, TraceRecord};
use qkdnet_core::ValidationError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid scenario: {0}")]
    Invalid(ValidationError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Process exit status: 1 for bad input, 2 for file system trouble.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => 2,
            Error::Invalid(_) | Error::Usage(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Parses scenario JSON, reporting the path of the first offending field.
pub fn parse_scenario(text: &str) -> Result<Scenario, ValidationError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // serde points at the enclosing object for a missing field.
        if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
        } else if path == "." {
            path = "(document)".to_string();
        }
        ValidationError { path, message }
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text).map_err(Error::Invalid)
}

/// Full check without running. Returns the warnings.
pub fn cmd_validate(path: &Path) -> Result<Vec<Warning>, Error> {
    let scenario = load_scenario(path)?;
    let resolved = scenario.validate().map_err(Error::Invalid)?;
    Ok(resolved.warnings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub trace: Option<TraceLevel>,
    pub sample_interval: Option<f64>,
}

/// Applies command-line overrides to a loaded scenario.
pub fn apply_overrides(
    scenario: &mut Scenario,
    seed: Option<u64>,
    trace: Option<TraceLevel>,
    sample_interval: Option<f64>,
) {
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(trace) = trace {
        scenario.config.trace = trace;
    }
    if let Some(s) = sample_interval {
        scenario.config.sample_interval = Some(s);
    }
}

pub fn cmd_run(cfg: &RunConfig) -> Result<Outcome, Error> {
    let mut scenario = load_scenario(&cfg.scenario)?;
    apply_overrides(&mut scenario, cfg.seed, cfg.trace, cfg.sample_interval);
    let outcome = sim::run(&scenario).map_err(Error::Invalid)?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    write_metrics(&cfg.out.join("metrics.json"), &outcome.metrics)?;
    if scenario.config.trace != TraceLevel::None {
        write_trace(&cfg.out.join("trace.jsonl"), &outcome.trace)?;
    }
    Ok(outcome)
}

pub fn metrics_json(metrics: &Metrics) -> String {
    let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    s.push('\n');
    s
}

pub fn write_metrics(path: &Path, metrics: &Metrics) -> Result<(), Error> {
    fs::write(path, metrics_json(metrics)).map_err(io_err(path))
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<(), Error> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for rec in trace {
        serde_json::to_writer(&mut w, rec).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, Error> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| io_err(path)(e.into())))
        .collect()
}
