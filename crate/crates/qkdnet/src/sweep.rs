//! One run per (value, seed) combination of a single scenario parameter.
//!
//! Parameters are addressed on the scenario document with every default
//! filled in:
//!
//! * `link.<id>.<field>` sets a field of one link, e.g. `link.AB.length`;
//! * `links.<field>` sets it on every link;
//! * anything else is a dotted path, e.g. `config.admission_factor`,
//!   `duration` or `demands.0.service.bits_per_period`.

use std::path::Path;
use std::thread;

use qkdnet_core::link_model::effective_link_rate;
use qkdnet_core::scenario::Scenario;
use qkdnet_core::sim::{self, TraceLevel};
use qkdnet_core::ValidationError;
use serde::Serialize;
use serde_json::Value;

use crate::{io_err, load_scenario, Error};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
    /// Empty means seed 0 only.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seed: u64,
    /// Measured mean key generation rate of the swept link(s), bits/s.
    pub generation_rate: f64,
    /// Closed-form rate of the same link(s) at t=0, bits/s.
    pub model_rate: f64,
    pub key_generated: u64,
    pub key_consumed: u64,
    pub key_discarded: u64,
    pub delivered_bits: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub reroutes: u64,
    pub teardowns: u64,
    pub control_key_bits: u64,
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

pub fn parse_values(list: &str) -> Result<Vec<f64>, Error> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Usage(format!("bad sweep value {s:?}"))))
        .collect()
}

/// `start:stop:step`, both ends inclusive.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Usage(format!("bad range {spec:?}; expected start:stop:step"));
    let parts: Vec<f64> = spec.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| round12(start + i as f64 * step)).collect())
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>, Error> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| Error::Usage(format!("bad seed {s:?}"))))
        .collect()
}

fn number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        if v >= 0.0 {
            Value::from(v as u64)
        } else {
            Value::from(v as i64)
        }
    } else {
        Value::from(v)
    }
}

fn settable(slot: &Value) -> bool {
    slot.is_number() || slot.is_null()
}

fn unknown(param: &str) -> Error {
    Error::Usage(format!("unknown sweep parameter {param:?}"))
}

/// Writes `value` at `param`; returns the link indices the parameter scopes.
fn set_param(doc: &mut Value, param: &str, value: f64) -> Result<Option<Vec<usize>>, Error> {
    let segs: Vec<&str> = param.split('.').collect();
    let links = doc["topology"]["links"].as_array_mut().ok_or_else(|| unknown(param))?;
    match segs.as_slice() {
        ["link", id, field] => {
            let (i, link) = links
                .iter_mut()
                .enumerate()
                .find(|(_, l)| l["id"] == *id)
                .ok_or_else(|| unknown(param))?;
            let slot = link.get_mut(*field).filter(|s| settable(s)).ok_or_else(|| unknown(param))?;
            *slot = number(value);
            Ok(Some(vec![i]))
        }
        ["links", field] => {
            if links.is_empty() {
                return Err(unknown(param));
            }
            for link in links.iter_mut() {
                let slot = link.get_mut(*field).filter(|s| settable(s)).ok_or_else(|| unknown(param))?;
                *slot = number(value);
            }
            Ok(Some((0..links.len()).collect()))
        }
        _ => {
            let mut slot = &mut *doc;
            for seg in &segs {
                slot = match slot {
                    Value::Object(map) => map.get_mut(*seg),
                    Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| unknown(param))?;
            }
            if !settable(slot) {
                return Err(unknown(param));
            }
            *slot = number(value);
            Ok(None)
        }
    }
}

struct Job {
    value: f64,
    seed: u64,
    scenario: Scenario,
    scope: Option<Vec<usize>>,
}

fn build_jobs(base: &Scenario, spec: &SweepSpec) -> Result<Vec<Job>, Error> {
    let doc = serde_json::to_value(base).expect("scenario serializes");
    let seeds = if spec.seeds.is_empty() { vec![0] } else { spec.seeds.clone() };
    let mut jobs = Vec::new();
    for &value in &spec.values {
        let mut d = doc.clone();
        let scope = set_param(&mut d, &spec.param, value)?;
        let mut scenario: Scenario = serde_json::from_value(d).map_err(|e| {
            Error::Invalid(ValidationError { path: spec.param.clone(), message: format!("value {value}: {e}") })
        })?;
        scenario.config.trace = TraceLevel::None;
        scenario.validate().map_err(Error::Invalid)?;
        for &seed in &seeds {
            let mut s = scenario.clone();
            s.seed = seed;
            jobs.push(Job { value, seed, scenario: s, scope: scope.clone() });
        }
    }
    Ok(jobs)
}

fn run_job(param: &str, job: &Job) -> SweepRow {
    let outcome = sim::run(&job.scenario).expect("validated before running");
    let m = &outcome.metrics;
    let scope: Vec<usize> = job.scope.clone().unwrap_or_else(|| (0..m.links.len()).collect());
    let profiles = &job.scenario.topology.links;
    SweepRow {
        param: param.to_string(),
        value: job.value,
        seed: job.seed,
        generation_rate: scope.iter().map(|&i| m.links[i].mean_generation_rate).sum(),
        model_rate: scope.iter().map(|&i| effective_link_rate(&profiles[i].profile())).sum(),
        key_generated: scope.iter().map(|&i| m.links[i].key_generated).sum(),
        key_consumed: scope.iter().map(|&i| m.links[i].key_consumed).sum(),
        key_discarded: scope.iter().map(|&i| m.links[i].key_discarded).sum(),
        delivered_bits: m.circuits.iter().map(|c| c.delivered_bits).sum(),
        admitted: m.network.admitted,
        rejected: m.network.rejected.len() as u64,
        reroutes: m.network.reroutes,
        teardowns: m.network.teardowns,
        control_key_bits: m.network.control_key_bits,
    }
}

/// Runs every combination, spread over the available cores. Rows come back
/// in (value, seed) order regardless of scheduling.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec) -> Result<Vec<SweepRow>, Error> {
    if spec.values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    let jobs = build_jobs(base, spec)?;
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let mut rows: Vec<Option<SweepRow>> = vec![None; jobs.len()];
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                let param = spec.param.as_str();
                s.spawn(move || {
                    (w..jobs.len()).step_by(workers).map(|i| (i, run_job(param, &jobs[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("sweep worker panicked") {
                rows[i] = Some(row);
            }
        }
    });
    Ok(rows.into_iter().map(|r| r.expect("every job ran")).collect())
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path)(e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path)(e.into()))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads the scenario, sweeps, and writes `sweep.csv` under `out`.
pub fn cmd_sweep(scenario: &Path, spec: &SweepSpec, out: &Path) -> Result<Vec<SweepRow>, Error> {
    let base = load_scenario(scenario)?;
    base.validate().map_err(Error::Invalid)?;
    let rows = run_sweep(&base, spec)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_csv(&out.join("sweep.csv"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_inclusive_and_clean() {
        assert_eq!(parse_range("0:120:10").unwrap().len(), 13);
        assert_eq!(parse_range("0:0.2:0.05").unwrap(), vec![0.0, 0.05, 0.1, 0.15, 0.2]);
        assert!(parse_range("1:0:1").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn empty_seed_list() {
        assert!(parse_seeds("").unwrap().is_empty());
        assert_eq!(parse_seeds("1, 2").unwrap(), vec![1, 2]);
    }

    #[test]
    fn integral_values_written_as_integers() {
        assert!(number(3.0).is_u64());
        assert!(number(0.5).is_f64());
    }

    #[test]
    fn parameter_addressing() {
        let mut doc = serde_json::json!({"duration": 1.0, "config": {"k_paths": 2},
            "topology": {"links": [{"id": "AB", "length": 1.0, "capacity_bits": null}]}});
        assert_eq!(set_param(&mut doc, "link.AB.length", 5.0).unwrap(), Some(vec![0]));
        assert_eq!(doc["topology"]["links"][0]["length"], 5);
        assert!(set_param(&mut doc, "link.AB.capacity_bits", 9.0).is_ok());
        assert!(set_param(&mut doc, "links.length", 7.0).is_ok());
        assert!(set_param(&mut doc, "config.k_paths", 3.0).unwrap().is_none());
        assert!(set_param(&mut doc, "duration", 3.0).is_ok());
        for bad in ["link.XY.length", "links.nope", "config.nope", "topology", "link.AB.id"] {
            assert!(matches!(set_param(&mut doc, bad, 1.0), Err(Error::Usage(_))), "{bad}");
        }
    }
}
