//! Independent runs over many scenarios, data-parallel with rayon when the
//! `parallel` feature is on.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::{integrate, RunResult};
use crate::error::{Error, Result};
use crate::output::{ensure_dir, write_json, write_trace_csv, METRICS_FILE, TRACE_FILE};
use crate::scenario::{expand_sweep, LoadOptions, Scenario, SweepSection};

/// Run every scenario on the current thread, in order.
pub fn run_sequential(scenarios: &[Scenario]) -> Vec<Result<RunResult>> {
    scenarios.iter().map(integrate).collect()
}

/// Run every scenario across the rayon pool. Output order matches input.
#[cfg(feature = "parallel")]
pub fn run_parallel(scenarios: &[Scenario]) -> Vec<Result<RunResult>> {
    use rayon::prelude::*;
    scenarios.par_iter().map(integrate).collect()
}

/// Parallel when built with `parallel`, sequential otherwise.
pub fn run_all(scenarios: &[Scenario]) -> Vec<Result<RunResult>> {
    #[cfg(feature = "parallel")]
    {
        run_parallel(scenarios)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sequential(scenarios)
    }
}

/// Write `trace.csv` and `metrics.json` for one run.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_trace_csv(&result.trace, &dir.join(TRACE_FILE))?;
    write_json(&result.metrics, &dir.join(METRICS_FILE))
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub dir: PathBuf,
    pub nadir_hz: Option<f64>,
    pub max_rocof_hz_s: Option<f64>,
    pub settling_time_s: Option<f64>,
    pub rocof_tripped: Option<bool>,
    pub completed: bool,
    pub error: Option<String>,
}

pub const SUMMARY_FILE: &str = "summary.csv";

fn value_tag(v: f64) -> String {
    format!("{v}")
}

pub fn sweep_dir_name(label: &str, value: f64) -> String {
    format!("sweep_{label}_{}", value_tag(value))
}

/// Expand, run and write a sweep. Per-value failures end up in the summary
/// rather than aborting the other values.
pub fn run_sweep(text: &str, opts: LoadOptions, out_dir: &Path) -> Result<(SweepSection, Vec<SweepRow>)> {
    let (sweep, points) = expand_sweep(text, opts)?;
    ensure_dir(out_dir)?;

    let mut ok: Vec<Scenario> = Vec::new();
    let mut slot: Vec<Option<usize>> = Vec::new();
    let mut load_errors: Vec<Option<Error>> = Vec::new();
    for p in points.iter() {
        match &p.scenario {
            Ok(s) => {
                slot.push(Some(ok.len()));
                ok.push(s.clone());
                load_errors.push(None);
            }
            Err(e) => {
                slot.push(None);
                load_errors.push(Some(Error::Invalid(e.to_string())));
            }
        }
    }
    let mut results: Vec<Option<Result<RunResult>>> = run_all(&ok).into_iter().map(Some).collect();

    let mut rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let dir = out_dir.join(sweep_dir_name(sweep.label(), p.value));
        let mut row = SweepRow {
            value: p.value,
            dir: dir.clone(),
            nadir_hz: None,
            max_rocof_hz_s: None,
            settling_time_s: None,
            rocof_tripped: None,
            completed: false,
            error: None,
        };
        let outcome = match slot[i] {
            Some(k) => results[k].take().expect("each result used once"),
            None => Err(load_errors[i].take().expect("load error present")),
        };
        match outcome {
            Ok(r) => {
                let m = &r.metrics;
                row.nadir_hz = Some(m.nadir_hz);
                row.max_rocof_hz_s = Some(m.max_rocof_hz_s);
                row.settling_time_s = Some(m.settling_time_s);
                row.rocof_tripped = Some(m.tripped.iter().any(|t| t.relay == "rocof"));
                row.completed = m.completed;
                row.error = m.termination.clone();
                if let Err(e) = write_run(&r, &dir) {
                    row.error = Some(e.to_string());
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    write_summary(&rows, sweep.label(), &out_dir.join(SUMMARY_FILE))?;
    Ok((sweep, rows))
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.16e}"),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

pub fn write_summary(rows: &[SweepRow], label: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        label,
        "nadir_hz",
        "max_rocof_hz_s",
        "settling_time_s",
        "rocof_tripped",
        "completed",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            value_tag(r.value),
            opt(r.nadir_hz),
            opt(r.max_rocof_hz_s),
            opt(r.settling_time_s),
            r.rocof_tripped.map(|b| b.to_string()).unwrap_or_default(),
            r.completed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
