//! `trace.csv` and `metrics.json` writers.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inner_loop::TestbedTrace;
use crate::units::TraceSet;

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `t_s` then one column per signal; 17 significant digits so the
/// file round-trips exactly.
pub fn write_trace_csv(trace: &TraceSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t_s".to_string()];
    header.extend(trace.names().map(String::from));
    w.write_record(&header)?;
    let cols: Vec<&[f64]> = trace.columns().map(|(_, c)| c).collect();
    for k in 0..trace.len() {
        let mut row = Vec::with_capacity(cols.len() + 1);
        row.push(num(trace.time(k)));
        row.extend(cols.iter().map(|c| num(c[k])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read back a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<TraceSet> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.first().map(String::as_str) != Some("t_s") {
        return Err(Error::Trace(format!("{}: first column must be t_s", path.display())));
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Trace(format!("bad number `{s}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    let t0 = times.first().copied().unwrap_or(0.0);
    let mut trace = TraceSet::new(dt, t0, header[1..].iter().cloned())?;
    for row in rows {
        trace.push_row(&row);
    }
    Ok(trace)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Testbed samples as a trace: dq references, measurements, modulation and
/// reconstructed phase voltages.
pub fn testbed_trace(tr: &TestbedTrace, dt: f64) -> Result<TraceSet> {
    let names = [
        "v_ref_d", "v_ref_q", "v_d", "v_q", "i_d", "i_q", "m_d", "m_q", "v_a", "v_b", "v_c",
    ];
    let t0 = tr.t.first().copied().unwrap_or(dt);
    let mut out = TraceSet::new(dt, t0, names)?;
    for k in 0..tr.t.len() {
        let (r, v, i, m, abc) = (tr.v_ref[k], tr.v[k], tr.i[k], tr.m[k], tr.v_abc[k]);
        out.push_row(&[r.d, r.q, v.d, v.q, i.d, i.q, m.d, m.q, abc.a, abc.b, abc.c]);
    }
    Ok(out)
}
