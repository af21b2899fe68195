//! Frequency metrics and the sliding-window ROCOF estimate shared by the
//! relay model and post-run analysis.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::units::TraceSet;

/// Name of the monitored-frequency column in engine traces.
pub const FREQ_COLUMN: &str = "f_hz";

/// Half-width of the settling band, Hz.
pub const SETTLING_BAND_HZ: f64 = 0.02;

/// Span of the tail averaged for the steady-state frequency, s.
pub const STEADY_STATE_SPAN_S: f64 = 1.0;

/// Number of samples in a window of `window` seconds at step `dt`
/// (both ends included).
pub fn window_len(window: f64, dt: f64) -> usize {
    (window / dt).round() as usize + 1
}

/// Least-squares slope weights for `n` uniformly spaced samples.
pub fn slope_weights(n: usize, dt: f64) -> Vec<f64> {
    let mean = (n as f64 - 1.0) / 2.0;
    let denom: f64 = (0..n).map(|i| (i as f64 - mean).powi(2)).sum::<f64>() * dt;
    (0..n).map(|i| (i as f64 - mean) / denom).collect()
}

/// Least-squares slope of uniformly sampled values.
pub fn ls_slope(samples: &[f64], dt: f64) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    slope_weights(samples.len(), dt).iter().zip(samples).map(|(w, f)| w * f).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocofDecision {
    /// Hz/s.
    pub slope: f64,
    pub trip: bool,
}

/// ROCOF relay on one full window of monitored frequency (Hz).
/// Trips when `|slope| > threshold`.
pub fn rocof_monitor(window: &[f64], dt: f64, window_s: f64, threshold: f64) -> Result<RocofDecision> {
    let n = window_len(window_s, dt);
    if window.len() != n {
        return Err(Error::Invalid(format!(
            "ROCOF window holds {} samples, expected {n} for {window_s} s at dt {dt}",
            window.len()
        )));
    }
    let slope = ls_slope(window, dt);
    Ok(RocofDecision {
        slope,
        trip: slope.abs() > threshold,
    })
}

/// A relay operation or flag raised during a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayTrip {
    pub t: f64,
    pub relay: String,
    pub value: f64,
    pub action: String,
}

/// One applied scheduled event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub description: String,
}

fn inf_as_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub nadir_hz: f64,
    pub t_nadir_s: f64,
    pub max_rocof_hz_s: f64,
    /// Time after which the frequency stays within the band around the
    /// steady-state value; infinite (null in JSON) if it never does.
    #[serde(serialize_with = "inf_as_null")]
    pub settling_time_s: f64,
    pub steady_state_freq_hz: f64,
    pub tripped: Vec<RelayTrip>,
    pub completed: bool,
    pub termination: Option<String>,
    /// Largest network power-balance residual over all samples, p.u.
    pub max_power_residual_pu: f64,
    pub battery_exhausted: Vec<String>,
    pub events: Vec<EventRecord>,
}

/// Metrics of the monitored frequency column.
pub fn compute_metrics(trace: &TraceSet, f0: f64, rocof_window: f64) -> Result<Metrics> {
    if !(f0 > 0.0) {
        return Err(Error::Invalid(format!("rated frequency must be positive, got {f0}")));
    }
    let f = trace
        .column(FREQ_COLUMN)
        .ok_or_else(|| Error::Trace(format!("trace has no `{FREQ_COLUMN}` column")))?;
    if f.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    let dt = trace.dt();

    let (mut nadir, mut k_nadir) = (f[0], 0);
    for (k, &v) in f.iter().enumerate() {
        if v < nadir {
            nadir = v;
            k_nadir = k;
        }
    }

    let n = window_len(rocof_window, dt);
    let mut max_rocof = 0.0f64;
    if f.len() >= n {
        let w = slope_weights(n, dt);
        for win in f.windows(n) {
            let s: f64 = w.iter().zip(win).map(|(a, b)| a * b).sum();
            max_rocof = max_rocof.max(s.abs());
        }
    }

    let t_last = trace.time(f.len() - 1);
    let tail: Vec<f64> = f
        .iter()
        .enumerate()
        .filter(|(k, _)| trace.time(*k) >= t_last - STEADY_STATE_SPAN_S - 1e-9)
        .map(|(_, v)| *v)
        .collect();
    let f_ss = tail.iter().sum::<f64>() / tail.len() as f64;

    let outside = |v: f64| (v - f_ss).abs() > SETTLING_BAND_HZ;
    let settling = match f.iter().rposition(|&v| outside(v)) {
        None => trace.t0(),
        Some(k) if k == f.len() - 1 => f64::INFINITY,
        Some(k) => trace.time(k + 1),
    };

    Ok(Metrics {
        nadir_hz: nadir,
        t_nadir_s: trace.time(k_nadir),
        max_rocof_hz_s: max_rocof,
        settling_time_s: settling,
        steady_state_freq_hz: f_ss,
        tripped: Vec::new(),
        completed: true,
        termination: None,
        max_power_residual_pu: 0.0,
        battery_exhausted: Vec::new(),
        events: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trace_of(dt: f64, f: impl Fn(f64) -> f64, t_end: f64) -> TraceSet {
        let mut tr = TraceSet::new(dt, 0.0, [FREQ_COLUMN]).unwrap();
        let n = (t_end / dt).round() as usize;
        for k in 0..=n {
            tr.append([(FREQ_COLUMN, f(k as f64 * dt))]).unwrap();
        }
        tr
    }

    #[test]
    fn rocof_monitor_examples() {
        let dt = 0.001;
        let n = window_len(0.1, dt);
        let flat = vec![60.0; n];
        assert!(!rocof_monitor(&flat, dt, 0.1, 1.0).unwrap().trip);

        let ramp: Vec<f64> = (0..n).map(|k| 60.0 - 2.0 * k as f64 * dt).collect();
        let d = rocof_monitor(&ramp, dt, 0.1, 1.0).unwrap();
        assert!(d.trip);
        assert_relative_eq!(d.slope, -2.0, epsilon = 1e-9);

        // exactly at threshold: slope of an exact -1 Hz/s ramp evaluated
        // against the slope itself
        let ramp1: Vec<f64> = (0..n).map(|k| 60.0 - k as f64 * dt).collect();
        let s = rocof_monitor(&ramp1, dt, 0.1, 1.0).unwrap().slope;
        assert!(!rocof_monitor(&ramp1, dt, 0.1, s.abs()).unwrap().trip);

        assert!(rocof_monitor(&ramp[1..], dt, 0.1, 1.0).is_err());
    }

    #[test]
    fn constant_trace_metrics() {
        let tr = trace_of(0.01, |_| 60.0, 5.0);
        let m = compute_metrics(&tr, 60.0, 0.1).unwrap();
        assert_eq!(m.nadir_hz, 60.0);
        assert_eq!(m.max_rocof_hz_s, 0.0);
        assert_eq!(m.settling_time_s, 0.0);
        assert_eq!(m.steady_state_freq_hz, 60.0);
    }

    #[test]
    fn damped_sine_metrics_match_closed_form() {
        let (a, w, amp) = (0.8, 3.0, 0.5);
        let f = move |t: f64| 60.0 - amp * (-a * t).exp() * (w * t).sin();
        let dt = 1e-3;
        let tr = trace_of(dt, f, 15.0);
        let m = compute_metrics(&tr, 60.0, 0.1).unwrap();

        let t_star = (w / a).atan() / w;
        assert!((m.t_nadir_s - t_star).abs() <= dt);
        assert!((m.nadir_hz - f(t_star)).abs() < 1e-6);

        // the last exceedance lies within half a period before the envelope
        // crosses the band
        let t_env = (amp / SETTLING_BAND_HZ).ln() / a;
        assert!(m.settling_time_s <= t_env + dt);
        assert!(m.settling_time_s >= t_env - std::f64::consts::PI / w);
        assert!((m.steady_state_freq_hz - 60.0).abs() < 1e-4);
    }

    #[test]
    fn never_settling_is_infinite() {
        let tr = trace_of(0.01, |t| 60.0 + 0.5 * (3.0 * t).sin(), 5.0);
        let m = compute_metrics(&tr, 60.0, 0.1).unwrap();
        assert!(m.settling_time_s.is_infinite());
        let json = serde_json::to_value(&m).unwrap();
        assert!(json["settling_time_s"].is_null());
    }

    #[test]
    fn missing_or_empty_column() {
        let tr = TraceSet::new(0.01, 0.0, ["x"]).unwrap();
        assert!(compute_metrics(&tr, 60.0, 0.1).is_err());
        let tr = TraceSet::new(0.01, 0.0, [FREQ_COLUMN]).unwrap();
        assert!(compute_metrics(&tr, 60.0, 0.1).is_err());
    }
}
