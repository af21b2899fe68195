//! Per-unit bases, phasors and the time-series container shared by the
//! simulator, the metrics code and the CSV exporter.

use std::f64::consts::PI;

use indexmap::IndexMap;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex phasor in per-unit. Plain `Complex64` carries all the arithmetic.
pub type Phasor = Complex64;

/// Base quantities for normalization. `omega0` is always derived from `f0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBase", into = "RawBase")]
pub struct PerUnitSystem {
    s_base: f64,
    v_base: f64,
    f0: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBase {
    s_base: f64,
    v_base: f64,
    f0: f64,
}

impl TryFrom<RawBase> for PerUnitSystem {
    type Error = Error;
    fn try_from(raw: RawBase) -> Result<Self> {
        PerUnitSystem::new(raw.s_base, raw.v_base, raw.f0)
    }
}

impl From<PerUnitSystem> for RawBase {
    fn from(b: PerUnitSystem) -> Self {
        RawBase {
            s_base: b.s_base,
            v_base: b.v_base,
            f0: b.f0,
        }
    }
}

/// Which base a quantity is normalized against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantityKind {
    Power,
    Voltage,
    Frequency,
}

impl std::str::FromStr for QuantityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(QuantityKind::Power),
            "voltage" => Ok(QuantityKind::Voltage),
            "frequency" => Ok(QuantityKind::Frequency),
            other => Err(Error::Invalid(format!("unknown quantity kind `{other}`"))),
        }
    }
}

impl PerUnitSystem {
    /// `s_base` in VA, `v_base` in V (line-line RMS), `f0` in Hz.
    pub fn new(s_base: f64, v_base: f64, f0: f64) -> Result<Self> {
        for (name, v) in [("s_base", s_base), ("v_base", v_base), ("f0", f0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { s_base, v_base, f0 })
    }

    pub fn s_base(&self) -> f64 {
        self.s_base
    }

    pub fn v_base(&self) -> f64 {
        self.v_base
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.f0
    }

    fn base_of(&self, kind: QuantityKind) -> f64 {
        match kind {
            QuantityKind::Power => self.s_base,
            QuantityKind::Voltage => self.v_base,
            QuantityKind::Frequency => self.f0,
        }
    }

    pub fn to_per_unit(&self, value: f64, kind: QuantityKind) -> f64 {
        value / self.base_of(kind)
    }

    pub fn to_physical(&self, value_pu: f64, kind: QuantityKind) -> f64 {
        value_pu * self.base_of(kind)
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Uniformly sampled, named columns. All columns always have the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    dt: f64,
    t0: f64,
    columns: IndexMap<String, Vec<f64>>,
}

impl TraceSet {
    pub fn new<I, S>(dt: f64, t0: f64, names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Invalid(format!("trace dt must be positive, got {dt}")));
        }
        let mut columns = IndexMap::new();
        for name in names {
            let name = name.into();
            if columns.insert(name.clone(), Vec::new()).is_some() {
                return Err(Error::Invalid(format!("duplicate trace column `{name}`")));
            }
        }
        Ok(Self { dt, t0, columns })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.columns.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Append one sample to every column. The sample must name exactly the
    /// trace's columns.
    pub fn append<'a, I>(&mut self, sample: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        let sample: IndexMap<&str, f64> = sample.into_iter().collect();
        for name in self.columns.keys() {
            if !sample.contains_key(name.as_str()) {
                return Err(Error::Trace(format!("sample is missing column `{name}`")));
            }
        }
        for name in sample.keys() {
            if !self.columns.contains_key(*name) {
                return Err(Error::Trace(format!("sample has unknown column `{name}`")));
            }
        }
        for (name, col) in self.columns.iter_mut() {
            col.push(sample[name.as_str()]);
        }
        Ok(())
    }

    /// Fast path for the engine: values in column order.
    pub(crate) fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (col, v) in self.columns.values_mut().zip(row) {
            col.push(*v);
        }
    }

    /// Keep only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<TraceSet> {
        let mut columns = IndexMap::new();
        for name in names {
            let col = self
                .columns
                .get(name)
                .ok_or_else(|| Error::Trace(format!("no trace column `{name}`")))?;
            columns.insert(name.clone(), col.clone());
        }
        Ok(TraceSet {
            dt: self.dt,
            t0: self.t0,
            columns,
        })
    }
}
