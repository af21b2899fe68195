//! DC-side sources behind the inverter: a PV array with perturb-and-observe
//! tracking and an ideal power-limited battery store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic PV curve
/// `I(v) = i_sc g (1 − (exp(v / (a V)) − 1) / (exp(1/a) − 1))`
/// where `g` is the irradiance scale and `V = v_oc (1 + beta ln g)` the
/// irradiance-dependent open-circuit voltage. `a` sets the fill factor
/// (smaller is squarer). Current is zero above `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvCurve {
    /// Open-circuit voltage at full irradiance, V.
    pub v_oc: f64,
    /// Short-circuit current at full irradiance, A.
    pub i_sc: f64,
    /// Curve shape `a`.
    #[serde(default = "default_shape")]
    pub shape: f64,
    /// Open-circuit voltage sensitivity to irradiance.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Irradiance scale, 0..1.
    #[serde(default = "one")]
    pub irradiance: f64,
}

fn default_shape() -> f64 {
    0.08
}

fn default_beta() -> f64 {
    0.05
}

fn one() -> f64 {
    1.0
}

impl PvCurve {
    pub fn new(v_oc: f64, i_sc: f64) -> Self {
        PvCurve {
            v_oc,
            i_sc,
            shape: default_shape(),
            beta: default_beta(),
            irradiance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_oc > 0.0 && self.i_sc > 0.0 && self.shape > 0.0) {
            return Err(Error::Invalid("pv v_oc, i_sc and shape must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.irradiance) {
            return Err(Error::Invalid(format!("pv irradiance {} outside 0..1", self.irradiance)));
        }
        if !(0.0..0.2).contains(&self.beta) {
            return Err(Error::Invalid(format!("pv beta {} outside 0..0.2", self.beta)));
        }
        Ok(())
    }

    /// Open-circuit voltage at the present irradiance.
    pub fn v_oc_effective(&self) -> f64 {
        if self.irradiance <= 0.0 {
            return 0.0;
        }
        (self.v_oc * (1.0 + self.beta * self.irradiance.ln())).max(0.0)
    }

    fn current(&self, v: f64) -> f64 {
        let voc = self.v_oc_effective();
        if voc <= 0.0 || v >= voc {
            return 0.0;
        }
        let a = self.shape;
        let frac = (v / (a * voc)).exp_m1() / (1.0 / a).exp_m1();
        self.i_sc * self.irradiance * (1.0 - frac)
    }

    fn dp_dv(&self, v: f64) -> f64 {
        let voc = self.v_oc_effective();
        let a = self.shape;
        let di = -self.i_sc * self.irradiance * (v / (a * voc)).exp() / (a * voc * (1.0 / a).exp_m1());
        self.current(v) + v * di
    }

    /// Maximum power point `(v, p)`. P is strictly concave on `(0, V)`, so
    /// the zero of dP/dv is bracketed and found by bisection.
    pub fn mpp(&self) -> (f64, f64) {
        let voc = self.v_oc_effective();
        if voc <= 0.0 {
            return (0.0, 0.0);
        }
        let (mut lo, mut hi) = (0.0, voc);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.dp_dv(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        (v, v * self.current(v))
    }
}

/// Array power at terminal voltage `v`. Voltages outside `[0, v_oc]` are
/// clamped; the flag reports it.
pub fn pv_power(curve: &PvCurve, v: f64) -> (f64, bool) {
    let vc = v.clamp(0.0, curve.v_oc);
    (vc * curve.current(vc), vc != v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnoState {
    /// Operating voltage, V.
    pub v_op: f64,
    /// Perturbation size, V.
    pub step: f64,
    /// Power at the previous sample, W.
    #[serde(default)]
    pub last_p: f64,
    /// +1 or −1.
    #[serde(default = "plus_one")]
    pub direction: i8,
}

fn plus_one() -> i8 {
    1
}

impl PnoState {
    pub fn new(v_op: f64, step: f64) -> Self {
        PnoState {
            v_op,
            step,
            last_p: 0.0,
            direction: 1,
        }
    }

    pub fn validate(&self, curve: &PvCurve) -> Result<()> {
        if !(self.step > 0.0 && self.step < 0.5 * curve.v_oc) {
            return Err(Error::Invalid(format!("P&O step {} must lie in (0, v_oc/2)", self.step)));
        }
        if !(self.v_op > 0.0 && self.v_op < curve.v_oc) {
            return Err(Error::Invalid(format!("P&O v_op {} outside (0, v_oc)", self.v_op)));
        }
        if self.direction.abs() != 1 {
            return Err(Error::Invalid("P&O direction must be +1 or -1".into()));
        }
        Ok(())
    }
}

/// One hill-climbing step: sample power at `v_op`, reverse when it fell,
/// then perturb. Returns the new state and the sampled power as `P_ref`.
pub fn pno_step(state: &PnoState, curve: &PvCurve) -> (PnoState, f64) {
    let (p, _) = pv_power(curve, state.v_op);
    let mut next = *state;
    if p < state.last_p {
        next.direction = -state.direction;
    }
    let lo = state.step.min(0.5 * curve.v_oc);
    let hi = curve.v_oc - lo;
    next.v_op = (state.v_op + f64::from(next.direction) * state.step).clamp(lo, hi);
    next.last_p = p;
    (next, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryStore {
    /// State of charge, 0..1.
    pub soc: f64,
    /// Energy capacity, J.
    pub e_cap: f64,
    /// Charge and discharge power limits, W.
    pub p_max_chg: f64,
    pub p_max_dis: f64,
}

impl BatteryStore {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.soc) {
            return Err(Error::Invalid(format!("battery soc {} outside 0..1", self.soc)));
        }
        if !(self.e_cap > 0.0 && self.p_max_chg > 0.0 && self.p_max_dis > 0.0) {
            return Err(Error::Invalid("battery capacity and power limits must be positive".into()));
        }
        Ok(())
    }
}

/// Serve `p_request` (W, discharge positive) for `dt` seconds within the
/// power limits and the stored energy.
pub fn battery_dispatch(store: &BatteryStore, p_request: f64, dt: f64) -> (f64, BatteryStore) {
    let p_dis = store.p_max_dis.min(store.soc * store.e_cap / dt);
    let p_chg = store.p_max_chg.min((1.0 - store.soc) * store.e_cap / dt);
    let p = p_request.clamp(-p_chg, p_dis);
    let mut next = *store;
    next.soc = (store.soc - p * dt / store.e_cap).clamp(0.0, 1.0);
    (p, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn curve() -> PvCurve {
        PvCurve::new(600.0, 10.0)
    }

    fn grid_mpp(c: &PvCurve) -> (f64, f64) {
        let n = 1000;
        (0..=n)
            .map(|k| {
                let v = c.v_oc * k as f64 / n as f64;
                (v, pv_power(c, v).0)
            })
            .fold((0.0, f64::MIN), |best, x| if x.1 > best.1 { x } else { best })
    }

    #[test]
    fn boundaries_and_dark() {
        let c = curve();
        assert_eq!(pv_power(&c, 0.0), (0.0, false));
        assert!(pv_power(&c, c.v_oc).0.abs() < 1e-9);
        let dark = PvCurve { irradiance: 0.0, ..c.clone() };
        for k in 0..=10 {
            assert_eq!(pv_power(&dark, 60.0 * k as f64).0, 0.0);
        }
        assert!(pv_power(&c, 700.0).1);
        assert_eq!(pv_power(&c, -1.0), (0.0, true));
    }

    #[test]
    fn analytic_mpp_matches_grid_search() {
        for g in [1.0, 0.6, 0.3] {
            let c = PvCurve { irradiance: g, ..curve() };
            let (v, p) = c.mpp();
            let (vg, pg) = grid_mpp(&c);
            assert!((v - vg).abs() <= 1e-3 * c.v_oc, "g {g}: {v} vs {vg}");
            assert!(p >= pg);
        }
        // the maximum point moves with irradiance
        let v_full = curve().mpp().0;
        let v_dim = PvCurve { irradiance: 0.3, ..curve() }.mpp().0;
        assert!(v_full - v_dim > 10.0);
    }

    #[test]
    fn pno_from_low_voltage_and_after_irradiance_step() {
        let mut c = curve();
        let step = 0.01 * c.v_oc;
        let mut s = PnoState::new(0.3 * c.v_oc, step);
        let v_mpp = c.mpp().0;
        let mut hit = None;
        for k in 0..200 {
            s = pno_step(&s, &c).0;
            if (s.v_op - v_mpp).abs() <= 2.0 * step {
                hit = Some(k);
                break;
            }
        }
        assert!(hit.is_some());
        for _ in 0..50 {
            s = pno_step(&s, &c).0;
            assert!((s.v_op - v_mpp).abs() <= 2.0 * step);
        }

        c.irradiance = 0.3;
        let v_new = c.mpp().0;
        let mut inside = 0;
        for _ in 0..200 {
            s = pno_step(&s, &c).0;
            inside = if (s.v_op - v_new).abs() <= 2.0 * step { inside + 1 } else { 0 };
        }
        assert!(inside > 20);
    }

    #[test]
    fn pno_started_at_mpp_stays_in_band() {
        let c = curve();
        let step = 5.0;
        let v_mpp = c.mpp().0;
        let mut s = PnoState::new(v_mpp, step);
        for _ in 0..500 {
            s = pno_step(&s, &c).0;
            assert!((s.v_op - v_mpp).abs() <= step + 1e-9);
        }
    }

    #[test]
    fn battery_examples() {
        let b = BatteryStore {
            soc: 0.0,
            e_cap: 3.6e9,
            p_max_chg: 1e6,
            p_max_dis: 1e6,
        };
        assert_eq!(battery_dispatch(&b, 5e5, 1.0).0, 0.0);

        let b = BatteryStore { soc: 0.5, ..b };
        let (p, next) = battery_dispatch(&b, 5e5, 2.0);
        assert_eq!(p, 5e5);
        assert_relative_eq!(next.soc, 0.5 - 1e6 / 3.6e9, epsilon = 1e-15);

        assert_eq!(battery_dispatch(&b, 2e6, 1.0).0, 1e6);
        assert_eq!(battery_dispatch(&b, -2e6, 1.0).0, -1e6);
    }

    proptest! {
        #[test]
        fn battery_energy_bookkeeping(reqs in proptest::collection::vec(-2e6f64..2e6, 1..300), soc in 0.0f64..1.0) {
            let mut b = BatteryStore { soc, e_cap: 1e8, p_max_chg: 1e6, p_max_dis: 1.5e6 };
            let start = b.soc;
            let dt = 1.0;
            let mut energy = 0.0;
            for r in reqs {
                let (p, n) = battery_dispatch(&b, r, dt);
                prop_assert!(n.soc >= 0.0 && n.soc <= 1.0);
                energy += p * dt;
                b = n;
            }
            let booked = b.e_cap * (start - b.soc);
            prop_assert!((energy - booked).abs() <= 1e-9 * b.e_cap.max(energy.abs()));
        }

        #[test]
        fn pno_stays_inside(v0 in 10.0f64..590.0, step in 0.5f64..50.0, g in 0.05f64..1.0) {
            let c = PvCurve { irradiance: g, ..curve() };
            let mut s = PnoState::new(v0, step);
            for _ in 0..300 {
                s = pno_step(&s, &c).0;
                prop_assert!(s.v_op > 0.0 && s.v_op < c.v_oc);
            }
        }

        #[test]
        fn power_monotone_in_irradiance(v in 0.0f64..600.0, g1 in 0.0f64..1.0, g2 in 0.0f64..1.0) {
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let a = pv_power(&PvCurve { irradiance: lo, ..curve() }, v).0;
            let b = pv_power(&PvCurve { irradiance: hi, ..curve() }, v).0;
            prop_assert!(a <= b + 1e-12);
        }

        #[test]
        fn curve_unimodal(g in 0.05f64..1.0) {
            let c = PvCurve { irradiance: g, ..curve() };
            let (v_mpp, _) = c.mpp();
            let mut prev = 0.0;
            for k in 1..=400 {
                let v = c.v_oc * k as f64 / 400.0;
                let p = pv_power(&c, v).0;
                if v < v_mpp { prop_assert!(p >= prev); } else if v > v_mpp + c.v_oc / 400.0 { prop_assert!(p <= prev); }
                prev = p;
            }
        }
    }
}
