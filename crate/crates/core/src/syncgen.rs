//! Classical synchronous machine: constant EMF behind transient reactance,
//! swing equation with damping, and a first-order-lag droop governor.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::units::{PerUnitSystem, Phasor};

/// Typical inertia range for synchronous machines, seconds.
pub const H_TYPICAL: (f64, f64) = (2.0, 10.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SyncMachineParams {
    /// Inertia constant on machine base, s.
    pub h: f64,
    /// Damping, p.u. torque per p.u. speed deviation.
    pub d: f64,
    /// Transient reactance on machine base.
    pub xd_t: f64,
    /// Governor droop gain, p.u. torque per Hz.
    pub kf: f64,
    /// Machine rating, VA.
    pub s_rated: f64,
    /// Governor lag, s. Zero makes the governor algebraic.
    pub tg: f64,
    /// Mechanical power setpoint on machine base (filled from power flow).
    pub p_ref: f64,
    /// Accept `h` outside `H_TYPICAL` with a warning instead of an error.
    pub allow_h_out_of_range: bool,
}

impl SyncMachineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.kf >= 0.0 && self.tg >= 0.0) {
            return Err(Error::Invalid("machine d, kf and tg must be non-negative".into()));
        }
        if !(self.xd_t > 0.0 && self.s_rated > 0.0) {
            return Err(Error::Invalid("machine xd_t and s_rated must be positive".into()));
        }
        if !(self.h > 0.0) {
            return Err(Error::Invalid(format!("machine inertia h must be positive, got {}", self.h)));
        }
        if !(H_TYPICAL.0..=H_TYPICAL.1).contains(&self.h) {
            if self.allow_h_out_of_range {
                log::warn!("machine inertia h = {} s is outside the typical 2..10 s range", self.h);
            } else {
                return Err(Error::Invalid(format!(
                    "machine inertia h = {} s outside 2..10 s (set allow_h_out_of_range to override)",
                    self.h
                )));
            }
        }
        Ok(())
    }

    /// Transient reactance on the system base.
    pub fn xd_system(&self, base: &PerUnitSystem) -> f64 {
        self.xd_t * base.s_base() / self.s_rated
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncMachineState {
    /// Rotor angle against the synchronous reference, rad.
    pub delta: f64,
    /// Speed, p.u.
    pub omega: f64,
    /// Internal EMF magnitude, p.u.
    pub e_mag: f64,
    /// Governor output torque, p.u. (only evolves when `tg > 0`).
    pub tm_gov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SyncMachineDerivative {
    pub ddelta: f64,
    pub domega: f64,
    pub dtm_gov: f64,
}

/// Droop governor torque target `kf (f0 - f) + p_ref / omega`.
pub(crate) fn governor_target(kf: f64, f0: f64, f_meas: f64, p_ref: f64, omega: f64) -> f64 {
    kf * (f0 - f_meas) + p_ref / omega
}

/// `d omega / dt` from `2H d omega/dt = Tm - Te - D (omega - 1)` with
/// `Te = Pe / omega`.
pub(crate) fn swing_acceleration(h: f64, d: f64, t_m: f64, p_e: f64, omega: f64) -> f64 {
    (t_m - p_e / omega - d * (omega - 1.0)) / (2.0 * h)
}

/// Mechanical torque applied by the governor at the current state.
pub(crate) fn governor_torque(tg: f64, state_torque: f64, target: f64) -> f64 {
    if tg > 0.0 {
        state_torque
    } else {
        target
    }
}

/// State derivative for a machine delivering `p_e` (machine base) with
/// measured frequency `f_meas` in Hz.
pub fn sg_derivatives(
    params: &SyncMachineParams,
    state: &SyncMachineState,
    p_e: f64,
    f_meas: f64,
    base: &PerUnitSystem,
) -> SyncMachineDerivative {
    let target = governor_target(params.kf, base.f0(), f_meas, params.p_ref, state.omega);
    let t_m = governor_torque(params.tg, state.tm_gov, target);
    SyncMachineDerivative {
        ddelta: base.omega0() * (state.omega - 1.0),
        domega: swing_acceleration(params.h, params.d, t_m, p_e, state.omega),
        dtm_gov: if params.tg > 0.0 {
            (target - state.tm_gov) / params.tg
        } else {
            0.0
        },
    }
}

/// Norton current `E'∠delta / (j xd')` on the system base.
pub fn sg_norton(params: &SyncMachineParams, state: &SyncMachineState, base: &PerUnitSystem) -> Phasor {
    let e = Phasor::from_polar(state.e_mag, state.delta);
    e / Complex64::new(0.0, params.xd_system(base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> PerUnitSystem {
        PerUnitSystem::new(100e6, 230e3, 60.0).unwrap()
    }

    fn params(h: f64) -> SyncMachineParams {
        SyncMachineParams {
            h,
            d: 0.0,
            xd_t: 0.3,
            kf: 0.0,
            s_rated: 100e6,
            tg: 0.0,
            p_ref: 0.8,
            allow_h_out_of_range: false,
        }
    }

    fn state(omega: f64) -> SyncMachineState {
        SyncMachineState {
            delta: 0.3,
            omega,
            e_mag: 1.05,
            tm_gov: 0.8,
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let mut p = params(4.0);
        p.kf = 0.3;
        p.tg = 0.5;
        p.d = 2.0;
        let d = sg_derivatives(&p, &state(1.0), 0.8, 60.0, &base());
        assert_eq!(d, SyncMachineDerivative::default());
    }

    #[test]
    fn acceleration_hand_value() {
        let mut p = params(5.0);
        p.p_ref = 1.0;
        let d = sg_derivatives(&p, &state(1.0), 0.8, 60.0, &base());
        assert_relative_eq!(d.domega, 0.02, epsilon = 1e-15);
    }

    #[test]
    fn doubling_h_halves_acceleration() {
        let a = sg_derivatives(&params(3.0), &state(1.0), 1.0, 60.0, &base()).domega;
        let b = sg_derivatives(&params(6.0), &state(1.0), 1.0, 60.0, &base()).domega;
        assert_relative_eq!(a, 2.0 * b, epsilon = 1e-15);
    }

    #[test]
    fn governor_lag_tracks_droop_target() {
        let mut p = params(4.0);
        p.kf = 0.5;
        p.tg = 0.5;
        let s = state(1.0);
        let d = sg_derivatives(&p, &s, 0.8, 59.9, &base());
        assert_relative_eq!(d.dtm_gov, (0.5 * 0.1 + 0.8 - 0.8) / 0.5, epsilon = 1e-12);
        assert_relative_eq!(d.ddelta, 0.0);
    }

    #[test]
    fn norton_examples() {
        let p = params(4.0);
        let s = SyncMachineState {
            delta: 0.0,
            omega: 1.0,
            e_mag: 1.0,
            tm_gov: 0.0,
        };
        let i = sg_norton(&p, &s, &base());
        assert_relative_eq!(i.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(i.im, -1.0 / 0.3, epsilon = 1e-12);

        let zero = sg_norton(&p, &SyncMachineState { e_mag: 0.0, ..s }, &base());
        assert_eq!(zero.norm(), 0.0);

        // 900 MVA machine on a 100 MVA base: current scales by 9.
        let big = SyncMachineParams { s_rated: 900e6, ..p };
        assert_relative_eq!(sg_norton(&big, &s, &base()).norm(), 9.0 / 0.3, epsilon = 1e-12);
    }

    #[test]
    fn inertia_range_validation() {
        assert!(params(4.0).validate().is_ok());
        assert!(params(1.0).validate().is_err());
        assert!(SyncMachineParams { allow_h_out_of_range: true, ..params(1.0) }.validate().is_ok());
        assert!(SyncMachineParams { xd_t: 0.0, ..params(4.0) }.validate().is_err());
    }
}
