//! Virtual synchronous generator control for an inverter-based DER.
//!
//! The inverter's active-power loop integrates the swing equation
//! `2H dω/dt = Tm − Te − D(ω − 1)` with a droop torque
//! `Tm = kf (f0 − f) + P_ref / ω` and `Te = Pe / ω`. The resulting virtual
//! rotor angle drives the voltage reference, whose magnitude follows the
//! reactive droop `E_r = E0 + kq (Q_ref − Q)`.
//!
//! With `h_virt == 0` the unit has no inertia: the speed becomes an algebraic
//! function of electrical power and the controller degenerates into plain
//! P-f droop.
//!
//! Small-signal quantities use a per-unit moment of inertia
//! `J = 2H / ω0²` (the SI definition with a unit base power) and a damping
//! coefficient in p.u. torque per rad/s, so that
//! `σ = −D / (2 J ω_s)` and `ω_n = sqrt(P_max cos θ_ig / (J ω_s))` are exactly
//! the eigenvalues of the linearized single-unit/infinite-bus loop.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::syncgen::{governor_target, governor_torque, swing_acceleration};
use crate::units::{PerUnitSystem, Phasor};

/// Voltage reference clamp, p.u.
pub const E_REF_MIN: f64 = 0.8;
pub const E_REF_MAX: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct VsgParams {
    /// Virtual inertia constant, s. Zero selects droop-only operation.
    pub h_virt: f64,
    /// Damping, p.u. torque per p.u. speed deviation.
    pub d_virt: f64,
    /// Frequency droop gain, p.u. torque per Hz.
    pub kf: f64,
    /// Reactive droop gain, p.u. voltage per p.u. VAr.
    pub kq: f64,
    /// Active/reactive references on the inverter base.
    pub p_ref: f64,
    pub q_ref: f64,
    /// Nominal EMF magnitude, p.u.
    pub e0: f64,
    /// Inverter rating, VA.
    pub s_rated: f64,
    /// Output filter reactance on the inverter base.
    pub x_filter: f64,
    /// Converter power limit, p.u. of rating.
    pub p_limit: f64,
    /// Converter current limit, p.u. of rating (applied to the Norton source).
    pub i_limit: f64,
    /// Droop lag, s (zero: algebraic droop).
    pub tg: f64,
    /// Voltage-reference lag, s.
    pub tv: f64,
}

impl Default for VsgParams {
    fn default() -> Self {
        VsgParams {
            h_virt: 4.0,
            d_virt: 0.0,
            kf: 0.0,
            kq: 0.0,
            p_ref: 0.0,
            q_ref: 0.0,
            e0: 1.0,
            s_rated: 100e6,
            x_filter: 0.15,
            p_limit: 1.0,
            i_limit: f64::INFINITY,
            tg: 0.0,
            tv: 0.05,
        }
    }
}

impl VsgParams {
    pub fn validate(&self, base: &PerUnitSystem) -> Result<()> {
        let nonneg = [("h_virt", self.h_virt), ("d_virt", self.d_virt), ("kf", self.kf), ("kq", self.kq), ("tg", self.tg)];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::Invalid(format!("vsg {name} must be non-negative, got {v}")));
            }
        }
        let pos = [("s_rated", self.s_rated), ("x_filter", self.x_filter), ("e0", self.e0), ("tv", self.tv), ("i_limit", self.i_limit)];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::Invalid(format!("vsg {name} must be positive, got {v}")));
            }
        }
        if !(self.p_limit >= self.p_ref && self.p_ref >= 0.0) {
            return Err(Error::Invalid(format!(
                "vsg requires p_limit >= p_ref >= 0 (p_limit {}, p_ref {})",
                self.p_limit, self.p_ref
            )));
        }
        if self.h_virt == 0.0 {
            if self.droop_gain(base) <= 0.0 {
                return Err(Error::Invalid("vsg with h_virt = 0 needs kf or d_virt > 0".into()));
            }
            if self.tg > 0.0 {
                return Err(Error::Invalid("vsg with h_virt = 0 requires tg = 0".into()));
            }
        }
        Ok(())
    }

    /// Virtual moment of inertia in kg·m².
    pub fn j_virt(&self, base: &PerUnitSystem) -> f64 {
        j_from_h(self.h_virt, self.s_rated, base.omega0())
    }

    /// Static power-frequency gain `kf f0 + D`, p.u. power per p.u. speed.
    pub fn droop_gain(&self, base: &PerUnitSystem) -> f64 {
        self.kf * base.f0() + self.d_virt
    }

    pub fn x_filter_system(&self, base: &PerUnitSystem) -> f64 {
        self.x_filter * base.s_base() / self.s_rated
    }

    /// Per-unit swing coefficients for [`small_signal`].
    pub fn swing_coefficients(&self, base: &PerUnitSystem) -> SwingCoefficients {
        let w0 = base.omega0();
        SwingCoefficients {
            j: j_from_h(self.h_virt, 1.0, w0),
            d: self.droop_gain(base) / w0,
            omega_s: w0,
        }
    }
}

/// `J = 2 H S / ω0²`.
pub fn j_from_h(h: f64, s_rated: f64, omega0: f64) -> f64 {
    2.0 * h * s_rated / (omega0 * omega0)
}

/// Inverse of [`j_from_h`].
pub fn h_from_j(j: f64, s_rated: f64, omega0: f64) -> f64 {
    j * omega0 * omega0 / (2.0 * s_rated)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VsgState {
    /// Virtual rotor angle in the synchronous reference frame, rad
    /// (unwrapped). The absolute electrical angle is `theta + ω0 t`.
    pub theta: f64,
    /// Virtual speed, p.u.
    pub omega: f64,
    /// Voltage reference magnitude, p.u.
    pub e_ref: f64,
    /// Droop torque state (only evolves when `tg > 0`).
    pub tm_gov: f64,
}

impl VsgState {
    /// Electrical angle fed to the Park transform at time `t`.
    pub fn electrical_angle(&self, t: f64, omega0: f64) -> f64 {
        self.theta + omega0 * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VsgDerivative {
    /// Rate of the synchronous-frame angle, `ω0 (ω − 1)`; the absolute
    /// electrical angle advances at `ω0 ω`.
    pub dtheta: f64,
    pub domega: f64,
    pub dtm_gov: f64,
    pub de_ref: f64,
    /// Clamped output of the reactive droop law.
    pub e_target: f64,
    /// The mechanical torque hit `p_limit`.
    pub power_limited: bool,
}

/// Reactive droop law with the voltage clamp. Returns (value, clamped).
pub fn voltage_reference(params: &VsgParams, q: f64) -> (f64, bool) {
    let raw = params.e0 + params.kq * (params.q_ref - q);
    let clamped = raw.clamp(E_REF_MIN, E_REF_MAX);
    (clamped, clamped != raw)
}

/// Derivative of the VSG states for measured electrical power `p_e`,
/// reactive power `q` (both on the inverter base) and frequency `f_meas` (Hz).
/// Requires `h_virt > 0`; see [`droop_speed`] for the inertia-less case.
pub fn vsg_derivatives(params: &VsgParams, state: &VsgState, p_e: f64, q: f64, f_meas: f64, base: &PerUnitSystem) -> VsgDerivative {
    let target = governor_target(params.kf, base.f0(), f_meas, params.p_ref, state.omega);
    let t_m_raw = governor_torque(params.tg, state.tm_gov, target);
    let t_m = t_m_raw.clamp(-params.p_limit, params.p_limit);
    let (e_target, _) = voltage_reference(params, q);
    VsgDerivative {
        dtheta: base.omega0() * (state.omega - 1.0),
        domega: swing_acceleration(params.h_virt, params.d_virt, t_m, p_e, state.omega),
        dtm_gov: if params.tg > 0.0 {
            (target - state.tm_gov) / params.tg
        } else {
            0.0
        },
        de_ref: (e_target - state.e_ref) / params.tv,
        e_target,
        power_limited: t_m != t_m_raw,
    }
}

/// Speed of an inertia-less unit: the positive root of
/// `K ω² − K ω − (P_ref − P_e) = 0`, i.e. torque balance with `f = ω f0`.
/// Returns NaN when no positive solution exists.
pub fn droop_speed(params: &VsgParams, p_e: f64, base: &PerUnitSystem) -> f64 {
    let k = params.droop_gain(base);
    let disc = 1.0 + 4.0 * (params.p_ref - p_e) / k;
    if disc < 0.0 {
        return f64::NAN;
    }
    0.5 * (1.0 + disc.sqrt())
}

/// Norton current `e_ref∠θ / (j x_f)` on the system base, magnitude limited
/// to `i_limit`. Returns the current and whether the limit engaged.
pub fn vsg_norton(params: &VsgParams, state: &VsgState, base: &PerUnitSystem) -> (Phasor, bool) {
    let e = Phasor::from_polar(state.e_ref, state.theta);
    let i = e / Complex64::new(0.0, params.x_filter_system(base));
    let limit = params.i_limit * params.s_rated / base.s_base();
    let mag = i.norm();
    if mag > limit {
        (i * (limit / mag), true)
    } else {
        (i, false)
    }
}

/// Classical two-source transfer limit `E V / X`.
pub fn p_max_estimate(e_mag: f64, v_grid: f64, x_eq: f64) -> f64 {
    e_mag * v_grid / x_eq
}

/// Coefficients of the linearized swing loop: per-unit `J`, damping `D` in
/// p.u. torque per rad/s, synchronous speed in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingCoefficients {
    pub j: f64,
    pub d: f64,
    pub omega_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallSignalPoint {
    pub p_max: f64,
    pub theta_ig: f64,
    pub omega_s: f64,
    pub sigma: f64,
    pub omega_n: f64,
    pub xi: f64,
}

/// `P_max cos θ_ig`, rejected when it is not clearly positive (values at
/// rounding level of `P_max` count as the limit itself).
fn synchronizing_power(p_max: f64, theta_ig: f64) -> Result<f64> {
    let sync = p_max * theta_ig.cos();
    if !(sync > 1e-12 * p_max.abs()) {
        return Err(Error::BeyondStabilityLimit(sync));
    }
    Ok(sync)
}

pub fn small_signal(coeffs: &SwingCoefficients, p_max: f64, theta_ig: f64) -> Result<SmallSignalPoint> {
    let sync = synchronizing_power(p_max, theta_ig)?;
    let SwingCoefficients { j, d, omega_s } = *coeffs;
    let sigma = -d / (2.0 * j * omega_s);
    let omega_n = (sync / (j * omega_s)).sqrt();
    Ok(SmallSignalPoint {
        p_max,
        theta_ig,
        omega_s,
        sigma,
        omega_n,
        xi: -sigma / omega_n,
    })
}

/// Invert [`small_signal`]: `(J, D)` that place the swing mode at the target
/// real part and damping ratio.
pub fn tune_jd(target_xi: f64, target_sigma: f64, p_max: f64, theta_ig: f64, omega_s: f64) -> Result<(f64, f64)> {
    if !(target_xi > 0.0) {
        return Err(Error::InfeasibleTuning(format!("damping ratio must be positive, got {target_xi}")));
    }
    if !(target_sigma < 0.0) {
        return Err(Error::InfeasibleTuning(format!("real part must be negative, got {target_sigma}")));
    }
    let omega_n = -target_sigma / target_xi;
    if !(omega_n > 0.0 && omega_n.is_finite()) {
        return Err(Error::InfeasibleTuning(format!("natural frequency {omega_n} is not positive")));
    }
    let sync = synchronizing_power(p_max, theta_ig)?;
    let j = sync / (omega_n * omega_n * omega_s);
    let d = -2.0 * target_sigma * j * omega_s;
    Ok((j, d))
}

/// VSG parameters that realize tuned per-unit `(J, D)`: the inertia constant
/// and the damping left after the droop contribution `kf f0`.
pub fn vsg_params_from_jd(j: f64, d: f64, kf: f64, base: &PerUnitSystem) -> (f64, f64) {
    let w0 = base.omega0();
    (h_from_j(j, 1.0, w0), d * w0 - kf * base.f0())
}
