//! dq-frame cascaded voltage/current control for the inverter output stage,
//! with the power-invariant Park transform and an LC-filter average plant
//! used as a standalone testbed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::rk4_step;

const TWO_PI_3: f64 = 2.0 * PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AbcFrame {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DqFrame {
    pub d: f64,
    pub q: f64,
    pub zero: f64,
}

impl AbcFrame {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn norm_sq(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c
    }
}

impl DqFrame {
    pub fn new(d: f64, q: f64, zero: f64) -> Self {
        Self { d, q, zero }
    }

    pub fn norm_sq(&self) -> f64 {
        self.d * self.d + self.q * self.q + self.zero * self.zero
    }
}

/// Rows of the sqrt(2/3)-scaled Park matrix at angle `gamma`.
pub fn park_matrix(gamma: f64) -> [[f64; 3]; 3] {
    let k = (2.0f64 / 3.0).sqrt();
    let z = k / 2.0f64.sqrt();
    [
        [k * gamma.cos(), k * (gamma - TWO_PI_3).cos(), k * (gamma + TWO_PI_3).cos()],
        [k * gamma.sin(), k * (gamma - TWO_PI_3).sin(), k * (gamma + TWO_PI_3).sin()],
        [z, z, z],
    ]
}

pub fn park(abc: AbcFrame, gamma: f64) -> DqFrame {
    let m = park_matrix(gamma);
    let x = [abc.a, abc.b, abc.c];
    let row = |r: &[f64; 3]| r[0] * x[0] + r[1] * x[1] + r[2] * x[2];
    DqFrame {
        d: row(&m[0]),
        q: row(&m[1]),
        zero: row(&m[2]),
    }
}

/// The Park matrix is orthonormal, so the inverse is its transpose.
pub fn inverse_park(dq0: DqFrame, gamma: f64) -> AbcFrame {
    let m = park_matrix(gamma);
    let y = [dq0.d, dq0.q, dq0.zero];
    let col = |c: usize| m[0][c] * y[0] + m[1][c] * y[1] + m[2][c] * y[2];
    AbcFrame {
        a: col(0),
        b: col(1),
        c: col(2),
    }
}

/// Balanced three-phase sine reference `E sin(ωt)`, `E sin(ωt − 2π/3)`,
/// `E sin(ωt + 2π/3)`.
pub fn reference_abc(e_mag: f64, omega: f64, t: f64) -> AbcFrame {
    let wt = omega * t;
    AbcFrame {
        a: e_mag * wt.sin(),
        b: e_mag * (wt - TWO_PI_3).sin(),
        c: e_mag * (wt + TWO_PI_3).sin(),
    }
}

/// Discrete PI with output clamp and conditional-integration anti-windup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiState {
    pub kp: f64,
    pub ki: f64,
    #[serde(default)]
    pub integ: f64,
    pub limit: f64,
    #[serde(default = "default_true")]
    pub anti_windup: bool,
}

fn default_true() -> bool {
    true
}

impl PiState {
    pub fn new(kp: f64, ki: f64, limit: f64) -> Self {
        PiState {
            kp,
            ki,
            integ: 0.0,
            limit,
            anti_windup: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.limit > 0.0) {
            return Err(Error::Invalid(format!("PI limit must be positive, got {}", self.limit)));
        }
        Ok(())
    }
}

/// One controller step: `out = kp e + integ`, then `integ += ki e dt`.
/// With anti-windup the integrator holds while the output is saturated in
/// the direction of the error, and never leaves `[-limit, limit]`.
pub fn pi_step(state: &PiState, error: f64, dt: f64) -> (f64, PiState) {
    let raw = state.kp * error + state.integ;
    let out = raw.clamp(-state.limit, state.limit);
    let mut next = *state;
    let winding = out != raw && raw.signum() == error.signum();
    if !(state.anti_windup && winding) {
        next.integ += state.ki * error * dt;
        if state.anti_windup {
            next.integ = next.integ.clamp(-state.limit, state.limit);
        }
    }
    (out, next)
}

/// Controller structure around the LC filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterParams {
    /// Filter inductor resistance and reactance, p.u.
    pub r_f: f64,
    pub x_f: f64,
    /// Filter capacitor susceptance, p.u.
    pub b_c: f64,
    /// Resistive load on the capacitor, p.u.
    pub r_load: f64,
    /// Frame speed, p.u.
    #[serde(default = "one")]
    pub omega: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            r_f: 0.01,
            x_f: 0.1,
            b_c: 0.05,
            r_load: 1.0,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadedLoops {
    pub v_d: PiState,
    pub v_q: PiState,
    pub i_d: PiState,
    pub i_q: PiState,
    /// Current reference clamp, p.u.
    pub i_limit: f64,
    /// Include `ωL`/`ωC` cross-coupling and voltage feed-forward.
    #[serde(default = "default_true")]
    pub decoupling: bool,
}

impl CascadedLoops {
    /// Shipped gains for the default filter: the d-axis voltage step settles
    /// below 1e-3 p.u. error well inside 0.2 s.
    pub fn default_gains() -> Self {
        CascadedLoops {
            v_d: PiState::new(0.5, 100.0, 3.0),
            v_q: PiState::new(0.5, 100.0, 3.0),
            i_d: PiState::new(0.5, 20.0, 3.0),
            i_q: PiState::new(0.5, 20.0, 3.0),
            i_limit: 3.0,
            decoupling: true,
        }
    }
}

/// dq quantities with the zero sequence dropped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq {
    pub d: f64,
    pub q: f64,
}

impl Dq {
    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }
}

/// Outer voltage PI produces the current reference, inner current PI the
/// modulation voltage. Returns the modulation voltage and updated loops.
pub fn cascaded_vi_step(
    v_ref: Dq,
    v_meas: Dq,
    i_meas: Dq,
    loops: &CascadedLoops,
    filter: &FilterParams,
    dt: f64,
) -> (Dq, CascadedLoops) {
    let w = filter.omega;
    let (c_ff, l_ff) = if loops.decoupling { (w * filter.b_c, w * filter.x_f) } else { (0.0, 0.0) };
    let mut next = *loops;

    let (od, v_d) = pi_step(&loops.v_d, v_ref.d - v_meas.d, dt);
    let (oq, v_q) = pi_step(&loops.v_q, v_ref.q - v_meas.q, dt);
    next.v_d = v_d;
    next.v_q = v_q;
    let i_ref = Dq::new(
        (od - c_ff * v_meas.q).clamp(-loops.i_limit, loops.i_limit),
        (oq + c_ff * v_meas.d).clamp(-loops.i_limit, loops.i_limit),
    );

    let (ud, i_d) = pi_step(&loops.i_d, i_ref.d - i_meas.d, dt);
    let (uq, i_q) = pi_step(&loops.i_q, i_ref.q - i_meas.q, dt);
    next.i_d = i_d;
    next.i_q = i_q;
    let v_ff = if loops.decoupling { v_meas } else { Dq::default() };
    let m = Dq::new(ud + v_ff.d + l_ff * i_meas.q, uq + v_ff.q - l_ff * i_meas.d);
    (m, next)
}

/// LC filter with resistive load, average model in the dq frame.
/// State order: `[i_d, i_q, v_d, v_q]`.
pub fn plant_derivative(filter: &FilterParams, omega_b: f64, u: Dq, x: &[f64], dx: &mut [f64]) {
    let (id, iq, vd, vq) = (x[0], x[1], x[2], x[3]);
    let w = filter.omega * omega_b;
    let l_inv = omega_b / filter.x_f;
    let c_inv = omega_b / filter.b_c;
    dx[0] = l_inv * (u.d - filter.r_f * id - vd) - w * iq;
    dx[1] = l_inv * (u.q - filter.r_f * iq - vq) + w * id;
    dx[2] = c_inv * (id - vd / filter.r_load) - w * vq;
    dx[3] = c_inv * (iq - vq / filter.r_load) + w * vd;
}

/// Testbed: one reference step on the d-axis voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedConfig {
    /// Control period, s.
    #[serde(default = "default_period")]
    pub dt: f64,
    pub t_end: f64,
    /// Base angular frequency, rad/s.
    #[serde(default = "default_omega_b")]
    pub omega_b: f64,
    /// Phase amplitude of the initial reference (the q-axis component is
    /// `sqrt(3/2) E`).
    pub e_mag: f64,
    /// Time and size of the d-axis reference step.
    pub step_time: f64,
    pub step_d: f64,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default = "CascadedLoops::default_gains")]
    pub loops: CascadedLoops,
}

fn default_period() -> f64 {
    100e-6
}

fn default_omega_b() -> f64 {
    2.0 * PI * 60.0
}

impl TestbedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.omega_b > 0.0) {
            return Err(Error::Invalid("testbed dt, t_end and omega_b must be positive".into()));
        }
        for pi in [&self.loops.v_d, &self.loops.v_q, &self.loops.i_d, &self.loops.i_q] {
            pi.validate()?;
        }
        if !(self.filter.x_f > 0.0 && self.filter.b_c > 0.0 && self.filter.r_load > 0.0) {
            return Err(Error::Invalid("filter x_f, b_c and r_load must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            dt: default_period(),
            t_end: 0.4,
            omega_b: default_omega_b(),
            e_mag: 1.0,
            step_time: 0.1,
            step_d: 0.1,
            filter: FilterParams::default(),
            loops: CascadedLoops::default_gains(),
        }
    }
}

/// Samples of one testbed run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TestbedTrace {
    pub t: Vec<f64>,
    pub v_ref: Vec<Dq>,
    pub v: Vec<Dq>,
    pub i: Vec<Dq>,
    pub m: Vec<Dq>,
    /// Phase voltages reconstructed with the frame angle `omega_b t`.
    pub v_abc: Vec<AbcFrame>,
}

impl TestbedTrace {
    /// Largest |v − v_ref| over samples with `t >= from`.
    pub fn max_error_after(&self, from: f64) -> f64 {
        self.t
            .iter()
            .zip(self.v.iter().zip(&self.v_ref))
            .filter(|(t, _)| **t >= from - 1e-12)
            .map(|(_, (v, r))| (v.d - r.d).abs().max((v.q - r.q).abs()))
            .fold(0.0, f64::max)
    }
}

/// Run the closed loop from rest. The reference is the Park image of the
/// balanced sine set, plus the d-axis step.
pub fn run_testbed(cfg: &TestbedConfig) -> Result<TestbedTrace> {
    cfg.validate()?;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut x = [0.0f64; 4];
    let mut loops = cfg.loops;
    let mut out = TestbedTrace::default();
    let w = cfg.filter.omega * cfg.omega_b;
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let base_ref = park(reference_abc(cfg.e_mag, w, t), w * t);
        let v_ref = Dq::new(base_ref.d + if t >= cfg.step_time - 1e-12 { cfg.step_d } else { 0.0 }, base_ref.q);
        let v = Dq::new(x[2], x[3]);
        let i = Dq::new(x[0], x[1]);
        let (m, next) = cascaded_vi_step(v_ref, v, i, &loops, &cfg.filter, cfg.dt);
        loops = next;
        rk4_step(&mut x, t, cfg.dt, |_, s, ds| plant_derivative(&cfg.filter, cfg.omega_b, m, s, ds));

        let t1 = t + cfg.dt;
        out.t.push(t1);
        out.v_ref.push(v_ref);
        out.v.push(Dq::new(x[2], x[3]));
        out.i.push(Dq::new(x[0], x[1]));
        out.m.push(m);
        out.v_abc.push(inverse_park(DqFrame::new(x[2], x[3], 0.0), w * t1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn park_zero_and_hand_example() {
        assert_eq!(park(AbcFrame::default(), 1.3), DqFrame::default());
        let dq = park(AbcFrame::new(1.0, -0.5, -0.5), 0.0);
        assert_relative_eq!(dq.d, (1.5f64).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(dq.d, 1.22474, epsilon = 1e-5);
        assert!(dq.q.abs() < 1e-12);
        assert!(dq.zero.abs() < 1e-12);

        let back = inverse_park(dq, 0.0);
        assert_relative_eq!(back.a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(back.b, -0.5, epsilon = 1e-12);
        assert_relative_eq!(back.c, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn balanced_set_is_constant_in_dq() {
        let w = 2.0 * PI * 60.0;
        let e = 1.1;
        for k in 0..=200 {
            let t = k as f64 / (200.0 * 60.0);
            let dq = park(reference_abc(e, w, t), w * t);
            assert!(dq.d.abs() < 1e-9);
            assert!((dq.q - (1.5f64).sqrt() * e).abs() < 1e-9);
            assert!(dq.zero.abs() < 1e-9);
        }
    }

    #[test]
    fn reference_examples() {
        let r = reference_abc(2.0, 377.0, 0.0);
        assert_eq!(r.a, 0.0);
        assert_relative_eq!(r.b, -2.0 * 0.8660254037844386, epsilon = 1e-12);
        assert_relative_eq!(r.c, 2.0 * 0.8660254037844386, epsilon = 1e-12);
        assert_eq!(reference_abc(0.0, 377.0, 0.3).norm_sq(), 0.0);
    }

    #[test]
    fn pi_examples() {
        let s = PiState::new(1.0, 10.0, 5.0);
        let (out, next) = pi_step(&s, 0.0, 0.001);
        assert_eq!(out, 0.0);
        assert_eq!(next, s);

        let (out, next) = pi_step(&s, 0.1, 0.001);
        assert_relative_eq!(out, 0.1);
        assert_relative_eq!(next.integ, 0.001, epsilon = 1e-15);

        let mut st = PiState::new(1.0, 10.0, 1.0);
        let mut last = 0.0;
        for _ in 0..1000 {
            let (o, n) = pi_step(&st, 5.0, 0.001);
            st = n;
            last = o;
            assert!(st.integ.abs() <= st.limit);
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn zero_error_gives_feed_forward() {
        let f = FilterParams::default();
        let loops = CascadedLoops::default_gains();
        let v = Dq::new(0.1, 1.2);
        // current equal to the capacitor decoupling term: zero current error
        let i = Dq::new(-f.b_c * v.q, f.b_c * v.d);
        let (m, _) = cascaded_vi_step(v, v, i, &loops, &f, 1e-4);
        assert_relative_eq!(m.d, v.d + f.x_f * i.q, epsilon = 1e-15);
        assert_relative_eq!(m.q, v.q - f.x_f * i.d, epsilon = 1e-15);
    }

    #[test]
    fn testbed_settles_with_default_gains() {
        let cfg = TestbedConfig::default();
        let tr = run_testbed(&cfg).unwrap();
        assert!(tr.max_error_after(cfg.step_time + 0.2) < 1e-3);
    }

    #[test]
    fn testbed_without_integrators_keeps_error() {
        let mut cfg = TestbedConfig::default();
        for pi in [&mut cfg.loops.v_d, &mut cfg.loops.v_q, &mut cfg.loops.i_d, &mut cfg.loops.i_q] {
            pi.ki = 0.0;
        }
        let tr = run_testbed(&cfg).unwrap();
        assert!(tr.max_error_after(cfg.t_end - 0.01) > 1e-2);
    }

    proptest! {
        #[test]
        fn park_orthonormal(gamma in -50.0f64..50.0) {
            let m = park_matrix(gamma);
            for r in 0..3 {
                for c in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[r][k] * m[c][k]).sum();
                    let want = if r == c { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn park_round_trip_and_power(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, g in -20.0f64..20.0) {
            let x = AbcFrame::new(a, b, c);
            let y = park(x, g);
            let back = inverse_park(y, g);
            prop_assert!((back.a - a).abs() < 1e-12 && (back.b - b).abs() < 1e-12 && (back.c - c).abs() < 1e-12);
            prop_assert!((y.norm_sq() - x.norm_sq()).abs() < 1e-12 * (1.0 + x.norm_sq()));
            let z = park(x, g + 2.0 * PI);
            prop_assert!((z.d - y.d).abs() < 1e-12 && (z.q - y.q).abs() < 1e-12);
        }

        #[test]
        fn phases_sum_to_zero(e in 0.0f64..2.0, t in 0.0f64..1.0) {
            let r = reference_abc(e, 377.0, t);
            prop_assert!((r.a + r.b + r.c).abs() < 1e-12);
        }

        #[test]
        fn integrator_stays_bounded(errs in proptest::collection::vec(-2.0f64..2.0, 1..400),
                                    kp in 0.0f64..2.0, ki in 0.1f64..200.0) {
            let mut s = PiState::new(kp, ki, 1.0);
            for e in errs {
                let (o, n) = pi_step(&s, e, 1e-3);
                prop_assert!(o.abs() <= 1.0);
                prop_assert!(n.integ.abs() <= 1.0);
                s = n;
            }
        }
    }
}
