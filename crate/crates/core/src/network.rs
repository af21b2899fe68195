//! Grid topology, admittance matrix assembly, Newton-Raphson power flow and
//! the per-step linear network solve used during time-domain simulation.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::Phasor;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub const PF_TOLERANCE: f64 = 1e-8;
pub const PF_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    /// Voltage setpoint for slack and PV buses, p.u.
    pub v_set: f64,
    /// Constant-power load, p.u. on the system base.
    pub p_load: f64,
    pub q_load: f64,
    /// Fixed shunt admittance g + jb, p.u.
    pub shunt: Phasor,
    /// Scheduled generation. `p_gen` is used on PV and PQ buses, `q_gen`
    /// only on PQ buses.
    pub p_gen: f64,
    pub q_gen: f64,
}

impl Bus {
    pub fn new(id: impl Into<String>, kind: BusKind) -> Self {
        Bus {
            id: id.into(),
            kind,
            v_set: 1.0,
            p_load: 0.0,
            q_load: 0.0,
            shunt: Phasor::new(0.0, 0.0),
            p_gen: 0.0,
            q_gen: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b: f64,
    /// Off-nominal turns ratio on the from side, 1.0 if none.
    pub tap: f64,
}

impl Branch {
    pub fn line(id: impl Into<String>, from: impl Into<String>, to: impl Into<String>, r: f64, x: f64) -> Self {
        Branch {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            r,
            x,
            b: 0.0,
            tap: 1.0,
        }
    }

    fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }

    /// Two-port admittance block `[[yff, yft], [ytf, ytt]]`.
    fn stamp(&self) -> [Complex64; 4] {
        let ys = self.series_admittance();
        let half_b = Complex64::new(0.0, self.b / 2.0);
        let t = self.tap;
        [(ys + half_b) / (t * t), -ys / t, -ys / t, ys + half_b]
    }
}

/// Buses and branches of one scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridModel {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl GridModel {
    pub fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id.as_str(), i).is_some() {
                return Err(Error::Network(format!("duplicate bus id `{}`", b.id)));
            }
            if b.kind != BusKind::Pq && !(b.v_set > 0.5 && b.v_set < 1.5) {
                return Err(Error::Network(format!(
                    "bus `{}` v_set {} outside (0.5, 1.5) p.u.",
                    b.id, b.v_set
                )));
            }
        }
        for br in &self.branches {
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::Network(format!(
                    "branch `{}` has zero impedance; merge its buses instead",
                    br.id
                )));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Network(format!("branch `{}` tap must be positive", br.id)));
            }
        }
        Ok(())
    }

    /// Connected components as lists of bus indices.
    pub fn islands(&self) -> Result<Vec<Vec<usize>>> {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in &self.branches {
            let (f, t) = endpoints(&index, br)?;
            let (a, b) = (find(&mut parent, f), find(&mut parent, t));
            if a != b {
                parent[a] = b;
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        Ok(groups.into_values().collect())
    }
}

fn endpoints(index: &HashMap<&str, usize>, br: &Branch) -> Result<(usize, usize)> {
    let f = index.get(br.from.as_str()).copied();
    let t = index.get(br.to.as_str()).copied();
    match (f, t) {
        (Some(f), Some(t)) => Ok((f, t)),
        _ => Err(Error::Network(format!(
            "branch `{}` references missing bus (`{}` -> `{}`)",
            br.id, br.from, br.to
        ))),
    }
}

/// Sparse bus admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct YBus {
    n: usize,
    entries: BTreeMap<(usize, usize), Complex64>,
}

impl YBus {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries.get(&(i, j)).copied().unwrap_or_default()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    fn add(&mut self, i: usize, j: usize, y: Complex64) {
        *self.entries.entry((i, j)).or_default() += y;
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &y) in &self.entries {
            m[(i, j)] = y;
        }
        m
    }

    pub fn mul_vec(&self, v: &[Phasor]) -> Vec<Phasor> {
        let mut out = vec![Complex64::default(); self.n];
        for (&(i, j), &y) in &self.entries {
            out[i] += y * v[j];
        }
        out
    }
}

/// Standard Y-bus stamping: off-diagonals `-y/tap`, diagonals the sum of
/// incident admittances, bus shunts on the diagonal.
pub fn build_ybus(buses: &[Bus], branches: &[Branch]) -> Result<YBus> {
    let index: HashMap<&str, usize> = buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    if index.len() != buses.len() {
        return Err(Error::Network("bus ids are not unique".into()));
    }
    let mut y = YBus {
        n: buses.len(),
        entries: BTreeMap::new(),
    };
    for (i, b) in buses.iter().enumerate() {
        if b.shunt != Complex64::default() {
            y.add(i, i, b.shunt);
        }
    }
    for br in branches {
        let (f, t) = endpoints(&index, br)?;
        let [yff, yft, ytf, ytt] = br.stamp();
        y.add(f, f, yff);
        y.add(f, t, yft);
        y.add(t, f, ytf);
        y.add(t, t, ytt);
    }
    Ok(y)
}

/// Solved power-flow point: bus voltages and net bus injections (generation
/// minus load), all p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub v: Vec<Phasor>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
}

impl OperatingPoint {
    /// Generation at bus `i` (net injection plus the bus load).
    pub fn generation(&self, bus: &Bus, i: usize) -> Complex64 {
        Complex64::new(self.p_inj[i] + bus.p_load, self.q_inj[i] + bus.q_load)
    }
}

fn injections(y: &YBus, v: &[Phasor]) -> Vec<Complex64> {
    let i = y.mul_vec(v);
    v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
}

/// Newton-Raphson in polar coordinates.
pub fn solve_power_flow(grid: &GridModel) -> Result<OperatingPoint> {
    grid.validate()?;
    for island in grid.islands()? {
        let slacks = island.iter().filter(|&&i| grid.buses[i].kind == BusKind::Slack).count();
        if slacks != 1 {
            let ids: Vec<&str> = island.iter().map(|&i| grid.buses[i].id.as_str()).collect();
            return Err(Error::Network(format!(
                "island {:?} has {} slack buses, expected exactly one",
                ids, slacks
            )));
        }
    }
    let y = build_ybus(&grid.buses, &grid.branches)?;
    let n = grid.buses.len();

    let pvpq: Vec<usize> = (0..n).filter(|&i| grid.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| grid.buses[i].kind == BusKind::Pq).collect();
    let p_spec: Vec<f64> = grid.buses.iter().map(|b| b.p_gen - b.p_load).collect();
    let q_spec: Vec<f64> = grid.buses.iter().map(|b| b.q_gen - b.q_load).collect();

    let mut vm: Vec<f64> = grid
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];

    let phasors = |vm: &[f64], va: &[f64]| -> Vec<Phasor> {
        vm.iter().zip(va).map(|(&m, &a)| Phasor::from_polar(m, a)).collect()
    };
    let mismatch = |v: &[Phasor]| -> (Vec<f64>, f64) {
        let s = injections(&y, v);
        let mut f = Vec::with_capacity(pvpq.len() + pq.len());
        f.extend(pvpq.iter().map(|&i| p_spec[i] - s[i].re));
        f.extend(pq.iter().map(|&i| q_spec[i] - s[i].im));
        let norm = f.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) });
        (f, norm)
    };

    let ydense = y.to_dense();
    let mut v = phasors(&vm, &va);
    let (mut f, mut norm) = mismatch(&v);
    let mut iterations = 0;
    while !(norm < PF_TOLERANCE) {
        if iterations >= PF_MAX_ITER || !norm.is_finite() {
            return Err(Error::PowerFlowDiverged { iterations, mismatch: norm });
        }
        iterations += 1;

        let jac = jacobian(&ydense, &v, &pvpq, &pq);
        let step = jac
            .lu()
            .solve(&DVector::from_vec(f.clone()))
            .ok_or(Error::PowerFlowDiverged { iterations, mismatch: norm })?;
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += step[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += step[pvpq.len() + k];
        }
        v = phasors(&vm, &va);
        (f, norm) = mismatch(&v);
    }
    let _ = f;
    let s = injections(&y, &v);
    Ok(OperatingPoint {
        p_inj: s.iter().map(|s| s.re).collect(),
        q_inj: s.iter().map(|s| s.im).collect(),
        v,
        iterations,
    })
}

/// Jacobian of the [P(pvpq); Q(pq)] mismatch with respect to
/// [theta(pvpq); |V|(pq)].
fn jacobian(y: &DMatrix<Complex64>, v: &[Phasor], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let ibus = y * &vv;
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();

    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dVm = diag(V) conj(Y diag(Vnorm)) + conj(diag(I)) diag(Vnorm)
    let mut ds_dva = DMatrix::<Complex64>::zeros(n, n);
    let mut ds_dvm = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let yik = y[(i, k)];
            let diag_i = if i == k { ibus[i] } else { Complex64::default() };
            ds_dva[(i, k)] = J * v[i] * (diag_i - yik * v[k]).conj();
            let mut dm = v[i] * (yik * vnorm[k]).conj();
            if i == k {
                dm += ibus[i].conj() * vnorm[i];
            }
            ds_dvm[(i, k)] = dm;
        }
    }

    let m = pvpq.len() + pq.len();
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for (r, &i) in pvpq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(r, c)] = ds_dva[(i, k)].re;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(r, pvpq.len() + c)] = ds_dvm[(i, k)].re;
        }
    }
    for (r, &i) in pq.iter().enumerate() {
        for (c, &k) in pvpq.iter().enumerate() {
            jac[(pvpq.len() + r, c)] = ds_dva[(i, k)].im;
        }
        for (c, &k) in pq.iter().enumerate() {
            jac[(pvpq.len() + r, pvpq.len() + c)] = ds_dvm[(i, k)].im;
        }
    }
    jac
}

/// Constant admittance drawing `s` (p.u., consumption positive) at voltage `v`.
pub fn admittance_for_power(s: Complex64, v_mag: f64) -> Complex64 {
    s.conj() / (v_mag * v_mag)
}

/// Factorized `(Y + Y_loads + Y_devices) V = I` for the dynamic phase.
#[derive(Debug, Clone)]
pub struct NetworkSolver {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl NetworkSolver {
    /// `extra_diag` adds per-bus admittance (loads, Norton device admittances).
    pub fn new(ybus: &YBus, extra_diag: &[Complex64]) -> Result<Self> {
        let mut m = ybus.to_dense();
        for (i, y) in extra_diag.iter().enumerate() {
            m[(i, i)] += y;
        }
        let lu = m.lu();
        let pivots: Vec<f64> = lu.u().diagonal().iter().map(|p| p.norm()).collect();
        let largest = pivots.iter().cloned().fold(0.0, f64::max);
        if !lu.is_invertible() || pivots.iter().any(|&p| !(p > 1e-12 * largest)) {
            return Err(Error::Network("singular network matrix".into()));
        }
        Ok(Self { lu, n: ybus.n() })
    }

    pub fn solve(&self, injections: &[Phasor]) -> Result<Vec<Phasor>> {
        debug_assert_eq!(injections.len(), self.n);
        let b = DVector::from_column_slice(injections);
        let x = self
            .lu
            .solve(&b)
            .ok_or_else(|| Error::Network("singular network matrix".into()))?;
        Ok(x.iter().copied().collect())
    }
}

/// Complex power entering each branch at its from and to terminals.
pub fn branch_flows(buses: &[Bus], branches: &[Branch], v: &[Phasor]) -> Result<Vec<(Complex64, Complex64)>> {
    let index: HashMap<&str, usize> = buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    branches
        .iter()
        .map(|br| {
            let (f, t) = endpoints(&index, br)?;
            let [yff, yft, ytf, ytt] = br.stamp();
            let i_f = yff * v[f] + yft * v[t];
            let i_t = ytf * v[f] + ytt * v[t];
            Ok((v[f] * i_f.conj(), v[t] * i_t.conj()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus(p_load: f64, q_load: f64) -> GridModel {
        let mut slack = Bus::new("1", BusKind::Slack);
        slack.v_set = 1.0;
        let mut load = Bus::new("2", BusKind::Pq);
        load.p_load = p_load;
        load.q_load = q_load;
        GridModel {
            buses: vec![slack, load],
            branches: vec![Branch::line("L12", "1", "2", 0.0, 0.1)],
        }
    }

    #[test]
    fn ybus_two_bus_stamp() {
        let g = two_bus(0.0, 0.0);
        let y = build_ybus(&g.buses, &g.branches).unwrap();
        assert_relative_eq!(y.get(0, 0).im, -10.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 1).im, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 0).im, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 1).im, -10.0, epsilon = 1e-12);
        assert_eq!(y.get(0, 1).re, 0.0);
    }

    #[test]
    fn ybus_shunts_only() {
        let mut a = Bus::new("a", BusKind::Slack);
        a.shunt = c(0.1, 0.2);
        let b = Bus::new("b", BusKind::Pq);
        let y = build_ybus(&[a, b], &[]).unwrap();
        assert_eq!(y.get(0, 0), c(0.1, 0.2));
        assert_eq!(y.get(1, 1), c(0.0, 0.0));
        assert_eq!(y.nnz(), 1);
    }

    #[test]
    fn ybus_tap_stamp() {
        // Hand stamping with y = 1/(j0.1) = -10j, tap 2 on the from side:
        // yff = y/4, yft = ytf = -y/2, ytt = y.
        let mut g = two_bus(0.0, 0.0);
        g.branches[0].tap = 2.0;
        let y = build_ybus(&g.buses, &g.branches).unwrap();
        assert_relative_eq!(y.get(0, 0).im, -2.5, epsilon = 1e-12);
        assert_relative_eq!(y.get(0, 1).im, 5.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 0).im, 5.0, epsilon = 1e-12);
        assert_relative_eq!(y.get(1, 1).im, -10.0, epsilon = 1e-12);
        assert!(y.get(0, 0) != y.get(1, 1));
    }

    #[test]
    fn ybus_dangling_branch_names_branch() {
        let g = two_bus(0.0, 0.0);
        let mut branches = g.branches.clone();
        branches.push(Branch::line("Lbad", "1", "9", 0.0, 0.1));
        let err = build_ybus(&g.buses, &branches).unwrap_err().to_string();
        assert!(err.contains("Lbad"), "{err}");
    }

    #[test]
    fn ybus_row_sums_equal_shunts() {
        let mut buses: Vec<Bus> = (0..4).map(|i| Bus::new(i.to_string(), BusKind::Pq)).collect();
        buses[1].shunt = c(0.05, -0.3);
        buses[3].shunt = c(0.0, 0.7);
        let branches = vec![
            Branch::line("a", "0", "1", 0.01, 0.1),
            Branch::line("b", "1", "2", 0.02, 0.2),
            Branch::line("c", "2", "3", 0.0, 0.05),
            Branch::line("d", "3", "0", 0.03, 0.15),
        ];
        let y = build_ybus(&buses, &branches).unwrap();
        for (i, bus) in buses.iter().enumerate() {
            let s: Complex64 = (0..4).map(|j| y.get(i, j)).sum();
            assert!((s - bus.shunt).norm() < 1e-12);
            for j in 0..4 {
                assert!((y.get(i, j) - y.get(j, i)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn power_flow_no_load() {
        let op = solve_power_flow(&two_bus(0.0, 0.0)).unwrap();
        for v in &op.v {
            assert!((v - c(1.0, 0.0)).norm() < 1e-12);
        }
        assert!(op.p_inj.iter().all(|p| p.abs() < 1e-12));
    }

    /// Independent oracle for the 2-bus case: with Y12 = 10j the load-bus
    /// equations reduce to V2 = cos(t) and 10 V2 sin(t) = -P; bisection on t.
    fn two_bus_oracle(p: f64) -> (f64, f64) {
        let g = |t: f64| 10.0 * t.cos() * t.sin() + p;
        let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        (t.cos(), t)
    }

    #[test]
    fn power_flow_two_bus_matches_bisection() {
        let op = solve_power_flow(&two_bus(1.0, 0.0)).unwrap();
        let (vm, va) = two_bus_oracle(1.0);
        assert_relative_eq!(op.v[1].norm(), vm, epsilon = 1e-9);
        assert_relative_eq!(op.v[1].arg(), va, epsilon = 1e-9);
    }

    #[test]
    fn power_flow_beyond_transfer_limit_fails() {
        // V^2/x = 10 p.u. is beyond the 2-bus transfer limit.
        let err = solve_power_flow(&two_bus(12.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::PowerFlowDiverged { .. }), "{err}");
    }

    #[test]
    fn power_flow_island_without_slack() {
        let mut g = two_bus(0.0, 0.0);
        g.buses.push(Bus::new("3", BusKind::Pq));
        let err = solve_power_flow(&g).unwrap_err().to_string();
        assert!(err.contains("slack"), "{err}");
    }

    #[test]
    fn power_flow_residual_on_meshed_case() {
        let mut buses = vec![Bus::new("1", BusKind::Slack), Bus::new("2", BusKind::Pv), Bus::new("3", BusKind::Pq)];
        buses[0].v_set = 1.02;
        buses[1].v_set = 1.01;
        buses[1].p_gen = 0.8;
        buses[2].p_load = 1.5;
        buses[2].q_load = 0.4;
        buses[2].shunt = c(0.0, 0.1);
        let mut branches = vec![
            Branch::line("a", "1", "2", 0.01, 0.08),
            Branch::line("b", "2", "3", 0.02, 0.1),
            Branch::line("c", "1", "3", 0.015, 0.12),
        ];
        branches[2].b = 0.05;
        branches[1].tap = 0.98;
        let g = GridModel { buses, branches };
        let op = solve_power_flow(&g).unwrap();
        let y = build_ybus(&g.buses, &g.branches).unwrap();
        let s = injections(&y, &op.v);
        assert!((s[1].re - 0.8).abs() < 1e-8);
        assert!((s[2].re + 1.5).abs() < 1e-8);
        assert!((s[2].im + 0.4).abs() < 1e-8);
        assert_relative_eq!(op.v[1].norm(), 1.01, epsilon = 1e-12);
    }

    #[test]
    fn norton_solve_matches_hand_solution() {
        // Machine at bus 1 with Norton admittance 1/(j0.3), line j0.1 to bus 2,
        // load conductance 1.0 at bus 2. Hand-solved 2x2 system.
        let g = two_bus(0.0, 0.0);
        let y = build_ybus(&g.buses, &g.branches).unwrap();
        let yn = c(1.0, 0.0) / c(0.0, 0.3);
        let solver = NetworkSolver::new(&y, &[yn, c(1.0, 0.0)]).unwrap();
        let e = Phasor::from_polar(1.1, 0.2);
        let inj = e * yn;
        let v = solver.solve(&[inj, c(0.0, 0.0)]).unwrap();

        let (a, b, cc, d) = (c(0.0, -10.0) + yn, c(0.0, 10.0), c(0.0, 10.0), c(1.0, -10.0));
        let det = a * d - b * cc;
        let v1 = (d * inj) / det;
        let v2 = (-cc * inj) / det;
        assert!((v[0] - v1).norm() < 1e-12);
        assert!((v[1] - v2).norm() < 1e-12);

        let zero = solver.solve(&[c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn singular_network_is_an_error() {
        let g = two_bus(0.0, 0.0);
        let y = build_ybus(&g.buses, &g.branches).unwrap();
        assert!(NetworkSolver::new(&y, &[c(0.0, 0.0), c(0.0, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn ybus_permutation_equivariant(seed in 0u64..1000) {
            let n = 5;
            let mut buses: Vec<Bus> = (0..n).map(|i| Bus::new(format!("b{i}"), BusKind::Pq)).collect();
            buses[(seed % 5) as usize].shunt = c(0.01, 0.2);
            let branches = vec![
                Branch { tap: 1.0 + (seed % 7) as f64 * 0.01, ..Branch::line("x", "b0", "b1", 0.01, 0.1) },
                Branch::line("y", "b1", "b2", 0.02, 0.3),
                Branch { b: 0.1, ..Branch::line("z", "b2", "b3", 0.0, 0.2) },
                Branch::line("w", "b3", "b4", 0.05, 0.25),
                Branch::line("v", "b4", "b0", 0.01, 0.15),
            ];
            let y = build_ybus(&buses, &branches).unwrap();
            // rotate the bus order by seed
            let k = (seed as usize) % n;
            let perm: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
            let permuted: Vec<Bus> = perm.iter().map(|&i| buses[i].clone()).collect();
            let yp = build_ybus(&permuted, &branches).unwrap();
            for a in 0..n {
                for b in 0..n {
                    prop_assert!((yp.get(a, b) - y.get(perm[a], perm[b])).norm() < 1e-14);
                }
            }
        }
    }
}
