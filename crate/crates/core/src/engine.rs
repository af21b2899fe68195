//! Fixed-step time-domain simulation: device states coupled through an
//! algebraic network solve, scheduled events, relays and metrics.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex64;

use crate::der::{battery_dispatch, pno_step, pv_power, BatteryStore, PnoState, PvCurve};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, slope_weights, window_len, EventRecord, Metrics, RelayTrip, FREQ_COLUMN};
use crate::network::{admittance_for_power, branch_flows, build_ybus, solve_power_flow, Branch, Bus, GridModel, NetworkSolver, YBus};
use crate::ode::rk4_step;
use crate::scenario::{EventEntry, LoadModel, RelaySection, Scenario};
use crate::syncgen::{sg_derivatives, sg_norton, SyncMachineParams, SyncMachineState};
use crate::units::{PerUnitSystem, Phasor, TraceSet};
use crate::vsg::{droop_speed, voltage_reference, vsg_derivatives, vsg_norton, VsgParams, VsgState, E_REF_MAX, E_REF_MIN};

/// Speed band outside which the classical models are not trusted, p.u.
pub const OMEGA_BAND: (f64, f64) = (0.8, 1.2);

const CP_TOL: f64 = 1e-12;
const CP_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
enum DeviceKind {
    Sg { params: SyncMachineParams, e_mag: f64 },
    Vsg {
        params: VsgParams,
        pv: Option<usize>,
        battery: Option<usize>,
    },
    /// Fixed EMF behind a reactance.
    Infinite { e: Phasor },
}

#[derive(Debug, Clone)]
struct Device {
    id: String,
    bus: usize,
    /// Norton admittance on the system base.
    y: Complex64,
    kind: DeviceKind,
    online: bool,
    /// Offset into the state vector.
    off: usize,
}

impl Device {
    fn n_states(kind: &DeviceKind) -> usize {
        match kind {
            DeviceKind::Sg { .. } => 3,
            DeviceKind::Vsg { .. } => 4,
            DeviceKind::Infinite { .. } => 0,
        }
    }

    fn s_rated(&self) -> f64 {
        match &self.kind {
            DeviceKind::Sg { params, .. } => params.s_rated,
            DeviceKind::Vsg { params, .. } => params.s_rated,
            DeviceKind::Infinite { .. } => f64::INFINITY,
        }
    }

    /// Inertia weight `H S` for the centre of inertia.
    fn inertia(&self) -> f64 {
        match &self.kind {
            DeviceKind::Sg { params, .. } => params.h * params.s_rated,
            DeviceKind::Vsg { params, .. } => params.h_virt * params.s_rated,
            DeviceKind::Infinite { .. } => 0.0,
        }
    }

    fn is_rotating(&self) -> bool {
        !matches!(self.kind, DeviceKind::Infinite { .. })
    }
}

#[derive(Debug, Clone)]
struct PqSource {
    id: String,
    bus: usize,
    s: Complex64,
    online: bool,
}

#[derive(Debug, Clone)]
struct PvUnit {
    id: String,
    curve: PvCurve,
    pno: PnoState,
    period_steps: usize,
    /// Full-irradiance maximum power, W, and the matching system p.u.
    p_mpp_w: f64,
    rated_pu: f64,
    /// Power at the last P&O sample, system p.u.
    p_now: f64,
}

impl PvUnit {
    fn to_pu(&self, p_w: f64) -> f64 {
        p_w / self.p_mpp_w * self.rated_pu
    }
}

#[derive(Debug, Clone)]
struct BatteryUnit {
    id: String,
    store: BatteryStore,
    exhausted: bool,
}

#[derive(Debug, Clone, Copy)]
enum Monitor {
    Coi,
    Device(usize),
}

#[derive(Debug, Clone)]
struct UfState {
    below_since: Option<f64>,
    operated: bool,
}

/// Network solution and device outputs at one instant.
#[derive(Debug, Clone)]
struct Snapshot {
    v: Vec<Phasor>,
    /// Complex power delivered by each device, system p.u.
    s_dev: Vec<Complex64>,
    /// Speed of each device (algebraic for inertia-less VSGs), p.u.
    omega: Vec<f64>,
}

/// Result of one run. A run that terminated early still carries the trace
/// up to that point; `metrics.completed` tells them apart.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: TraceSet,
    pub metrics: Metrics,
}

/// A simulation ready to step.
#[derive(Debug, Clone)]
pub struct Simulation {
    base: PerUnitSystem,
    dt: f64,
    n_steps: usize,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    bus_index: HashMap<String, usize>,
    ybus: YBus,
    /// Constant-admittance loads per bus.
    y_load: Vec<Complex64>,
    /// Constant-power consumption per bus.
    s_cp: Vec<Complex64>,
    devices: Vec<Device>,
    pq: Vec<PqSource>,
    pvs: Vec<PvUnit>,
    batteries: Vec<BatteryUnit>,
    solver: NetworkSolver,
    v_last: Vec<Phasor>,
    x: Vec<f64>,
    events: Vec<(usize, EventEntry)>,
    relay: RelaySection,
    monitor: Monitor,
    uf: Vec<UfState>,
    rocof_tripped: bool,
    outputs: Option<Vec<String>>,
    columns: Vec<String>,
}

fn jx(x: f64) -> Complex64 {
    Complex64::new(0.0, x)
}

impl Simulation {
    /// Solve the power flow, place every device at equilibrium and factor
    /// the network.
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let f = &scenario.file;
        let base = scenario.base;
        let s_base_mva = base.s_base() / 1e6;
        let dt = f.solver.dt;
        let n_steps = (f.solver.t_end / dt).round() as usize;

        let mut buses: Vec<Bus> = f
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id.clone(),
                kind: b.kind,
                v_set: b.v_set,
                p_load: b.p_load,
                q_load: b.q_load,
                shunt: Complex64::new(b.g_shunt, b.b_shunt),
                p_gen: 0.0,
                q_gen: 0.0,
            })
            .collect();
        let branches: Vec<Branch> = f
            .branches
            .iter()
            .map(|b| Branch {
                id: b.id.clone(),
                from: b.from.clone(),
                to: b.to.clone(),
                r: b.r,
                x: b.x,
                b: b.b,
                tap: b.tap,
            })
            .collect();
        let bus_index: HashMap<String, usize> = buses.iter().enumerate().map(|(i, b)| (b.id.clone(), i)).collect();

        let pvs: Vec<PvUnit> = f
            .pv
            .iter()
            .map(|p| {
                let curve = PvCurve {
                    v_oc: p.v_oc,
                    i_sc: p.i_sc,
                    shape: p.shape,
                    beta: p.beta,
                    irradiance: p.irradiance,
                };
                curve.validate().map_err(|e| Error::Validation {
                    key: format!("pv.{}", p.id),
                    message: e.to_string(),
                })?;
                let pno = PnoState::new(p.v_start, p.step_v);
                pno.validate(&curve).map_err(|e| Error::Validation {
                    key: format!("pv.{}", p.id),
                    message: e.to_string(),
                })?;
                let p_mpp_w = PvCurve { irradiance: 1.0, ..curve.clone() }.mpp().1;
                let mut unit = PvUnit {
                    id: p.id.clone(),
                    period_steps: (p.period_s / dt).round() as usize,
                    p_mpp_w,
                    rated_pu: p.rated_mw / s_base_mva,
                    p_now: 0.0,
                    curve,
                    pno,
                };
                unit.p_now = unit.to_pu(pv_power(&unit.curve, p.v_start).0);
                Ok(unit)
            })
            .collect::<Result<_>>()?;
        let pv_index: HashMap<&str, usize> = f.pv.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();

        let batteries: Vec<BatteryUnit> = f
            .batteries
            .iter()
            .map(|b| {
                let store = BatteryStore {
                    soc: b.soc,
                    e_cap: b.e_cap_mwh * 3.6e9,
                    p_max_chg: b.p_max_chg_mw * 1e6,
                    p_max_dis: b.p_max_dis_mw * 1e6,
                };
                store.validate().map_err(|e| Error::Validation {
                    key: format!("batteries.{}", b.id),
                    message: e.to_string(),
                })?;
                Ok(BatteryUnit {
                    id: b.id.clone(),
                    store,
                    exhausted: false,
                })
            })
            .collect::<Result<_>>()?;
        let bat_index: HashMap<&str, usize> = f.batteries.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();

        // Devices with their scheduled dispatch.
        let mut devices = Vec::new();
        let mut dispatch = Vec::new();
        let mut off = 0;
        let mut push = |id: &str, bus: usize, x_sys: f64, kind: DeviceKind, p: f64, devices: &mut Vec<Device>| {
            let n = Device::n_states(&kind);
            devices.push(Device {
                id: id.to_string(),
                bus,
                y: Complex64::new(1.0, 0.0) / jx(x_sys),
                kind,
                online: true,
                off,
            });
            dispatch.push(p);
            off += n;
        };
        for m in &f.machines {
            let params = SyncMachineParams {
                h: m.h,
                d: m.d,
                xd_t: m.xd_t,
                kf: m.kf,
                s_rated: m.s_rated_mva * 1e6,
                tg: m.tg,
                p_ref: 0.0,
                allow_h_out_of_range: m.allow_h_out_of_range,
            };
            params.validate().map_err(|e| Error::Validation {
                key: format!("machines.{}", m.id),
                message: e.to_string(),
            })?;
            let x = params.xd_system(&base);
            push(&m.id, bus_index[&m.bus], x, DeviceKind::Sg { params, e_mag: 1.0 }, m.p, &mut devices);
        }
        for v in &f.vsg {
            let params = VsgParams {
                h_virt: v.h_virt,
                d_virt: v.d_virt,
                kf: v.kf,
                kq: v.kq,
                p_ref: 0.0,
                q_ref: 0.0,
                e0: 1.0,
                s_rated: v.s_rated_mva * 1e6,
                x_filter: v.x_filter,
                p_limit: v.p_limit,
                i_limit: v.i_limit.unwrap_or(f64::INFINITY),
                tg: v.tg,
                tv: v.tv,
            };
            params.validate(&base).map_err(|e| Error::Validation {
                key: format!("vsg.{}", v.id),
                message: e.to_string(),
            })?;
            let pv = v.pv.as_deref().map(|p| pv_index[p]);
            let p = pv.map_or(v.p, |i| pvs[i].p_now);
            let x = params.x_filter_system(&base);
            let kind = DeviceKind::Vsg {
                params,
                pv,
                battery: v.battery.as_deref().map(|b| bat_index[b]),
            };
            push(&v.id, bus_index[&v.bus], x, kind, p, &mut devices);
        }
        for s in &f.infinite_buses {
            let kind = DeviceKind::Infinite { e: Phasor::new(1.0, 0.0) };
            push(&s.id, bus_index[&s.bus], s.x, kind, 0.0, &mut devices);
        }
        let n_states = off;

        let pq: Vec<PqSource> = f
            .pq_sources
            .iter()
            .map(|s| PqSource {
                id: s.id.clone(),
                bus: bus_index[&s.bus],
                s: Complex64::new(s.p, s.q),
                online: true,
            })
            .collect();

        for (d, p) in devices.iter().zip(&dispatch) {
            buses[d.bus].p_gen += p;
        }
        for s in &pq {
            buses[s.bus].p_gen += s.s.re;
            buses[s.bus].q_gen += s.s.im;
        }

        let grid = GridModel {
            buses: buses.clone(),
            branches: branches.clone(),
        };
        let op = solve_power_flow(&grid)?;
        let ybus = build_ybus(&buses, &branches)?;
        let nb = buses.len();

        let mut y_load = vec![Complex64::default(); nb];
        for (i, b) in buses.iter().enumerate() {
            y_load[i] = admittance_for_power(Complex64::new(b.p_load, b.q_load), op.v[i].norm());
        }
        let s_cp = vec![Complex64::default(); nb];

        // Internal EMFs from the operating point.
        let mut x = vec![0.0; n_states];
        for d in devices.iter_mut() {
            let i = d.bus;
            let s_pq: Complex64 = pq.iter().filter(|s| s.bus == i).map(|s| s.s).sum();
            let s_dev = op.generation(&buses[i], i) - s_pq;
            let cur = (s_dev / op.v[i]).conj();
            let e = op.v[i] + cur / d.y;
            match &mut d.kind {
                DeviceKind::Sg { e_mag, .. } => {
                    *e_mag = e.norm();
                    x[d.off] = e.arg();
                    x[d.off + 1] = 1.0;
                }
                DeviceKind::Vsg { params, .. } => {
                    if !(E_REF_MIN..=E_REF_MAX).contains(&e.norm()) {
                        return Err(Error::Validation {
                            key: format!("vsg.{}", d.id),
                            message: format!(
                                "initial EMF {:.4} p.u. lies outside the voltage-reference clamp [{E_REF_MIN}, {E_REF_MAX}]",
                                e.norm()
                            ),
                        });
                    }
                    params.e0 = e.norm();
                    x[d.off] = e.arg();
                    x[d.off + 1] = 1.0;
                    x[d.off + 2] = e.norm();
                }
                DeviceKind::Infinite { e: src } => *src = e,
            }
        }

        let monitor = if f.relay.frequency == "coi" {
            Monitor::Coi
        } else {
            Monitor::Device(devices.iter().position(|d| d.id == f.relay.frequency).expect("checked at load"))
        };

        let mut events = Vec::with_capacity(f.events.len());
        for (i, ev) in f.events.iter().enumerate() {
            check_event(ev, &devices, &pq).map_err(|message| Error::Validation {
                key: format!("events[{i}]"),
                message,
            })?;
            events.push(((ev.time() / dt).round() as usize, ev.clone()));
        }

        let mut diag = y_load.clone();
        for d in &devices {
            diag[d.bus] += d.y;
        }
        let mut sim = Simulation {
            base,
            dt,
            n_steps,
            solver: NetworkSolver::new(&ybus, &diag)?,
            buses,
            branches,
            bus_index,
            ybus,
            y_load,
            s_cp,
            devices,
            pq,
            pvs,
            batteries,
            v_last: op.v.clone(),
            x,
            events,
            uf: f
                .relay
                .uf_stages
                .iter()
                .map(|_| UfState {
                    below_since: None,
                    operated: false,
                })
                .collect(),
            relay: f.relay.clone(),
            monitor,
            rocof_tripped: false,
            outputs: f.solver.outputs.clone(),
            columns: Vec::new(),
        };

        // Mechanical and reactive references from the dynamic network
        // solution itself, so the initial state is an exact equilibrium.
        let snap = sim.snapshot()?;
        let s_base = base.s_base();
        for (k, d) in sim.devices.iter_mut().enumerate() {
            let s = snap.s_dev[k] * (s_base / d.s_rated());
            match &mut d.kind {
                DeviceKind::Sg { params, .. } => {
                    params.p_ref = s.re;
                    sim.x[d.off + 2] = s.re;
                }
                DeviceKind::Vsg { params, .. } => {
                    params.p_ref = s.re;
                    params.q_ref = s.im;
                    sim.x[d.off + 3] = s.re;
                    if !(params.p_ref <= params.p_limit && params.p_ref >= 0.0) {
                        return Err(Error::Validation {
                            key: format!("vsg.{}", d.id),
                            message: format!(
                                "initial output {:.4} p.u. outside [0, p_limit = {}]",
                                params.p_ref, params.p_limit
                            ),
                        });
                    }
                }
                DeviceKind::Infinite { .. } => {}
            }
        }

        sim.columns = sim.column_names();
        if let Some(out) = &sim.outputs {
            for name in out {
                if !sim.columns.contains(name) {
                    return Err(Error::Validation {
                        key: "solver.outputs".into(),
                        message: format!("unknown trace column `{name}`"),
                    });
                }
            }
        }
        Ok(sim)
    }

    fn column_names(&self) -> Vec<String> {
        let mut c = vec![FREQ_COLUMN.to_string(), "f_coi_hz".into(), "rocof_hz_s".into()];
        for d in self.devices.iter().filter(|d| d.is_rotating()) {
            c.push(format!("f_{}_hz", d.id));
        }
        for d in &self.devices {
            c.push(format!("p_{}_pu", d.id));
            c.push(format!("q_{}_pu", d.id));
        }
        for s in &self.pq {
            c.push(format!("p_{}_pu", s.id));
        }
        for b in &self.buses {
            c.push(format!("v_{}_pu", b.id));
        }
        for p in &self.pvs {
            c.push(format!("pv_{}_pu", p.id));
        }
        for b in &self.batteries {
            c.push(format!("soc_{}", b.id));
        }
        c
    }

    /// Names of all trace columns produced by [`Simulation::run`].
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn base(&self) -> &PerUnitSystem {
        &self.base
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    fn refactor(&mut self) -> Result<()> {
        let mut diag = self.y_load.clone();
        for d in self.devices.iter().filter(|d| d.online) {
            diag[d.bus] += d.y;
        }
        self.solver = NetworkSolver::new(&self.ybus, &diag)?;
        Ok(())
    }

    /// Norton current of each device for state `x` (zero when offline).
    fn norton(&self, x: &[f64], k: usize) -> Phasor {
        let d = &self.devices[k];
        if !d.online {
            return Phasor::default();
        }
        match &d.kind {
            DeviceKind::Sg { params, e_mag } => {
                let st = SyncMachineState {
                    delta: x[d.off],
                    omega: x[d.off + 1],
                    e_mag: *e_mag,
                    tm_gov: x[d.off + 2],
                };
                sg_norton(params, &st, &self.base)
            }
            DeviceKind::Vsg { params, .. } => vsg_norton(params, &vsg_state(x, d.off), &self.base).0,
            DeviceKind::Infinite { e } => e * d.y,
        }
    }

    /// Net constant-power consumption per bus.
    fn cp_demand(&self) -> Vec<Complex64> {
        let mut s = self.s_cp.clone();
        for p in self.pq.iter().filter(|p| p.online) {
            s[p.bus] -= p.s;
        }
        s
    }

    /// Bus voltages for state `x`. Constant-power elements are resolved by
    /// fixed-point iteration on the factored linear network.
    fn solve_network(&mut self, x: &[f64]) -> Result<Vec<Phasor>> {
        let nb = self.buses.len();
        let mut inj = vec![Phasor::default(); nb];
        for k in 0..self.devices.len() {
            inj[self.devices[k].bus] += self.norton(x, k);
        }
        let cp = self.cp_demand();
        if cp.iter().all(|s| *s == Complex64::default()) {
            let v = self.solver.solve(&inj)?;
            self.v_last.clone_from(&v);
            return Ok(v);
        }
        let mut v = self.v_last.clone();
        for _ in 0..CP_MAX_ITER {
            let rhs: Vec<Phasor> = (0..nb).map(|i| inj[i] - (cp[i] / v[i]).conj()).collect();
            let next = self.solver.solve(&rhs)?;
            let change = next.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            v = next;
            if !change.is_finite() {
                break;
            }
            if change < CP_TOL {
                self.v_last.clone_from(&v);
                return Ok(v);
            }
        }
        Err(Error::Network("constant-power load iteration did not converge (voltage collapse?)".into()))
    }

    fn flows(&self, x: &[f64], v: &[Phasor]) -> (Vec<Complex64>, Vec<f64>) {
        let mut s = Vec::with_capacity(self.devices.len());
        let mut w = Vec::with_capacity(self.devices.len());
        for (k, d) in self.devices.iter().enumerate() {
            let vb = v[d.bus];
            let sd = if d.online {
                vb * (self.norton(x, k) - d.y * vb).conj()
            } else {
                Complex64::default()
            };
            let omega = match &d.kind {
                DeviceKind::Sg { .. } => x[d.off + 1],
                DeviceKind::Vsg { params, .. } if params.h_virt == 0.0 && d.online => {
                    droop_speed(params, sd.re * self.base.s_base() / params.s_rated, &self.base)
                }
                DeviceKind::Vsg { .. } => x[d.off + 1],
                DeviceKind::Infinite { .. } => 1.0,
            };
            s.push(sd);
            w.push(omega);
        }
        (s, w)
    }

    fn snapshot(&mut self) -> Result<Snapshot> {
        let x = std::mem::take(&mut self.x);
        let v = self.solve_network(&x);
        self.x = x;
        let v = v?;
        let (s_dev, omega) = self.flows(&self.x, &v);
        Ok(Snapshot { v, s_dev, omega })
    }

    fn derivatives(&mut self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let v = self.solve_network(x)?;
        let (s_dev, omega) = self.flows(x, &v);
        let base = self.base;
        let f0 = base.f0();
        dx.fill(0.0);
        for (k, d) in self.devices.iter().enumerate() {
            if !d.online {
                continue;
            }
            let to_base = base.s_base() / d.s_rated();
            match &d.kind {
                DeviceKind::Sg { params, e_mag } => {
                    let st = SyncMachineState {
                        delta: x[d.off],
                        omega: x[d.off + 1],
                        e_mag: *e_mag,
                        tm_gov: x[d.off + 2],
                    };
                    let der = sg_derivatives(params, &st, s_dev[k].re * to_base, st.omega * f0, &base);
                    dx[d.off] = der.ddelta;
                    dx[d.off + 1] = der.domega;
                    dx[d.off + 2] = der.dtm_gov;
                }
                DeviceKind::Vsg { params, .. } => {
                    let st = vsg_state(x, d.off);
                    let (p_e, q) = (s_dev[k].re * to_base, s_dev[k].im * to_base);
                    if params.h_virt == 0.0 {
                        let w = omega[k];
                        if !w.is_finite() {
                            return Err(Error::Network(format!("`{}`: droop has no operating speed", d.id)));
                        }
                        let (e_target, _) = voltage_reference(params, q);
                        dx[d.off] = base.omega0() * (w - 1.0);
                        dx[d.off + 2] = (e_target - st.e_ref) / params.tv;
                    } else {
                        let der = vsg_derivatives(params, &st, p_e, q, st.omega * f0, &base);
                        dx[d.off] = der.dtheta;
                        dx[d.off + 1] = der.domega;
                        dx[d.off + 2] = der.de_ref;
                        dx[d.off + 3] = der.dtm_gov;
                    }
                }
                DeviceKind::Infinite { .. } => {}
            }
        }
        Ok(())
    }

    fn step(&mut self, t: f64) -> Result<()> {
        let mut x = std::mem::take(&mut self.x);
        let mut err = None;
        rk4_step(&mut x, t, self.dt, |_, s, ds| {
            if err.is_some() {
                ds.fill(0.0);
                return;
            }
            if let Err(e) = self.derivatives(s, ds) {
                err = Some(e);
                ds.fill(0.0);
            }
        });
        self.x = x;
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn coi(&self, omega: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        let mut plain = (0.0, 0);
        for (d, w) in self.devices.iter().zip(omega) {
            if !d.online || !d.is_rotating() {
                continue;
            }
            num += d.inertia() * w;
            den += d.inertia();
            plain.0 += w;
            plain.1 += 1;
        }
        if den > 0.0 {
            num / den
        } else if plain.1 > 0 {
            plain.0 / plain.1 as f64
        } else {
            1.0
        }
    }

    /// Apply one scheduled event at the current state.
    pub fn apply_event(&mut self, ev: &EventEntry) -> Result<String> {
        match ev {
            EventEntry::LoadStep { bus, dp, dq, model, .. } => {
                let i = self.bus_index[bus];
                let ds = Complex64::new(*dp, *dq);
                match model {
                    LoadModel::Power => self.s_cp[i] += ds,
                    LoadModel::Impedance => {
                        let vm = self.v_last[i].norm();
                        self.y_load[i] += admittance_for_power(ds, vm);
                        self.refactor()?;
                    }
                }
                Ok(format!("load step {dp:+} {dq:+}j p.u. at {bus} ({model:?})"))
            }
            EventEntry::IrradianceStep { pv, value, .. } => {
                let u = self.pvs.iter_mut().find(|p| &p.id == pv).expect("checked at load");
                u.curve.irradiance = *value;
                Ok(format!("irradiance of {pv} set to {value}"))
            }
            EventEntry::TripDevice { device, .. } => {
                self.trip(device)?;
                Ok(format!("{device} tripped"))
            }
            EventEntry::SetParam { device, param, value, .. } => {
                self.set_param(device, param, *value)?;
                Ok(format!("{device}.{param} set to {value}"))
            }
        }
    }

    fn trip(&mut self, id: &str) -> Result<()> {
        if let Some(d) = self.devices.iter_mut().find(|d| d.id == id) {
            d.online = false;
            return self.refactor();
        }
        if let Some(p) = self.pq.iter_mut().find(|p| p.id == id) {
            p.online = false;
            return Ok(());
        }
        Err(Error::Reference {
            key: "trip".into(),
            kind: "device",
            id: id.into(),
        })
    }

    fn set_param(&mut self, id: &str, param: &str, value: f64) -> Result<()> {
        if let Some(p) = self.pq.iter_mut().find(|p| p.id == id) {
            match param {
                "p" => p.s.re = value,
                "q" => p.s.im = value,
                _ => unreachable!("checked at load"),
            }
            return Ok(());
        }
        let base = self.base;
        let k = self.devices.iter().position(|d| d.id == id).expect("checked at load");
        let omega_now = self.flows(&self.x.clone(), &self.v_last.clone()).1[k];
        let d = &mut self.devices[k];
        match &mut d.kind {
            DeviceKind::Sg { params: p, .. } => {
                let mut next = p.clone();
                match param {
                    "h" => next.h = value,
                    "d" => next.d = value,
                    "kf" => next.kf = value,
                    "tg" => next.tg = value,
                    "p_ref" => next.p_ref = value,
                    _ => unreachable!("checked at load"),
                }
                next.validate()?;
                *p = next;
            }
            DeviceKind::Vsg { params, .. } => {
                let mut next = params.clone();
                match param {
                    "h_virt" => next.h_virt = value,
                    "d_virt" => next.d_virt = value,
                    "kf" => next.kf = value,
                    "kq" => next.kq = value,
                    "p_ref" => next.p_ref = value,
                    "q_ref" => next.q_ref = value,
                    "e0" => next.e0 = value,
                    "p_limit" => next.p_limit = value,
                    "i_limit" => next.i_limit = value,
                    "tg" => next.tg = value,
                    "tv" => next.tv = value,
                    _ => unreachable!("checked at load"),
                }
                next.validate(&base)?;
                if params.h_virt == 0.0 && next.h_virt > 0.0 {
                    // leaving droop mode: start the swing state at the
                    // algebraic speed
                    self.x[d.off + 1] = omega_now;
                }
                *params = next;
            }
            DeviceKind::Infinite { .. } => unreachable!("checked at load"),
        }
        Ok(())
    }

    fn record(&self, trace: &mut TraceSet, snap: &Snapshot, f_mon: f64, f_coi: f64, rocof: f64) {
        let f0 = self.base.f0();
        let mut row = Vec::with_capacity(self.columns.len());
        row.extend([f_mon, f_coi, rocof]);
        for (d, w) in self.devices.iter().zip(&snap.omega) {
            if d.is_rotating() {
                row.push(w * f0);
            }
        }
        for s in &snap.s_dev {
            row.push(s.re);
            row.push(s.im);
        }
        for p in &self.pq {
            row.push(if p.online { p.s.re } else { 0.0 });
        }
        for v in &snap.v {
            row.push(v.norm());
        }
        for p in &self.pvs {
            row.push(p.p_now);
        }
        for b in &self.batteries {
            row.push(b.store.soc);
        }
        trace.push_row(&row);
    }

    /// Complex power balance residual: injections minus loads, shunts and
    /// branch flows.
    fn power_residual(&self, snap: &Snapshot) -> Result<f64> {
        let mut r: Complex64 = snap.s_dev.iter().sum();
        let cp = self.cp_demand();
        for (i, b) in self.buses.iter().enumerate() {
            let vm2 = snap.v[i].norm_sqr();
            r -= (self.y_load[i] + b.shunt).conj() * vm2 + cp[i];
        }
        for (sf, st) in branch_flows(&self.buses, &self.branches, &snap.v)? {
            r -= sf + st;
        }
        Ok(r.norm())
    }

    fn pno_update(&mut self, k: usize) {
        for u in self.pvs.iter_mut() {
            if k > 0 && k.is_multiple_of(u.period_steps) {
                let (next, p_w) = pno_step(&u.pno, &u.curve);
                u.pno = next;
                u.p_now = u.to_pu(p_w);
            }
        }
        for d in self.devices.iter_mut() {
            if let DeviceKind::Vsg { params, pv: Some(i), .. } = &mut d.kind {
                let p = self.pvs[*i].p_now * self.base.s_base() / params.s_rated;
                params.p_ref = p.min(params.p_limit);
            }
        }
    }

    fn battery_update(&mut self, snap: &Snapshot) {
        let s_base = self.base.s_base();
        for (k, d) in self.devices.iter().enumerate() {
            if let DeviceKind::Vsg { pv, battery: Some(b), .. } = &d.kind {
                let p_pv = pv.map_or(0.0, |i| self.pvs[i].p_now);
                let request = (snap.s_dev[k].re - p_pv) * s_base;
                let unit = &mut self.batteries[*b];
                let (got, next) = battery_dispatch(&unit.store, request, self.dt);
                if (got - request).abs() > 1e-9 * request.abs().max(1.0) {
                    unit.exhausted = true;
                }
                unit.store = next;
            }
        }
    }

    /// Integrate to `t_end`.
    pub fn run(mut self) -> Result<RunResult> {
        let dt = self.dt;
        let f0 = self.base.f0();
        let mut trace = TraceSet::new(dt, 0.0, self.columns.clone())?;
        let n_win = window_len(self.relay.rocof_window, dt);
        let weights = slope_weights(n_win, dt);
        let mut window: VecDeque<f64> = VecDeque::with_capacity(n_win + 1);
        let mut trips = Vec::new();
        let mut records = Vec::new();
        let mut termination = None;
        let mut max_residual = 0.0f64;
        let events = std::mem::take(&mut self.events);
        let mut next_event = 0;

        for k in 0..=self.n_steps {
            let t = k as f64 * dt;
            while next_event < events.len() && events[next_event].0 == k {
                let description = self.apply_event(&events[next_event].1)?;
                log::debug!("t = {t}: {description}");
                records.push(EventRecord { t, description });
                next_event += 1;
            }
            self.pno_update(k);

            let snap = match self.snapshot() {
                Ok(s) => s,
                Err(e) => {
                    termination = Some(format!("t = {t:.4} s: {e}"));
                    break;
                }
            };
            let f_coi = self.coi(&snap.omega) * f0;
            let f_mon = match self.monitor {
                Monitor::Coi => f_coi,
                Monitor::Device(i) => snap.omega[i] * f0,
            };
            window.push_back(f_mon);
            if window.len() > n_win {
                window.pop_front();
            }
            let rocof = if window.len() == n_win {
                weights.iter().zip(&window).map(|(w, f)| w * f).sum()
            } else {
                f64::NAN
            };
            self.record(&mut trace, &snap, f_mon, f_coi, rocof);
            max_residual = max_residual.max(self.power_residual(&snap)?);

            let bad = self
                .devices
                .iter()
                .zip(&snap.omega)
                .find(|(d, w)| d.online && d.is_rotating() && !(w.is_finite() && **w > OMEGA_BAND.0 && **w < OMEGA_BAND.1));
            if let Some((d, w)) = bad {
                termination = Some(format!(
                    "t = {t:.4} s: speed of `{}` left the valid band ({w:.4} p.u.)",
                    d.id
                ));
                break;
            }

            if self.relay.enabled {
                self.relays(t, f_mon, rocof, &mut trips)?;
            }
            if k == self.n_steps {
                break;
            }
            if let Err(e) = self.step(t) {
                termination = Some(format!("t = {t:.4} s: {e}"));
                break;
            }
            if self.x.iter().any(|v| !v.is_finite()) {
                termination = Some(format!("t = {:.4} s: non-finite state", t + dt));
                break;
            }
            self.battery_update(&snap);
        }

        let mut metrics = compute_metrics(&trace, f0, self.relay.rocof_window)?;
        metrics.tripped = trips;
        metrics.completed = termination.is_none();
        metrics.termination = termination;
        metrics.max_power_residual_pu = max_residual;
        metrics.battery_exhausted = self.batteries.iter().filter(|b| b.exhausted).map(|b| b.id.clone()).collect();
        metrics.events = records;
        let trace = match &self.outputs {
            Some(names) => trace.select(names)?,
            None => trace,
        };
        Ok(RunResult { trace, metrics })
    }

    fn relays(&mut self, t: f64, f_mon: f64, rocof: f64, trips: &mut Vec<RelayTrip>) -> Result<()> {
        if !self.rocof_tripped && rocof.is_finite() && rocof.abs() > self.relay.rocof_threshold {
            self.rocof_tripped = true;
            let targets = self.relay.trip_devices.clone();
            let action = if targets.is_empty() {
                "flag".to_string()
            } else {
                format!("trip {}", targets.join(","))
            };
            for id in &targets {
                self.trip(id)?;
            }
            trips.push(RelayTrip {
                t,
                relay: "rocof".into(),
                value: rocof,
                action,
            });
        }
        for s in 0..self.uf.len() {
            let stage = self.relay.uf_stages[s].clone();
            let st = &mut self.uf[s];
            if st.operated {
                continue;
            }
            if f_mon < stage.freq_hz {
                let since = *st.below_since.get_or_insert(t);
                if t - since >= stage.delay_s - 1e-9 {
                    st.operated = true;
                    let keep = 1.0 - stage.shed;
                    self.y_load.iter_mut().for_each(|y| *y *= keep);
                    self.s_cp.iter_mut().for_each(|s| *s *= keep);
                    self.refactor()?;
                    trips.push(RelayTrip {
                        t,
                        relay: format!("uf_stage_{s}"),
                        value: f_mon,
                        action: format!("shed {:.1}% of load", 100.0 * stage.shed),
                    });
                }
            } else {
                st.below_since = None;
            }
        }
        Ok(())
    }
}

fn vsg_state(x: &[f64], off: usize) -> VsgState {
    VsgState {
        theta: x[off],
        omega: x[off + 1],
        e_ref: x[off + 2],
        tm_gov: x[off + 3],
    }
}

fn check_event(ev: &EventEntry, devices: &[Device], pq: &[PqSource]) -> std::result::Result<(), String> {
    let EventEntry::SetParam { device, param, .. } = ev else {
        return Ok(());
    };
    let allowed: &[&str] = if pq.iter().any(|p| &p.id == device) {
        &["p", "q"]
    } else {
        match devices.iter().find(|d| &d.id == device).map(|d| &d.kind) {
            Some(DeviceKind::Sg { .. }) => &["h", "d", "kf", "tg", "p_ref"],
            Some(DeviceKind::Vsg { .. }) => &[
                "h_virt", "d_virt", "kf", "kq", "p_ref", "q_ref", "e0", "p_limit", "i_limit", "tg", "tv",
            ],
            _ => &[],
        }
    };
    if allowed.contains(&param.as_str()) {
        Ok(())
    } else {
        Err(format!("`{device}` has no settable parameter `{param}` (settable: {allowed:?})"))
    }
}

/// Run a scenario from equilibrium to its end time.
pub fn integrate(scenario: &Scenario) -> Result<RunResult> {
    Simulation::new(scenario)?.run()
}
