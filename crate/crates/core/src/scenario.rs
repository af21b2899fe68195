//! Scenario documents: strict TOML schema, cross-reference checks, the
//! penetration transform and sweep expansion.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_loop::TestbedConfig;
use crate::network::BusKind;
use crate::units::PerUnitSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default)]
    pub name: String,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub f0_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Trace columns to export; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
}

fn default_dt() -> f64 {
    0.001
}

fn default_t_end() -> f64 {
    10.0
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt: default_dt(),
            t_end: default_t_end(),
            outputs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UfStage {
    pub freq_hz: f64,
    /// Fraction of the remaining load shed by this stage.
    pub shed: f64,
    #[serde(default)]
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaySection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// `"coi"` or the id of a machine or VSG.
    #[serde(default = "coi")]
    pub frequency: String,
    #[serde(default = "default_rocof_threshold")]
    pub rocof_threshold: f64,
    #[serde(default = "default_rocof_window")]
    pub rocof_window: f64,
    /// Devices disconnected when the ROCOF relay operates. Empty: flag only.
    #[serde(default)]
    pub trip_devices: Vec<String>,
    #[serde(default)]
    pub uf_stages: Vec<UfStage>,
}

fn yes() -> bool {
    true
}

fn coi() -> String {
    "coi".into()
}

fn default_rocof_threshold() -> f64 {
    1.0
}

fn default_rocof_window() -> f64 {
    0.1
}

impl Default for RelaySection {
    fn default() -> Self {
        RelaySection {
            enabled: true,
            frequency: coi(),
            rocof_threshold: default_rocof_threshold(),
            rocof_window: default_rocof_window(),
            trip_devices: Vec::new(),
            uf_stages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: String,
    pub kind: BusKind,
    #[serde(default = "one")]
    pub v_set: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "one")]
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineEntry {
    pub id: String,
    pub bus: String,
    pub s_rated_mva: f64,
    /// Scheduled output, p.u. on the system base (ignored on the slack bus
    /// except for penetration sizing).
    pub p: f64,
    pub h: f64,
    #[serde(default)]
    pub d: f64,
    pub xd_t: f64,
    #[serde(default)]
    pub kf: f64,
    #[serde(default)]
    pub tg: f64,
    #[serde(default)]
    pub allow_h_out_of_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsgEntry {
    pub id: String,
    pub bus: String,
    pub s_rated_mva: f64,
    /// Scheduled output, p.u. on the system base. Taken from the PV array
    /// when `pv` is set.
    #[serde(default)]
    pub p: f64,
    pub h_virt: f64,
    #[serde(default)]
    pub d_virt: f64,
    #[serde(default)]
    pub kf: f64,
    #[serde(default)]
    pub kq: f64,
    #[serde(default = "default_x_filter")]
    pub x_filter: f64,
    #[serde(default = "one")]
    pub p_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_limit: Option<f64>,
    #[serde(default)]
    pub tg: f64,
    #[serde(default = "default_tv")]
    pub tv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<String>,
}

fn default_x_filter() -> f64 {
    0.15
}

fn default_tv() -> f64 {
    0.05
}

/// Grid-following source with fixed P and Q (no inertia, no droop).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PqSourceEntry {
    pub id: String,
    pub bus: String,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    /// Rating, used only by the penetration transform.
    #[serde(default)]
    pub s_rated_mva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfiniteBusEntry {
    pub id: String,
    pub bus: String,
    /// Source reactance, p.u. on the system base.
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvEntry {
    pub id: String,
    /// Output at the full-irradiance maximum power point, MW.
    pub rated_mw: f64,
    pub v_oc: f64,
    pub i_sc: f64,
    #[serde(default = "default_shape")]
    pub shape: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "one")]
    pub irradiance: f64,
    /// Initial P&O operating voltage and perturbation, V.
    pub v_start: f64,
    pub step_v: f64,
    #[serde(default = "one")]
    pub period_s: f64,
}

fn default_shape() -> f64 {
    0.08
}

fn default_beta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryEntry {
    pub id: String,
    pub soc: f64,
    pub e_cap_mwh: f64,
    pub p_max_chg_mw: f64,
    pub p_max_dis_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    /// Constant power increment.
    #[default]
    Power,
    /// Constant admittance sized at the pre-event voltage.
    Impedance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventEntry {
    LoadStep {
        t: f64,
        bus: String,
        dp: f64,
        #[serde(default)]
        dq: f64,
        #[serde(default)]
        model: LoadModel,
    },
    IrradianceStep {
        t: f64,
        pv: String,
        value: f64,
    },
    TripDevice {
        t: f64,
        device: String,
    },
    SetParam {
        t: f64,
        device: String,
        param: String,
        value: f64,
    },
}

impl EventEntry {
    pub fn time(&self) -> f64 {
        match self {
            EventEntry::LoadStep { t, .. }
            | EventEntry::IrradianceStep { t, .. }
            | EventEntry::TripDevice { t, .. }
            | EventEntry::SetParam { t, .. } => *t,
        }
    }
}

/// Replace a share of synchronous capacity with DER capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenetrationSection {
    /// DER share of the listed synchronous capacity, 0 <= level < 1.
    pub level: f64,
    pub sg: Vec<String>,
    pub der: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted path into the document, array elements selected by id,
    /// e.g. `vsg.DER1.h_virt`.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Multiplier applied to each value before it is written.
    #[serde(default = "one")]
    pub scale: f64,
    /// Short name used in output directory names (default: the path).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SweepSection {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.parameter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub relay: RelaySection,
    #[serde(default)]
    pub buses: Vec<BusEntry>,
    #[serde(default)]
    pub branches: Vec<BranchEntry>,
    #[serde(default)]
    pub machines: Vec<MachineEntry>,
    #[serde(default)]
    pub vsg: Vec<VsgEntry>,
    #[serde(default)]
    pub pq_sources: Vec<PqSourceEntry>,
    #[serde(default)]
    pub infinite_buses: Vec<InfiniteBusEntry>,
    #[serde(default)]
    pub pv: Vec<PvEntry>,
    #[serde(default)]
    pub batteries: Vec<BatteryEntry>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penetration: Option<PenetrationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestbedFile {
    #[serde(default)]
    name: String,
    inner_loop: TestbedConfig,
}

/// A validated grid scenario, penetration transform applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub base: PerUnitSystem,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.system.name
    }

    pub fn dt(&self) -> f64 {
        self.file.solver.dt
    }

    pub fn t_end(&self) -> f64 {
        self.file.solver.t_end
    }
}

/// What a scenario file describes.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Document {
    Grid(Scenario),
    Testbed { name: String, config: TestbedConfig },
}

/// Overrides applied after parsing, before validation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadOptions {
    pub dt_override: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn schema_error(text: &str, e: toml::de::Error) -> Error {
    Error::Schema {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    }
}

/// Parse only (syntax check) into a generic table.
pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    match load_document(path, LoadOptions::default())? {
        Document::Grid(s) => Ok(s),
        Document::Testbed { .. } => Err(Error::Validation {
            key: "inner_loop".into(),
            message: "file describes an inner-loop testbed, not a grid scenario".into(),
        }),
    }
}

pub fn load_document(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Document> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_document(&text, opts)
}

pub fn parse_document(text: &str, opts: LoadOptions) -> Result<Document> {
    let table = parse_table(text)?;
    if table.contains_key("inner_loop") {
        let tb: TestbedFile = toml::from_str(text).map_err(|e| schema_error(text, e))?;
        let mut config = tb.inner_loop;
        if let Some(dt) = opts.dt_override {
            config.dt = dt;
        }
        config.validate().map_err(|e| Error::Validation {
            key: "inner_loop".into(),
            message: e.to_string(),
        })?;
        return Ok(Document::Testbed { name: tb.name, config });
    }
    let file: ScenarioFile = toml::from_str(text).map_err(|e| schema_error(text, e))?;
    build_scenario(file, opts).map(Document::Grid)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    match parse_document(text, LoadOptions::default())? {
        Document::Grid(s) => Ok(s),
        Document::Testbed { .. } => Err(Error::Validation {
            key: "inner_loop".into(),
            message: "not a grid scenario".into(),
        }),
    }
}

/// Validate and finish a parsed document.
pub fn build_scenario(mut file: ScenarioFile, opts: LoadOptions) -> Result<Scenario> {
    if let Some(dt) = opts.dt_override {
        file.solver.dt = dt;
    }
    let base = PerUnitSystem::new(file.system.s_base_mva * 1e6, file.system.v_base_kv * 1e3, file.system.f0_hz).map_err(|e| {
        Error::Validation {
            key: "system".into(),
            message: e.to_string(),
        }
    })?;
    check_references(&file)?;
    if let Some(pen) = file.penetration.clone() {
        apply_penetration(&mut file, &pen)?;
    }
    check_values(&file)?;
    file.events.sort_by(|a, b| a.time().total_cmp(&b.time()));
    Ok(Scenario { file, base })
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        message: message.into(),
    }
}

fn unique<'a>(section: &str, ids: impl Iterator<Item = &'a str>, seen: &mut HashSet<String>) -> Result<()> {
    for id in ids {
        if !seen.insert(id.to_string()) {
            return Err(invalid(format!("{section}.{id}"), format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

fn check_references(f: &ScenarioFile) -> Result<()> {
    let mut bus_ids = HashSet::new();
    unique("buses", f.buses.iter().map(|b| b.id.as_str()), &mut bus_ids)?;
    unique("branches", f.branches.iter().map(|b| b.id.as_str()), &mut HashSet::new())?;

    let mut devices = HashSet::new();
    unique("machines", f.machines.iter().map(|m| m.id.as_str()), &mut devices)?;
    unique("vsg", f.vsg.iter().map(|m| m.id.as_str()), &mut devices)?;
    unique("pq_sources", f.pq_sources.iter().map(|m| m.id.as_str()), &mut devices)?;
    unique("infinite_buses", f.infinite_buses.iter().map(|m| m.id.as_str()), &mut devices)?;
    let pv_ids: HashSet<&str> = f.pv.iter().map(|p| p.id.as_str()).collect();
    let bat_ids: HashSet<&str> = f.batteries.iter().map(|b| b.id.as_str()).collect();
    unique("pv", f.pv.iter().map(|p| p.id.as_str()), &mut HashSet::new())?;
    unique("batteries", f.batteries.iter().map(|p| p.id.as_str()), &mut HashSet::new())?;

    let bus = |key: String, id: &str| -> Result<()> {
        if bus_ids.contains(id) {
            Ok(())
        } else {
            Err(Error::Reference {
                key,
                kind: "bus",
                id: id.to_string(),
            })
        }
    };
    for br in &f.branches {
        bus(format!("branches.{}.from", br.id), &br.from)?;
        bus(format!("branches.{}.to", br.id), &br.to)?;
    }
    for m in &f.machines {
        bus(format!("machines.{}.bus", m.id), &m.bus)?;
    }
    for v in &f.vsg {
        bus(format!("vsg.{}.bus", v.id), &v.bus)?;
        if let Some(pv) = &v.pv {
            if !pv_ids.contains(pv.as_str()) {
                return Err(Error::Reference {
                    key: format!("vsg.{}.pv", v.id),
                    kind: "pv array",
                    id: pv.clone(),
                });
            }
        }
        if let Some(b) = &v.battery {
            if !bat_ids.contains(b.as_str()) {
                return Err(Error::Reference {
                    key: format!("vsg.{}.battery", v.id),
                    kind: "battery",
                    id: b.clone(),
                });
            }
        }
    }
    for s in &f.pq_sources {
        bus(format!("pq_sources.{}.bus", s.id), &s.bus)?;
    }
    for s in &f.infinite_buses {
        bus(format!("infinite_buses.{}.bus", s.id), &s.bus)?;
    }

    let dynamic: HashSet<&str> = f.machines.iter().map(|m| m.id.as_str()).chain(f.vsg.iter().map(|v| v.id.as_str())).collect();
    if f.relay.frequency != "coi" && !dynamic.contains(f.relay.frequency.as_str()) {
        return Err(Error::Reference {
            key: "relay.frequency".into(),
            kind: "machine or vsg",
            id: f.relay.frequency.clone(),
        });
    }
    for d in &f.relay.trip_devices {
        if !devices.contains(d) {
            return Err(Error::Reference {
                key: "relay.trip_devices".into(),
                kind: "device",
                id: d.clone(),
            });
        }
    }
    for (i, ev) in f.events.iter().enumerate() {
        match ev {
            EventEntry::LoadStep { bus: b, .. } => bus(format!("events[{i}].bus"), b)?,
            EventEntry::IrradianceStep { pv, .. } => {
                if !pv_ids.contains(pv.as_str()) {
                    return Err(Error::Reference {
                        key: format!("events[{i}].pv"),
                        kind: "pv array",
                        id: pv.clone(),
                    });
                }
            }
            EventEntry::TripDevice { device, .. } | EventEntry::SetParam { device, .. } => {
                if !devices.contains(device) {
                    return Err(Error::Reference {
                        key: format!("events[{i}].device"),
                        kind: "device",
                        id: device.clone(),
                    });
                }
            }
        }
    }
    if let Some(p) = &f.penetration {
        for id in &p.sg {
            if !f.machines.iter().any(|m| &m.id == id) {
                return Err(Error::Reference {
                    key: "penetration.sg".into(),
                    kind: "machine",
                    id: id.clone(),
                });
            }
        }
        for id in &p.der {
            if !f.vsg.iter().any(|m| &m.id == id) && !f.pq_sources.iter().any(|m| &m.id == id) {
                return Err(Error::Reference {
                    key: "penetration.der".into(),
                    kind: "vsg or pq source",
                    id: id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Scale the listed machines by `1 − level` and give the listed DER units
/// `level` of the original synchronous rating and schedule, split evenly.
/// Level 0 removes the DER units.
pub fn apply_penetration(f: &mut ScenarioFile, pen: &PenetrationSection) -> Result<()> {
    if !(0.0..1.0).contains(&pen.level) {
        return Err(invalid("penetration.level", format!("must lie in [0, 1), got {}", pen.level)));
    }
    if pen.der.is_empty() || pen.sg.is_empty() {
        return Err(invalid("penetration", "needs at least one machine and one DER unit"));
    }
    let (mut s_tot, mut p_tot) = (0.0, 0.0);
    for m in f.machines.iter_mut().filter(|m| pen.sg.contains(&m.id)) {
        s_tot += m.s_rated_mva;
        p_tot += m.p;
        m.s_rated_mva *= 1.0 - pen.level;
        m.p *= 1.0 - pen.level;
    }
    let n = pen.der.len() as f64;
    if pen.level == 0.0 {
        let gone: HashSet<&String> = pen.der.iter().collect();
        let freed: Vec<String> = f.vsg.iter().filter(|v| gone.contains(&v.id)).map(|v| v.bus.clone()).collect();
        f.vsg.retain(|v| !gone.contains(&v.id));
        // a bus left without a voltage source becomes a load bus
        for b in f.buses.iter_mut().filter(|b| freed.contains(&b.id)) {
            b.kind = BusKind::Pq;
        }
        f.pq_sources.retain(|v| !gone.contains(&v.id));
        f.relay.trip_devices.retain(|d| !gone.contains(d));
        f.events.retain(|e| match e {
            EventEntry::TripDevice { device, .. } | EventEntry::SetParam { device, .. } => !gone.contains(device),
            _ => true,
        });
        return Ok(());
    }
    for v in f.vsg.iter_mut().filter(|v| pen.der.contains(&v.id)) {
        v.s_rated_mva = pen.level * s_tot / n;
        v.p = pen.level * p_tot / n;
    }
    for s in f.pq_sources.iter_mut().filter(|s| pen.der.contains(&s.id)) {
        s.s_rated_mva = pen.level * s_tot / n;
        s.p = pen.level * p_tot / n;
    }
    Ok(())
}

fn check_values(f: &ScenarioFile) -> Result<()> {
    let s = &f.solver;
    if !(s.dt > 0.0 && s.dt <= 0.01) {
        return Err(invalid("solver.dt", format!("must lie in (0, 0.01] s, got {}", s.dt)));
    }
    if !(s.t_end > 0.0 && s.t_end.is_finite()) {
        return Err(invalid("solver.t_end", format!("must be positive, got {}", s.t_end)));
    }
    if !on_grid(s.t_end, s.dt) {
        return Err(invalid("solver.t_end", format!("{} is not a multiple of dt = {}", s.t_end, s.dt)));
    }

    let r = &f.relay;
    if !(r.rocof_threshold > 0.0) {
        return Err(invalid("relay.rocof_threshold", "must be positive"));
    }
    if !(r.rocof_window >= 2.0 * s.dt) {
        return Err(invalid("relay.rocof_window", "must span at least two steps"));
    }
    for (i, st) in r.uf_stages.iter().enumerate() {
        if !(st.freq_hz > 0.0 && (0.0..=1.0).contains(&st.shed) && st.delay_s >= 0.0) {
            return Err(invalid(format!("relay.uf_stages[{i}]"), "needs freq_hz > 0, shed in [0, 1], delay_s >= 0"));
        }
        if i > 0 && !(st.freq_hz < r.uf_stages[i - 1].freq_hz) {
            return Err(invalid(format!("relay.uf_stages[{i}]"), "stages must be sorted by descending frequency"));
        }
    }

    if f.buses.is_empty() {
        return Err(invalid("buses", "scenario has no buses"));
    }
    let kinds: HashMap<&str, BusKind> = f.buses.iter().map(|b| (b.id.as_str(), b.kind)).collect();
    let mut sources_at: HashMap<&str, Vec<&str>> = HashMap::new();
    for m in &f.machines {
        if !(m.s_rated_mva > 0.0) {
            return Err(invalid(format!("machines.{}.s_rated_mva", m.id), "must be positive"));
        }
        sources_at.entry(&m.bus).or_default().push(&m.id);
    }
    for v in &f.vsg {
        if !(v.s_rated_mva > 0.0) {
            return Err(invalid(format!("vsg.{}.s_rated_mva", v.id), "must be positive"));
        }
        if v.pv.is_some() && v.p != 0.0 {
            return Err(invalid(format!("vsg.{}.p", v.id), "schedule comes from the linked PV array; leave p unset"));
        }
        sources_at.entry(&v.bus).or_default().push(&v.id);
    }
    for s in &f.infinite_buses {
        if !(s.x > 0.0) {
            return Err(invalid(format!("infinite_buses.{}.x", s.id), "must be positive"));
        }
        sources_at.entry(&s.bus).or_default().push(&s.id);
    }
    for (bus, ids) in &sources_at {
        if ids.len() > 1 {
            return Err(invalid(format!("buses.{bus}"), format!("more than one voltage source at one bus: {ids:?}")));
        }
        if kinds[bus] == BusKind::Pq {
            return Err(invalid(format!("buses.{bus}.kind"), format!("bus hosts `{}` and must be pv or slack", ids[0])));
        }
    }
    for b in &f.buses {
        if b.kind != BusKind::Pq && !sources_at.contains_key(b.id.as_str()) {
            return Err(invalid(format!("buses.{}.kind", b.id), "pv and slack buses need a machine, vsg or infinite bus"));
        }
    }
    for p in &f.pv {
        if !(p.rated_mw > 0.0 && p.period_s > 0.0) {
            return Err(invalid(format!("pv.{}", p.id), "rated_mw and period_s must be positive"));
        }
        if !on_grid(p.period_s, s.dt) {
            return Err(invalid(format!("pv.{}.period_s", p.id), "must be a multiple of dt"));
        }
    }

    for (i, ev) in f.events.iter().enumerate() {
        let t = ev.time();
        if !(t >= 0.0 && t <= s.t_end) {
            return Err(invalid(format!("events[{i}].t"), format!("{t} outside [0, t_end]")));
        }
        if !on_grid(t, s.dt) {
            return Err(invalid(format!("events[{i}].t"), format!("{t} is not a multiple of dt = {}", s.dt)));
        }
        if let EventEntry::IrradianceStep { value, .. } = ev {
            if !(0.0..=1.0).contains(value) {
                return Err(invalid(format!("events[{i}].value"), "irradiance must lie in [0, 1]"));
            }
        }
    }
    if let Some(sw) = &f.sweep {
        if sw.values.is_empty() {
            return Err(invalid("sweep.values", "empty value list"));
        }
    }
    Ok(())
}

/// `t` is an integer multiple of `dt` up to rounding.
pub fn on_grid(t: f64, dt: f64) -> bool {
    let k = t / dt;
    (k - k.round()).abs() < 1e-6
}

/// Write `value` at a dotted path. Arrays of tables are indexed by the
/// `id` of their elements. The parent must exist; the leaf may be new.
pub fn set_path(table: &mut toml::Table, path: &str, value: f64) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid("sweep.parameter", format!("malformed path `{path}`")));
    }
    let (leaf, parents) = parts.split_last().expect("split yields one part");
    let mut cur: &mut toml::Table = table;
    let mut i = 0;
    while i < parents.len() {
        let key = parents[i];
        let node = cur
            .get_mut(key)
            .ok_or_else(|| invalid("sweep.parameter", format!("`{path}`: no key `{key}`")))?;
        match node {
            toml::Value::Table(t) => {
                cur = t;
                i += 1;
            }
            toml::Value::Array(items) => {
                let id = parents
                    .get(i + 1)
                    .copied()
                    .ok_or_else(|| invalid("sweep.parameter", format!("`{path}`: `{key}` needs an element id")))?;
                let found = items.iter_mut().find_map(|it| match it {
                    toml::Value::Table(t) if t.get("id").and_then(|v| v.as_str()) == Some(id) => Some(t),
                    _ => None,
                });
                cur = found.ok_or_else(|| invalid("sweep.parameter", format!("`{path}`: no `{key}` element with id `{id}`")))?;
                i += 2;
            }
            _ => return Err(invalid("sweep.parameter", format!("`{path}`: `{key}` is a scalar"))),
        }
    }
    if let Some(old) = cur.get(*leaf) {
        if !(old.is_float() || old.is_integer()) {
            return Err(invalid("sweep.parameter", format!("`{path}` is not numeric")));
        }
    }
    cur.insert((*leaf).to_string(), toml::Value::Float(value));
    Ok(())
}

/// One sweep point: the value as listed, and the scenario or why it failed.
#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub scenario: Result<Scenario>,
}

/// Expand a document with a `[sweep]` section into one scenario per value.
pub fn expand_sweep(text: &str, opts: LoadOptions) -> Result<(SweepSection, Vec<SweepPoint>)> {
    let table = parse_table(text)?;
    let file: ScenarioFile = toml::from_str(text).map_err(|e| schema_error(text, e))?;
    let sweep = file
        .sweep
        .clone()
        .ok_or_else(|| invalid("sweep", "document has no [sweep] section"))?;
    if sweep.values.is_empty() {
        return Err(invalid("sweep.values", "empty value list"));
    }
    // the path must resolve on the template
    set_path(&mut table.clone(), &sweep.parameter, 0.0)?;

    let points = sweep
        .values
        .iter()
        .map(|&value| {
            let scenario = (|| {
                let mut t = table.clone();
                t.remove("sweep");
                set_path(&mut t, &sweep.parameter, value * sweep.scale)?;
                let doc = toml::to_string(&t).map_err(|e| invalid("sweep", e.to_string()))?;
                let f: ScenarioFile = toml::from_str(&doc).map_err(|e| schema_error(&doc, e))?;
                build_scenario(f, opts)
            })();
            SweepPoint { value, scenario }
        })
        .collect();
    Ok((sweep, points))
}
