//! Three-phase unbalanced feeder model.
//!
//! A [`Feeder`] holds buses, 3×3 phase-frame lines, loads and the controllable
//! devices (single-phase PV inverters and SVCs), all converted to per-unit on
//! load. Every vector quantity in the crate is laid out over *node-phases*:
//! the (bus, phase) pairs that physically exist. The layout puts the slack bus
//! first (indices 0, 1, 2 for phases a, b, c), then the remaining buses in
//! file order, phases a < b < c within a bus.
//!
//! Per-unit conventions: `s_base_mva` is the per-phase power base, each bus
//! carries its line-to-neutral voltage base, and a line's impedance base is
//! `v_base² / s_base` of its (shared) voltage level.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Source of the bundled 10-bus feeder.
pub const FEEDER10_JSON: &str = include_str!("../data/feeder10.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseId {
    A,
    B,
    C,
}

impl PhaseId {
    pub const ALL: [PhaseId; 3] = [PhaseId::A, PhaseId::B, PhaseId::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            PhaseId::A => 'a',
            PhaseId::B => 'b',
            PhaseId::C => 'c',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'a' => Some(PhaseId::A),
            'b' => Some(PhaseId::B),
            'c' => Some(PhaseId::C),
            _ => None,
        }
    }

    /// Angle of the slack phasor for this phase, radians (0°, −120°, +120°).
    pub fn slack_angle(self) -> f64 {
        match self {
            PhaseId::A => 0.0,
            PhaseId::B => -120f64.to_radians(),
            PhaseId::C => 120f64.to_radians(),
        }
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Subset of {a, b, c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn empty() -> Self {
        PhaseSet(0)
    }

    pub fn contains(self, p: PhaseId) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn insert(&mut self, p: PhaseId) {
        self.0 |= 1 << p.index();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = PhaseId> {
        PhaseId::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut set = PhaseSet::empty();
        for c in s.chars() {
            let p = PhaseId::from_letter(c)?;
            if set.contains(p) {
                return None;
            }
            set.insert(p);
        }
        (!set.is_empty()).then_some(set)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

/// 3×3 complex block in the phase frame, row/column order a, b, c.
pub type Block3 = [[Complex64; 3]; 3];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub fn zero_block() -> Block3 {
    [[ZERO; 3]; 3]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub phases: PhaseSet,
    pub is_slack: bool,
    /// Line-to-neutral voltage base, kV.
    pub v_base_kv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub phases: PhaseSet,
    /// Series admittance, per-unit, zero outside `phases`.
    pub y_series: Block3,
    /// Total shunt admittance, per-unit; half is placed at each end.
    pub y_shunt: Block3,
}

/// Constant-power load on one node-phase, nominal (peak) values in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadUnit {
    pub bus: usize,
    pub phase: PhaseId,
    pub p_nom: f64,
    pub q_nom: f64,
}

/// Single-phase PV inverter; ratings in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PvUnit {
    pub bus: usize,
    pub phase: PhaseId,
    pub p_rated: f64,
    pub s_rated: f64,
}

/// Single-phase static var compensator; limits in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SvcUnit {
    pub bus: usize,
    pub phase: PhaseId,
    pub q_min: f64,
    pub q_max: f64,
}

/// Bijection between present (bus, phase) pairs and `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePhaseIndex {
    entries: Vec<(usize, PhaseId)>,
    lookup: HashMap<(usize, PhaseId), usize>,
}

impl NodePhaseIndex {
    fn build(buses: &[Bus]) -> Self {
        let mut order: Vec<&Bus> = buses.iter().filter(|b| b.is_slack).collect();
        order.extend(buses.iter().filter(|b| !b.is_slack));
        let entries: Vec<(usize, PhaseId)> = order
            .iter()
            .flat_map(|b| b.phases.iter().map(move |p| (b.id, p)))
            .collect();
        let lookup = entries.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        NodePhaseIndex { entries, lookup }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bus: usize, phase: PhaseId) -> Option<usize> {
        self.lookup.get(&(bus, phase)).copied()
    }

    pub fn entry(&self, index: usize) -> (usize, PhaseId) {
        self.entries[index]
    }

    pub fn entries(&self) -> &[(usize, PhaseId)] {
        &self.entries
    }

    /// Column label such as `"7b"`.
    pub fn label(&self, index: usize) -> String {
        let (bus, phase) = self.entries[index];
        format!("{bus}{phase}")
    }
}

/// Real vector over node-phases (per-unit).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NodePhaseVector {
    pub values: Vec<f64>,
}

impl NodePhaseVector {
    pub fn zeros(n: usize) -> Self {
        NodePhaseVector { values: vec![0.0; n] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        NodePhaseVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }
}

impl Index<usize> for NodePhaseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl IndexMut<usize> for NodePhaseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<LoadUnit>,
    pub pvs: Vec<PvUnit>,
    pub svcs: Vec<SvcUnit>,
    /// Per-phase power base, MVA.
    pub s_base_mva: f64,
    /// Rated voltage magnitude, per-unit; also the slack magnitude.
    pub v0: f64,
    index: NodePhaseIndex,
}

/// Number of slack node-phases; the slack bus is always three-phase and first.
pub const SLACK_PHASES: usize = 3;

impl Feeder {
    /// Validates the parts and builds the node-phase index.
    pub fn new(
        name: impl Into<String>,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        loads: Vec<LoadUnit>,
        pvs: Vec<PvUnit>,
        svcs: Vec<SvcUnit>,
        s_base_mva: f64,
        v0: f64,
    ) -> Result<Self> {
        if !(s_base_mva > 0.0) {
            return Err(Error::Feeder(format!("s_base_mva must be positive, got {s_base_mva}")));
        }
        if !(v0 > 0.0) {
            return Err(Error::Feeder(format!("v0 must be positive, got {v0}")));
        }
        let mut by_id: HashMap<usize, &Bus> = HashMap::new();
        let mut slack: Option<usize> = None;
        for bus in &buses {
            if by_id.insert(bus.id, bus).is_some() {
                return Err(Error::Feeder(format!("bus {} defined twice", bus.id)));
            }
            if bus.phases.is_empty() {
                return Err(Error::Feeder(format!("bus {} has no phases", bus.id)));
            }
            if !(bus.v_base_kv > 0.0) {
                return Err(Error::Feeder(format!("bus {} has non-positive v_base", bus.id)));
            }
            if bus.is_slack {
                if let Some(first) = slack {
                    return Err(Error::DuplicateSlack {
                        first,
                        second: bus.id,
                    });
                }
                if bus.phases != PhaseSet::ABC {
                    return Err(Error::Feeder(format!(
                        "slack bus {} must carry all three phases",
                        bus.id
                    )));
                }
                slack = Some(bus.id);
            }
        }
        let slack = slack.ok_or_else(|| Error::Feeder("no slack bus".into()))?;

        let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
        for (k, line) in lines.iter().enumerate() {
            let ident = format!("line {k} ({}-{})", line.from_bus, line.to_bus);
            let from = by_id
                .get(&line.from_bus)
                .ok_or_else(|| Error::Feeder(format!("{ident}: unknown from bus")))?;
            let to = by_id
                .get(&line.to_bus)
                .ok_or_else(|| Error::Feeder(format!("{ident}: unknown to bus")))?;
            if line.from_bus == line.to_bus {
                return Err(Error::Feeder(format!("{ident}: self loop")));
            }
            if line.phases.is_empty()
                || !line.phases.is_subset(from.phases)
                || !line.phases.is_subset(to.phases)
            {
                return Err(Error::Feeder(format!(
                    "{ident}: phases '{}' not present at both ends",
                    line.phases
                )));
            }
            for a in PhaseId::ALL {
                for b in PhaseId::ALL {
                    let inside = line.phases.contains(a) && line.phases.contains(b);
                    let (ys, ysh) = (line.y_series[a.index()][b.index()], line.y_shunt[a.index()][b.index()]);
                    if !inside && (ys != ZERO || ysh != ZERO) {
                        return Err(Error::Feeder(format!(
                            "{ident}: nonzero admittance on absent phase pair {a}{b}"
                        )));
                    }
                    if ys != line.y_series[b.index()][a.index()] {
                        return Err(Error::Feeder(format!("{ident}: series admittance is not symmetric")));
                    }
                }
            }
            adjacency.entry(line.from_bus).or_default().push(line.to_bus);
            adjacency.entry(line.to_bus).or_default().push(line.from_bus);
        }

        let mut seen: HashMap<usize, bool> = HashMap::new();
        let mut queue = VecDeque::from([slack]);
        seen.insert(slack, true);
        while let Some(b) = queue.pop_front() {
            for &n in adjacency.get(&b).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(n, true).is_none() {
                    queue.push_back(n);
                }
            }
        }
        if let Some(bus) = buses.iter().find(|b| !seen.contains_key(&b.id)) {
            return Err(Error::Disconnected { bus: bus.id });
        }

        let check_device = |kind: &str, k: usize, bus: usize, phase: PhaseId| -> Result<()> {
            match by_id.get(&bus) {
                None => Err(Error::Feeder(format!("{kind} {k}: unknown bus {bus}"))),
                Some(b) if !b.phases.contains(phase) => Err(Error::DeviceOnAbsentPhase {
                    device: format!("{kind} {k}"),
                    bus,
                    phase: phase.letter(),
                }),
                Some(_) => Ok(()),
            }
        };
        for (k, l) in loads.iter().enumerate() {
            check_device("load", k, l.bus, l.phase)?;
        }
        for (k, pv) in pvs.iter().enumerate() {
            check_device("pv", k, pv.bus, pv.phase)?;
            if !(pv.p_rated > 0.0) || pv.s_rated < pv.p_rated {
                return Err(Error::Feeder(format!(
                    "pv {k}: need 0 < p_rated <= s_rated (got {} / {})",
                    pv.p_rated, pv.s_rated
                )));
            }
        }
        for (k, svc) in svcs.iter().enumerate() {
            check_device("svc", k, svc.bus, svc.phase)?;
            if !(svc.q_min <= 0.0 && svc.q_max >= 0.0) {
                return Err(Error::Feeder(format!("svc {k}: need q_min <= 0 <= q_max")));
            }
        }

        let index = NodePhaseIndex::build(&buses);
        Ok(Feeder {
            name: name.into(),
            buses,
            lines,
            loads,
            pvs,
            svcs,
            s_base_mva,
            v0,
            index,
        })
    }

    /// The bundled 10-bus, 27-node-phase test feeder.
    pub fn bundled() -> Self {
        Feeder::from_json_str(FEEDER10_JSON, "feeder10.json").expect("bundled feeder is valid")
    }

    pub fn from_json_str(text: &str, what: &str) -> Result<Self> {
        let file: FeederFile = serde_json::from_str(text).map_err(|e| Error::parse(what, e))?;
        file.into_feeder()
    }

    pub fn index(&self) -> &NodePhaseIndex {
        &self.index
    }

    /// Total node-phase count (`Nph`).
    pub fn n_node_phases(&self) -> usize {
        self.index.len()
    }

    /// Node-phases excluding the slack bus.
    pub fn n_free(&self) -> usize {
        self.index.len() - SLACK_PHASES
    }

    pub fn n_devices(&self) -> usize {
        self.pvs.len() + self.svcs.len()
    }

    pub fn slack_bus(&self) -> &Bus {
        self.buses.iter().find(|b| b.is_slack).expect("validated")
    }

    pub fn bus(&self, id: usize) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn node_phase(&self, bus: usize, phase: PhaseId) -> Option<usize> {
        self.index.get(bus, phase)
    }

    /// Slack phasors `v0∠{0°, −120°, +120°}`.
    pub fn slack_voltages(&self) -> [Complex64; 3] {
        PhaseId::ALL.map(|p| Complex64::from_polar(self.v0, p.slack_angle()))
    }

    /// Every node-phase at the slack pattern for its phase (flat start).
    pub fn flat_voltages(&self) -> Vec<Complex64> {
        let slack = self.slack_voltages();
        self.index
            .entries()
            .iter()
            .map(|&(_, p)| slack[p.index()])
            .collect()
    }

    pub fn mw_to_pu(&self, mw: f64) -> f64 {
        mw / self.s_base_mva
    }

    pub fn pu_to_mw(&self, pu: f64) -> f64 {
        pu * self.s_base_mva
    }

    /// Bus admittance matrix over all node-phases.
    pub fn build_ybus(&self) -> Array2<Complex64> {
        let n = self.n_node_phases();
        let mut y = Array2::<Complex64>::zeros((n, n));
        for line in &self.lines {
            let phases: Vec<PhaseId> = line.phases.iter().collect();
            for &a in &phases {
                let i_from = self.index.get(line.from_bus, a).expect("validated");
                let i_to = self.index.get(line.to_bus, a).expect("validated");
                for &b in &phases {
                    let j_from = self.index.get(line.from_bus, b).expect("validated");
                    let j_to = self.index.get(line.to_bus, b).expect("validated");
                    let ys = line.y_series[a.index()][b.index()];
                    let half_sh = line.y_shunt[a.index()][b.index()] * 0.5;
                    y[[i_from, j_from]] += ys + half_sh;
                    y[[i_to, j_to]] += ys + half_sh;
                    y[[i_from, j_to]] -= ys;
                    y[[i_to, j_from]] -= ys;
                }
            }
        }
        y
    }

    /// Non-slack partition of the admittance matrix.
    pub fn ybus_free(&self) -> Array2<Complex64> {
        let y = self.build_ybus();
        y.slice(ndarray::s![SLACK_PHASES.., SLACK_PHASES..]).to_owned()
    }

    /// Inverse of the non-slack partition of the admittance matrix.
    pub fn build_zbus(&self) -> Result<Array2<Complex64>> {
        let ynn = self.ybus_free();
        linalg::invert(&ynn).map_err(|k| Error::Singular { index: k + SLACK_PHASES })
    }

    /// Load, PV and SVC physical ratings back in MW/MVA/MVar.
    pub fn device_ratings_physical(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.loads {
            out.extend([self.pu_to_mw(l.p_nom), self.pu_to_mw(l.q_nom)]);
        }
        for pv in &self.pvs {
            out.extend([self.pu_to_mw(pv.p_rated), self.pu_to_mw(pv.s_rated)]);
        }
        for s in &self.svcs {
            out.extend([self.pu_to_mw(s.q_min), self.pu_to_mw(s.q_max)]);
        }
        out
    }
}

/// Reads a feeder JSON file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Feeder::from_json_str(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederFile {
    #[serde(default)]
    pub name: String,
    #[serde(default = "one")]
    pub s_base_mva: f64,
    #[serde(default = "one")]
    pub v0: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
    #[serde(default)]
    pub pvs: Vec<PvRecord>,
    #[serde(default)]
    pub svcs: Vec<SvcRecord>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    pub phases: String,
    #[serde(default)]
    pub slack: bool,
    pub v_base_kv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub phases: String,
    /// 3×3 matrix of `[R, X]` ohm pairs.
    pub z_ohm: [[[f64; 2]; 3]; 3],
    /// Optional 3×3 matrix of `[G, B]` siemens pairs (total line charging).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_shunt_s: Option<[[[f64; 2]; 3]; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadRecord {
    pub bus: usize,
    pub phase: String,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PvRecord {
    pub bus: usize,
    pub phase: String,
    pub p_rated_mw: f64,
    pub s_rated_mva: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvcRecord {
    pub bus: usize,
    pub phase: String,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

fn parse_phase(s: &str, what: &str) -> Result<PhaseId> {
    let mut chars = s.chars();
    match (chars.next().and_then(PhaseId::from_letter), chars.next()) {
        (Some(p), None) => Ok(p),
        _ => Err(Error::parse(what, format!("bad phase '{s}'"))),
    }
}

impl FeederFile {
    pub fn into_feeder(self) -> Result<Feeder> {
        let s_base = self.s_base_mva;
        if !(s_base > 0.0) {
            return Err(Error::Feeder(format!("s_base_mva must be positive, got {s_base}")));
        }
        let mut buses = Vec::with_capacity(self.buses.len());
        for b in &self.buses {
            let phases = PhaseSet::parse(&b.phases)
                .ok_or_else(|| Error::parse(format!("bus {}", b.id), format!("bad phases '{}'", b.phases)))?;
            buses.push(Bus {
                id: b.id,
                phases,
                is_slack: b.slack,
                v_base_kv: b.v_base_kv,
            });
        }
        let v_base = |id: usize| buses.iter().find(|b| b.id == id).map(|b| b.v_base_kv);

        let mut lines = Vec::with_capacity(self.lines.len());
        for (k, l) in self.lines.iter().enumerate() {
            let ident = format!("line {k} ({}-{})", l.from, l.to);
            let phases = PhaseSet::parse(&l.phases)
                .ok_or_else(|| Error::parse(&ident, format!("bad phases '{}'", l.phases)))?;
            let (vf, vt) = match (v_base(l.from), v_base(l.to)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Feeder(format!("{ident}: unknown endpoint bus"))),
            };
            if (vf - vt).abs() > 1e-9 * vf.max(vt) {
                return Err(Error::Feeder(format!(
                    "{ident}: endpoints have different voltage bases ({vf} kV vs {vt} kV)"
                )));
            }
            // kV² / MVA = ohm
            let z_base = vf * vf / s_base;
            let y_series = series_admittance_pu(&l.z_ohm, phases, z_base)
                .map_err(|m| Error::Feeder(format!("{ident}: {m}")))?;
            let mut y_shunt = zero_block();
            if let Some(sh) = &l.y_shunt_s {
                for a in 0..3 {
                    for b in 0..3 {
                        y_shunt[a][b] = Complex64::new(sh[a][b][0], sh[a][b][1]) * z_base;
                    }
                }
            }
            lines.push(Line {
                from_bus: l.from,
                to_bus: l.to,
                phases,
                y_series,
                y_shunt,
            });
        }

        let loads = self
            .loads
            .iter()
            .enumerate()
            .map(|(k, l)| {
                Ok(LoadUnit {
                    bus: l.bus,
                    phase: parse_phase(&l.phase, &format!("load {k}"))?,
                    p_nom: l.p_mw / s_base,
                    q_nom: l.q_mvar / s_base,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pvs = self
            .pvs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                Ok(PvUnit {
                    bus: p.bus,
                    phase: parse_phase(&p.phase, &format!("pv {k}"))?,
                    p_rated: p.p_rated_mw / s_base,
                    s_rated: p.s_rated_mva / s_base,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let svcs = self
            .svcs
            .iter()
            .enumerate()
            .map(|(k, s)| {
                Ok(SvcUnit {
                    bus: s.bus,
                    phase: parse_phase(&s.phase, &format!("svc {k}"))?,
                    q_min: s.q_min_mvar / s_base,
                    q_max: s.q_max_mvar / s_base,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Feeder::new(self.name, buses, lines, loads, pvs, svcs, s_base, self.v0)
    }
}

/// Inverts the impedance submatrix over `phases` and scales to per-unit.
fn series_admittance_pu(
    z_ohm: &[[[f64; 2]; 3]; 3],
    phases: PhaseSet,
    z_base: f64,
) -> std::result::Result<Block3, String> {
    let present: Vec<usize> = phases.iter().map(PhaseId::index).collect();
    for a in 0..3 {
        for b in 0..3 {
            let inside = present.contains(&a) && present.contains(&b);
            if !inside && (z_ohm[a][b][0] != 0.0 || z_ohm[a][b][1] != 0.0) {
                return Err(format!("nonzero impedance entry outside line phases at ({a},{b})"));
            }
            if z_ohm[a][b] != z_ohm[b][a] {
                return Err("impedance matrix is not symmetric".into());
            }
        }
    }
    let k = present.len();
    let mut z = Array2::<Complex64>::zeros((k, k));
    for (i, &a) in present.iter().enumerate() {
        for (j, &b) in present.iter().enumerate() {
            z[[i, j]] = Complex64::new(z_ohm[a][b][0], z_ohm[a][b][1]) / z_base;
        }
    }
    let y = linalg::invert(&z).map_err(|_| "singular impedance matrix".to_string())?;
    let mut out = zero_block();
    for (i, &a) in present.iter().enumerate() {
        for (j, &b) in present.iter().enumerate() {
            out[a][b] = y[[i, j]];
        }
    }
    // Numerical inverse of a symmetric matrix can differ from its transpose in
    // the last bit; reciprocity is enforced exactly.
    for a in 0..3 {
        for b in (a + 1)..3 {
            let avg = (out[a][b] + out[b][a]) * 0.5;
            out[a][b] = avg;
            out[b][a] = avg;
        }
    }
    Ok(out)
}
