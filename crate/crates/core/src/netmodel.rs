//! Network description: buses, lines, machine and load parameters, and the
//! nodal admittance matrix.
//!
//! Buses are always stored with generators first (indices `0..n_gen`) and
//! load buses after them. Parallel lines between the same pair of buses are
//! merged into one equivalent branch when a case is built.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Load frequency coefficient used when a load bus omits `d_load`, in
/// per-unit power per rad/s.
pub const DEFAULT_LOAD_FREQ_COEFF: f64 = 0.1;

/// Position of a bus in a [`NetworkCase`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BusId(pub usize);

impl BusId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

/// Swing parameters of a synchronous machine, stored in the case-file units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineParams {
    /// Inertia constant M in seconds.
    pub inertia: f64,
    /// Damping coefficient D (dimensionless).
    pub damping: f64,
}

impl MachineParams {
    /// m = M / omega_s
    pub fn m(&self, omega_s: f64) -> f64 {
        self.inertia / omega_s
    }

    /// d = D / omega_s
    pub fn d(&self, omega_s: f64) -> f64 {
        self.damping / omega_s
    }
}

/// Frequency-dependent load: `-P_e = P_d + d_tilde * ddelta/dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadParams {
    pub freq_coeff: f64,
    pub demand: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusRole {
    Generator {
        mech_power: f64,
        machine: MachineParams,
    },
    Load(LoadParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub name: String,
    pub voltage: f64,
    /// Shunt susceptance to ground.
    pub shunt_b: f64,
    pub role: BusRole,
}

impl Bus {
    pub fn kind(&self) -> BusKind {
        match self.role {
            BusRole::Generator { .. } => BusKind::Generator,
            BusRole::Load(_) => BusKind::Load,
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self.role, BusRole::Generator { .. })
    }

    /// Scheduled active injection: `P_m` at generators, `-P_d` at loads.
    pub fn scheduled_injection(&self) -> f64 {
        match self.role {
            BusRole::Generator { mech_power, .. } => mech_power,
            BusRole::Load(load) => -load.demand,
        }
    }
}

/// Series branch with admittance `g + jb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub g: f64,
    pub b: f64,
}

impl Line {
    pub fn admittance(&self) -> Complex64 {
        Complex64::new(self.g, self.b)
    }

    pub fn connects(&self, i: BusId, j: BusId) -> bool {
        (self.from == i && self.to == j) || (self.from == j && self.to == i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    name: Option<String>,
    base_mva: Option<f64>,
    notes: Vec<String>,
    omega_s: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    n_gen: usize,
}

/// Line given by bus names, as accepted by [`NetworkCase::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct LineSpec {
    pub from: String,
    pub to: String,
    pub g: f64,
    pub b: f64,
}

impl NetworkCase {
    /// Validates and normalizes a case: generators are moved in front of the
    /// loads (keeping their relative order) and parallel lines are merged.
    pub fn new(omega_s: f64, buses: Vec<Bus>, lines: Vec<LineSpec>) -> Result<Self> {
        if !(omega_s.is_finite() && omega_s > 0.0) {
            return Err(Error::Validation(format!(
                "omega_s must be positive, got {omega_s}"
            )));
        }
        if buses.is_empty() {
            return Err(Error::Validation("case has no buses".into()));
        }
        for bus in &buses {
            validate_bus(bus)?;
        }

        let (mut ordered, loads): (Vec<Bus>, Vec<Bus>) =
            buses.into_iter().partition(|b| b.is_generator());
        let n_gen = ordered.len();
        if n_gen == 0 {
            return Err(Error::Validation("case has no generator bus".into()));
        }
        ordered.extend(loads);

        let mut index = HashMap::with_capacity(ordered.len());
        for (i, bus) in ordered.iter().enumerate() {
            if index.insert(bus.name.clone(), BusId(i)).is_some() {
                return Err(Error::Validation(format!("duplicate bus name '{}'", bus.name)));
            }
        }

        let mut merged: Vec<Line> = Vec::with_capacity(lines.len());
        let mut pair_slot: HashMap<(usize, usize), usize> = HashMap::new();
        for spec in &lines {
            let lookup = |name: &str| {
                index.get(name).copied().ok_or_else(|| {
                    Error::Validation(format!("line references unknown bus '{name}'"))
                })
            };
            let from = lookup(&spec.from)?;
            let to = lookup(&spec.to)?;
            if from == to {
                return Err(Error::Validation(format!(
                    "line {} -> {} connects a bus to itself",
                    spec.from, spec.to
                )));
            }
            if !(spec.g.is_finite() && spec.b.is_finite()) || spec.g < 0.0 || spec.b > 0.0 {
                return Err(Error::Validation(format!(
                    "line {} -> {} needs g >= 0 and b <= 0, got g = {}, b = {}",
                    spec.from, spec.to, spec.g, spec.b
                )));
            }
            if spec.g == 0.0 && spec.b == 0.0 {
                return Err(Error::Validation(format!(
                    "line {} -> {} has zero admittance",
                    spec.from, spec.to
                )));
            }
            let key = (from.0.min(to.0), from.0.max(to.0));
            match pair_slot.get(&key) {
                Some(&slot) => {
                    merged[slot].g += spec.g;
                    merged[slot].b += spec.b;
                }
                None => {
                    pair_slot.insert(key, merged.len());
                    merged.push(Line {
                        from,
                        to,
                        g: spec.g,
                        b: spec.b,
                    });
                }
            }
        }

        let case = NetworkCase {
            name: None,
            base_mva: None,
            notes: Vec::new(),
            omega_s,
            buses: ordered,
            lines: merged,
            n_gen,
        };
        case.check_connected()?;
        Ok(case)
    }

    pub fn with_metadata(mut self, name: Option<String>, base_mva: Option<f64>, notes: Vec<String>) -> Self {
        self.name = name;
        self.base_mva = base_mva;
        self.notes = notes;
        self
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.n();
        let mut adjacency = vec![Vec::new(); n];
        for line in &self.lines {
            adjacency[line.from.0].push(line.to.0);
            adjacency[line.to.0].push(line.from.0);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Validation(format!(
                "network is disconnected: bus '{}' is unreachable",
                self.buses[i].name
            ))),
            None => Ok(()),
        }
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn base_mva(&self) -> Option<f64> {
        self.base_mva
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn n_load(&self) -> usize {
        self.buses.len() - self.n_gen
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus(&self, id: BusId) -> &Bus {
        &self.buses[id.0]
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_id(&self, name: &str) -> Option<BusId> {
        self.buses.iter().position(|b| b.name == name).map(BusId)
    }

    pub fn generator_ids(&self) -> impl Iterator<Item = BusId> {
        (0..self.n_gen).map(BusId)
    }

    pub fn load_ids(&self) -> impl Iterator<Item = BusId> {
        (self.n_gen..self.n()).map(BusId)
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.voltage).collect()
    }

    pub fn scheduled_injections(&self) -> Vec<f64> {
        self.buses.iter().map(Bus::scheduled_injection).collect()
    }

    pub fn machine(&self, id: BusId) -> Option<(f64, MachineParams)> {
        match self.buses[id.0].role {
            BusRole::Generator {
                mech_power,
                machine,
            } => Some((mech_power, machine)),
            BusRole::Load(_) => None,
        }
    }

    pub fn load(&self, id: BusId) -> Option<LoadParams> {
        match self.buses[id.0].role {
            BusRole::Load(load) => Some(load),
            BusRole::Generator { .. } => None,
        }
    }

    /// Per-generator m_i = M_i / omega_s.
    pub fn gen_m(&self) -> Vec<f64> {
        self.generator_ids()
            .map(|id| self.machine(id).expect("generator").1.m(self.omega_s))
            .collect()
    }

    /// Per-generator d_i = D_i / omega_s.
    pub fn gen_d(&self) -> Vec<f64> {
        self.generator_ids()
            .map(|id| self.machine(id).expect("generator").1.d(self.omega_s))
            .collect()
    }

    /// Load frequency coefficients in load-bus order.
    pub fn load_freq_coeffs(&self) -> Vec<f64> {
        self.load_ids()
            .map(|id| self.load(id).expect("load").freq_coeff)
            .collect()
    }

    /// Returns a copy with an extra line; a line parallel to an existing one
    /// is merged into it.
    pub fn with_added_line(&self, from: BusId, to: BusId, g: f64, b: f64) -> Result<Self> {
        let mut specs = self.line_specs();
        specs.push(LineSpec {
            from: self.buses[from.0].name.clone(),
            to: self.buses[to.0].name.clone(),
            g,
            b,
        });
        Ok(NetworkCase::new(self.omega_s, self.buses.clone(), specs)?.with_metadata(
            self.name.clone(),
            self.base_mva,
            self.notes.clone(),
        ))
    }

    /// Returns a copy with the scheduled injection of one bus replaced.
    pub fn with_injection(&self, id: BusId, injection: f64) -> Self {
        let mut out = self.clone();
        match &mut out.buses[id.0].role {
            BusRole::Generator { mech_power, .. } => *mech_power = injection,
            BusRole::Load(load) => load.demand = -injection,
        }
        out
    }

    /// Multiplies every generator damping coefficient.
    pub fn scale_damping(&self, factor: f64) -> Result<Self> {
        self.map_machines(factor, |machine, f| machine.damping *= f)
    }

    /// Multiplies every generator inertia constant.
    pub fn scale_inertia(&self, factor: f64) -> Result<Self> {
        self.map_machines(factor, |machine, f| machine.inertia *= f)
    }

    /// Multiplies all load demands and generator mechanical powers.
    pub fn scale_loading(&self, factor: f64) -> Result<Self> {
        check_factor(factor)?;
        let mut out = self.clone();
        for bus in &mut out.buses {
            match &mut bus.role {
                BusRole::Generator { mech_power, .. } => *mech_power *= factor,
                BusRole::Load(load) => load.demand *= factor,
            }
        }
        Ok(out)
    }

    fn map_machines(&self, factor: f64, apply: impl Fn(&mut MachineParams, f64)) -> Result<Self> {
        check_factor(factor)?;
        let mut out = self.clone();
        for bus in &mut out.buses {
            if let BusRole::Generator { machine, .. } = &mut bus.role {
                apply(machine, factor);
            }
        }
        Ok(out)
    }

    fn line_specs(&self) -> Vec<LineSpec> {
        self.lines
            .iter()
            .map(|l| LineSpec {
                from: self.buses[l.from.0].name.clone(),
                to: self.buses[l.to.0].name.clone(),
                g: l.g,
                b: l.b,
            })
            .collect()
    }

    /// Serializes to the JSON case format (generators first, merged lines).
    pub fn to_json(&self) -> String {
        let raw = RawCase {
            name: self.name.clone(),
            base_mva: self.base_mva,
            notes: self.notes.clone(),
            omega_s: self.omega_s,
            buses: self.buses.iter().map(RawBus::from_bus).collect(),
            lines: self
                .line_specs()
                .into_iter()
                .map(|l| RawLine {
                    from: l.from,
                    to: l.to,
                    g: l.g,
                    b: l.b,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("case serializes")
    }
}

fn check_factor(factor: f64) -> Result<()> {
    if factor.is_finite() && factor > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "scale factor must be positive, got {factor}"
        )))
    }
}

fn validate_bus(bus: &Bus) -> Result<()> {
    let positive = |value: f64, what: &str| {
        if value.is_finite() && value > 0.0 {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "bus '{}': {what} must be positive, got {value}",
                bus.name
            )))
        }
    };
    if bus.name.is_empty() {
        return Err(Error::Validation("bus with empty name".into()));
    }
    positive(bus.voltage, "V")?;
    if !bus.shunt_b.is_finite() {
        return Err(Error::Validation(format!("bus '{}': shunt_b is not finite", bus.name)));
    }
    match bus.role {
        BusRole::Generator {
            mech_power,
            machine,
        } => {
            positive(machine.inertia, "M")?;
            positive(machine.damping, "D")?;
            if !mech_power.is_finite() {
                return Err(Error::Validation(format!("bus '{}': Pm is not finite", bus.name)));
            }
        }
        BusRole::Load(load) => {
            positive(load.freq_coeff, "d_load")?;
            if !load.demand.is_finite() {
                return Err(Error::Validation(format!("bus '{}': Pd is not finite", bus.name)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_mva: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    omega_s: f64,
    buses: Vec<RawBus>,
    lines: Vec<RawLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    name: String,
    kind: BusKind,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "Pm", default, skip_serializing_if = "Option::is_none")]
    pm: Option<f64>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_load: Option<f64>,
    #[serde(rename = "Pd", default, skip_serializing_if = "Option::is_none")]
    pd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shunt_b: Option<f64>,
}

impl RawBus {
    fn from_bus(bus: &Bus) -> Self {
        let shunt_b = (bus.shunt_b != 0.0).then_some(bus.shunt_b);
        match bus.role {
            BusRole::Generator {
                mech_power,
                machine,
            } => RawBus {
                name: bus.name.clone(),
                kind: BusKind::Generator,
                v: bus.voltage,
                pm: Some(mech_power),
                m: Some(machine.inertia),
                d: Some(machine.damping),
                d_load: None,
                pd: None,
                shunt_b,
            },
            BusRole::Load(load) => RawBus {
                name: bus.name.clone(),
                kind: BusKind::Load,
                v: bus.voltage,
                pm: None,
                m: None,
                d: None,
                d_load: Some(load.freq_coeff),
                pd: Some(load.demand),
                shunt_b,
            },
        }
    }

    fn into_bus(self) -> Result<Bus> {
        let role = match self.kind {
            BusKind::Generator => {
                if self.d_load.is_some() || self.pd.is_some() {
                    return Err(Error::Validation(format!(
                        "generator bus '{}' must not carry load fields",
                        self.name
                    )));
                }
                let m = self.m.ok_or_else(|| {
                    Error::Validation(format!("generator bus '{}' is missing M", self.name))
                })?;
                let d = self.d.ok_or_else(|| {
                    Error::Validation(format!("generator bus '{}' is missing D", self.name))
                })?;
                BusRole::Generator {
                    mech_power: self.pm.unwrap_or(0.0),
                    machine: MachineParams {
                        inertia: m,
                        damping: d,
                    },
                }
            }
            BusKind::Load => {
                if self.m.is_some() || self.d.is_some() || self.pm.is_some() {
                    return Err(Error::Validation(format!(
                        "load bus '{}' must not carry machine fields",
                        self.name
                    )));
                }
                BusRole::Load(LoadParams {
                    freq_coeff: self.d_load.unwrap_or(DEFAULT_LOAD_FREQ_COEFF),
                    demand: self.pd.unwrap_or(0.0),
                })
            }
        };
        Ok(Bus {
            name: self.name,
            voltage: self.v,
            shunt_b: self.shunt_b.unwrap_or(0.0),
            role,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: String,
    to: String,
    #[serde(default)]
    g: f64,
    b: f64,
}

/// Parses and validates a JSON case file.
pub fn load_case(source: &str) -> Result<NetworkCase> {
    let raw: RawCase = serde_json::from_str(source).map_err(|e| Error::Parse(e.to_string()))?;
    let buses = raw
        .buses
        .into_iter()
        .map(RawBus::into_bus)
        .collect::<Result<Vec<_>>>()?;
    let lines = raw
        .lines
        .into_iter()
        .map(|l| LineSpec {
            from: l.from,
            to: l.to,
            g: l.g,
            b: l.b,
        })
        .collect();
    Ok(NetworkCase::new(raw.omega_s, buses, lines)?.with_metadata(raw.name, raw.base_mva, raw.notes))
}

/// Dense nodal admittance matrix with cached polar form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex64>,
    magnitude: DMatrix<f64>,
    angle: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn from_matrix(y: DMatrix<Complex64>) -> Self {
        let magnitude = y.map(|v| v.norm());
        let angle = y.map(|v| if v == Complex64::new(0.0, 0.0) { 0.0 } else { v.arg() });
        AdmittanceMatrix {
            y,
            magnitude,
            angle,
        }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.y[(i, j)]
    }

    /// |Y_ij|
    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.magnitude[(i, j)]
    }

    /// theta_ij, the argument of Y_ij.
    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.angle[(i, j)]
    }

    /// G_ij, real part.
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.y[(i, j)].re
    }

    /// B_ij, imaginary part.
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.y[(i, j)].im
    }
}

pub fn build_admittance(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.n();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in case.lines() {
        let (i, j) = (line.from.0, line.to.0);
        let yl = line.admittance();
        y[(i, i)] += yl;
        y[(j, j)] += yl;
        y[(i, j)] -= yl;
        y[(j, i)] -= yl;
    }
    for (i, bus) in case.buses().iter().enumerate() {
        y[(i, i)] += Complex64::new(0.0, bus.shunt_b);
    }
    AdmittanceMatrix::from_matrix(y)
}

/// Adds an internal EMF bus behind each generator's transient reactance.
///
/// Each original generator bus becomes a zero-demand load bus; the machine
/// moves to a new bus `<name>_int` joined by a lossless line `b = -1/x'_d`.
/// The internal bus keeps the terminal voltage magnitude. Former generator
/// terminals get the mean load frequency coefficient of the case (or
/// [`DEFAULT_LOAD_FREQ_COEFF`] if the case has no loads).
pub fn augment_internal_buses(case: &NetworkCase, transient_reactances: &[f64]) -> Result<NetworkCase> {
    if transient_reactances.len() != case.n_gen() {
        return Err(Error::InvalidArgument(format!(
            "expected {} transient reactances, got {}",
            case.n_gen(),
            transient_reactances.len()
        )));
    }
    if let Some(x) = transient_reactances.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "transient reactance must be positive, got {x}"
        )));
    }
    let coeffs = case.load_freq_coeffs();
    let terminal_coeff = if coeffs.is_empty() {
        DEFAULT_LOAD_FREQ_COEFF
    } else {
        coeffs.iter().sum::<f64>() / coeffs.len() as f64
    };

    let mut buses = Vec::with_capacity(case.n() + case.n_gen());
    let mut lines = case.line_specs();
    for (k, bus) in case.buses().iter().enumerate().take(case.n_gen()) {
        let internal = format!("{}_int", bus.name);
        buses.push(Bus {
            name: internal.clone(),
            voltage: bus.voltage,
            shunt_b: 0.0,
            role: bus.role,
        });
        lines.push(LineSpec {
            from: internal,
            to: bus.name.clone(),
            g: 0.0,
            b: -1.0 / transient_reactances[k],
        });
    }
    for bus in case.buses() {
        let mut bus = bus.clone();
        if bus.is_generator() {
            bus.role = BusRole::Load(LoadParams {
                freq_coeff: terminal_coeff,
                demand: 0.0,
            });
        }
        buses.push(bus);
    }
    Ok(NetworkCase::new(case.omega_s, buses, lines)?.with_metadata(
        case.name.clone(),
        case.base_mva,
        case.notes.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = include_str!("../data/two_bus.json");
    const WSCC9: &str = include_str!("../data/wscc9.json");

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn two_bus_loads() {
        let case = load_case(TWO_BUS).unwrap();
        assert_eq!(case.n(), 2);
        assert_eq!(case.n_gen(), 1);
        assert_eq!(case.bus_id("L2"), Some(BusId(1)));
    }

    #[test]
    fn wscc9_counts() {
        let case = load_case(WSCC9).unwrap();
        assert_eq!(case.n(), 9);
        assert_eq!(case.n_gen(), 3);
        assert_eq!(case.lines().len(), 9);
        assert_eq!(case.load_ids().count(), 6);
    }

    #[test]
    fn zero_damping_rejected() {
        let text = TWO_BUS.replace("\"D\": 2.0", "\"D\": 0.0");
        assert!(matches!(load_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(load_case("{ \"omega_s\": "), Err(Error::Parse(_))));
        let unknown = TWO_BUS.replace("\"d_load\"", "\"dload\"");
        assert!(matches!(load_case(&unknown), Err(Error::Parse(_))));
    }

    #[test]
    fn validation_errors() {
        let bad_v = TWO_BUS.replace("\"V\": 1.0, \"Pd\"", "\"V\": -1.0, \"Pd\"");
        assert!(matches!(load_case(&bad_v), Err(Error::Validation(_))));
        let bad_dl = TWO_BUS.replace("\"d_load\": 1.0", "\"d_load\": 0.0");
        assert!(matches!(load_case(&bad_dl), Err(Error::Validation(_))));
        let self_loop = TWO_BUS.replace("\"to\": \"L2\"", "\"to\": \"G1\"");
        assert!(matches!(load_case(&self_loop), Err(Error::Validation(_))));
        let capacitive = TWO_BUS.replace("\"b\": -2.0", "\"b\": 2.0");
        assert!(matches!(load_case(&capacitive), Err(Error::Validation(_))));
        let gen_with_load = TWO_BUS.replace("\"D\": 2.0", "\"D\": 2.0, \"Pd\": 0.5");
        assert!(matches!(load_case(&gen_with_load), Err(Error::Validation(_))));
    }

    #[test]
    fn disconnected_rejected() {
        let text = r#"{"omega_s": 1.0,
            "buses": [
              {"name": "a", "kind": "generator", "V": 1.0, "M": 1.0, "D": 1.0},
              {"name": "b", "kind": "load", "V": 1.0},
              {"name": "c", "kind": "load", "V": 1.0}],
            "lines": [{"from": "a", "to": "b", "b": -1.0}]}"#;
        let err = load_case(text).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn generators_reordered_first() {
        let text = r#"{"omega_s": 1.0,
            "buses": [
              {"name": "l", "kind": "load", "V": 1.0, "Pd": 0.3},
              {"name": "g", "kind": "generator", "V": 1.0, "M": 1.0, "D": 1.0, "Pm": 0.3}],
            "lines": [{"from": "l", "to": "g", "b": -1.0}]}"#;
        let case = load_case(text).unwrap();
        assert_eq!(case.bus_id("g"), Some(BusId(0)));
        assert_eq!(case.bus_id("l"), Some(BusId(1)));
        assert_eq!(case.lines()[0].from, BusId(1));
        assert_eq!(case.load(BusId(1)).unwrap().freq_coeff, DEFAULT_LOAD_FREQ_COEFF);
    }

    #[test]
    fn parallel_lines_merge() {
        let text = TWO_BUS.replace(
            "{ \"from\": \"G1\", \"to\": \"L2\", \"g\": 0.0, \"b\": -2.0 }",
            "{ \"from\": \"G1\", \"to\": \"L2\", \"g\": 0.0, \"b\": -2.0 },
             { \"from\": \"L2\", \"to\": \"G1\", \"g\": 0.5, \"b\": -2.0 }",
        );
        let case = load_case(&text).unwrap();
        assert_eq!(case.lines().len(), 1);
        assert!(close(case.lines()[0].b, -4.0));
        assert!(close(case.lines()[0].g, 0.5));
    }

    #[test]
    fn two_bus_admittance() {
        let case = load_case(TWO_BUS).unwrap();
        let y = build_admittance(&case);
        assert_eq!(y.entry(0, 0), Complex64::new(0.0, -2.0));
        assert_eq!(y.entry(0, 1), Complex64::new(0.0, 2.0));
        assert_eq!(y.entry(1, 0), Complex64::new(0.0, 2.0));
        assert_eq!(y.entry(1, 1), Complex64::new(0.0, -2.0));
        assert!(close(y.magnitude(0, 1), 2.0));
        assert!(close(y.angle(0, 1), std::f64::consts::FRAC_PI_2));
        assert!(close(y.b(0, 0), -2.0));
    }

    #[test]
    fn shunt_adds_to_diagonal() {
        let text = TWO_BUS.replace("\"D\": 2.0 }", "\"D\": 2.0, \"shunt_b\": 0.1 }");
        let y = build_admittance(&load_case(&text).unwrap());
        assert!(close(y.b(0, 0), -1.9));
        assert!(close(y.b(1, 1), -2.0));
    }

    #[test]
    fn wscc9_admittance_by_hand() {
        let case = load_case(WSCC9).unwrap();
        let y = build_admittance(&case);
        assert_eq!(y.n(), 9);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(y.entry(i, j), y.entry(j, i));
                if i != j && y.magnitude(i, j) > 0.0 {
                    let theta = y.angle(i, j);
                    assert!(theta >= std::f64::consts::FRAC_PI_2 && theta < std::f64::consts::PI);
                }
            }
        }
        // Bus 1 only connects to bus 4 through x = 0.0576.
        let b1 = case.bus_id("1").unwrap().0;
        let b4 = case.bus_id("4").unwrap().0;
        assert!((y.b(b1, b1) + 1.0 / 0.0576).abs() < 1e-9);
        assert!((y.entry(b1, b4) - Complex64::new(0.0, 1.0 / 0.0576)).norm() < 1e-9);
        // Bus 5: lines 4-5 (0.017 + j0.092, charging 0.158) and 5-6 (0.039 + j0.17, charging 0.358).
        let y45 = Complex64::new(1.0, 0.0) / Complex64::new(0.017, 0.092);
        let y56 = Complex64::new(1.0, 0.0) / Complex64::new(0.039, 0.17);
        let expected = y45 + y56 + Complex64::new(0.0, (0.158 + 0.358) / 2.0);
        let b5 = case.bus_id("5").unwrap().0;
        assert!((y.entry(b5, b5) - expected).norm() < 1e-9);
    }

    #[test]
    fn adding_line_never_shrinks_susceptance_magnitude() {
        let case = load_case(WSCC9).unwrap();
        let y = build_admittance(&case);
        let a = case.bus_id("1").unwrap();
        let b = case.bus_id("5").unwrap();
        let bigger = case.with_added_line(a, b, 0.3, -4.0).unwrap();
        let y2 = build_admittance(&bigger);
        assert!(y2.b(a.0, a.0).abs() >= y.b(a.0, a.0).abs());
        assert!(y2.b(b.0, b.0).abs() >= y.b(b.0, b.0).abs());
        assert_eq!(bigger.lines().len(), 10);
    }

    #[test]
    fn augmentation_two_bus() {
        let case = load_case(TWO_BUS).unwrap();
        let aug = augment_internal_buses(&case, &[0.1]).unwrap();
        assert_eq!(aug.n(), 3);
        assert_eq!(aug.n_gen(), 1);
        assert_eq!(aug.bus(BusId(0)).name, "G1_int");
        let new_line = aug
            .lines()
            .iter()
            .find(|l| l.connects(BusId(0), aug.bus_id("G1").unwrap()))
            .unwrap();
        assert!(close(new_line.b, -10.0));
        assert_eq!(aug.load(aug.bus_id("G1").unwrap()).unwrap().demand, 0.0);
    }

    #[test]
    fn augmentation_wscc9() {
        let case = load_case(WSCC9).unwrap();
        let aug = augment_internal_buses(&case, &[0.0608, 0.1198, 0.1813]).unwrap();
        assert_eq!(aug.n(), 12);
        assert_eq!(aug.n_gen(), 3);
        assert_eq!(aug.n_load(), 9);

        // Entries among buses that keep their neighbourhood are unchanged.
        let y = build_admittance(&case);
        let ya = build_admittance(&aug);
        for a in ["4", "5", "6", "7", "8", "9"] {
            for b in ["4", "5", "6", "7", "8", "9"] {
                let (i, j) = (case.bus_id(a).unwrap().0, case.bus_id(b).unwrap().0);
                let (p, q) = (aug.bus_id(a).unwrap().0, aug.bus_id(b).unwrap().0);
                assert_eq!(y.entry(i, j), ya.entry(p, q));
            }
        }
    }

    #[test]
    fn augmentation_rejects_zero_reactance() {
        let case = load_case(TWO_BUS).unwrap();
        assert!(augment_internal_buses(&case, &[0.0]).is_err());
        assert!(augment_internal_buses(&case, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn json_round_trip() {
        for text in [TWO_BUS, WSCC9] {
            let case = load_case(text).unwrap();
            let again = load_case(&case.to_json()).unwrap();
            assert_eq!(case, again);
        }
    }

    #[test]
    fn scaling_rejects_nonpositive() {
        let case = load_case(TWO_BUS).unwrap();
        assert!(case.scale_damping(0.0).is_err());
        let scaled = case.scale_damping(2.0).unwrap();
        assert!(close(scaled.gen_d()[0], 4.0));
    }
}
