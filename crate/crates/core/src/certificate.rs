//! Per-generator stability certificate, stability index, the topology-only
//! condition, and a distributed monitoring emulation where each agent sees
//! only its own constants and measurements.

use std::sync::mpsc;
use std::thread;

use serde::Serialize;

use crate::equilibrium::{check_assumption1, reactive_power_injection, AssumptionReport};
use crate::error::{Error, Result};
use crate::netmodel::{AdmittanceMatrix, BusId, NetworkCase};

/// `C_i = -Q_i - V_i^2 B_ii - d_i^2 / (2 m_i)`. Nonpositive values certify.
pub fn stability_index(q: f64, v: f64, b_ii: f64, d: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("inertia must be positive, got {m}")));
    }
    Ok(-q - v * v * b_ii - d * d / (2.0 * m))
}

/// `sum_{j != i} V_i V_j Y_ij sin(theta_ij - delta_i + delta_j)`.
pub fn neighbor_sum(case: &NetworkCase, y: &AdmittanceMatrix, delta: &[f64], i: BusId) -> f64 {
    let v = case.voltages();
    let i = i.0;
    (0..case.n())
        .filter(|&j| j != i && y.magnitude(i, j) > 0.0)
        .map(|j| v[i] * v[j] * y.magnitude(i, j) * (y.angle(i, j) - delta[i] + delta[j]).sin())
        .sum()
}

/// `sum_{j != i} V_i V_j Y_ij`, independent of the operating point.
pub fn corollary1_lhs(case: &NetworkCase, y: &AdmittanceMatrix, i: BusId) -> f64 {
    let v = case.voltages();
    let i = i.0;
    (0..case.n())
        .filter(|&j| j != i)
        .map(|j| v[i] * v[j] * y.magnitude(i, j))
        .sum()
}

fn damping_threshold(case: &NetworkCase, id: BusId) -> (f64, f64, f64) {
    let (_, machine) = case.machine(id).expect("generator bus");
    let d = machine.d(case.omega_s());
    let m = machine.m(case.omega_s());
    (d, m, d * d / (2.0 * m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorAssessment {
    pub bus: BusId,
    pub name: String,
    pub q: f64,
    pub b_ii: f64,
    pub v: f64,
    /// d_i^2 / (2 m_i)
    pub threshold: f64,
    pub c: f64,
    pub theorem1_pass: bool,
    pub corollary1_lhs: f64,
    pub corollary1_pass: bool,
    /// B_ii > 0, i.e. capacitive shunts outweigh the line susceptances.
    pub positive_b_ii: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem1Verdict {
    Pass,
    Fail,
    /// The line-angle hypothesis does not hold at this equilibrium.
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub generators: Vec<GeneratorAssessment>,
    pub theorem1: Theorem1Verdict,
    /// Every generator has C_i <= 0 (regardless of applicability).
    pub theorem1_all_pass: bool,
    pub corollary1_all_pass: bool,
    /// Mean of C_i over generators.
    pub average_c: f64,
    pub assumption: AssumptionReport,
    pub positive_b_ii_buses: Vec<BusId>,
}

pub fn assess_theorem1(case: &NetworkCase, y: &AdmittanceMatrix, delta: &[f64]) -> Result<CertificateReport> {
    if delta.len() != case.n() {
        return Err(Error::InvalidArgument(format!(
            "angle vector has {} entries, case has {} buses",
            delta.len(),
            case.n()
        )));
    }
    let q = reactive_power_injection(case, y, delta);
    let v = case.voltages();
    let mut generators = Vec::with_capacity(case.n_gen());
    for id in case.generator_ids() {
        let i = id.0;
        let (d, m, threshold) = damping_threshold(case, id);
        let b_ii = y.b(i, i);
        let c = stability_index(q[i], v[i], b_ii, d, m)?;
        let lhs = corollary1_lhs(case, y, id);
        generators.push(GeneratorAssessment {
            bus: id,
            name: case.bus(id).name.clone(),
            q: q[i],
            b_ii,
            v: v[i],
            threshold,
            c,
            theorem1_pass: c <= 0.0,
            corollary1_lhs: lhs,
            corollary1_pass: lhs <= threshold,
            positive_b_ii: b_ii > 0.0,
        });
    }
    let assumption = check_assumption1(case, y, delta, None);
    let theorem1_all_pass = generators.iter().all(|g| g.theorem1_pass);
    let theorem1 = match (assumption.pass, theorem1_all_pass) {
        (false, _) => Theorem1Verdict::Inapplicable,
        (true, true) => Theorem1Verdict::Pass,
        (true, false) => Theorem1Verdict::Fail,
    };
    let average_c = generators.iter().map(|g| g.c).sum::<f64>() / generators.len() as f64;
    Ok(CertificateReport {
        theorem1,
        theorem1_all_pass,
        corollary1_all_pass: generators.iter().all(|g| g.corollary1_pass),
        average_c,
        positive_b_ii_buses: generators.iter().filter(|g| g.positive_b_ii).map(|g| g.bus).collect(),
        assumption,
        generators,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryAssessment {
    pub bus: BusId,
    pub name: String,
    pub lhs: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryReport {
    pub generators: Vec<CorollaryAssessment>,
    pub all_pass: bool,
}

/// Operating-point independent check `sum_{j != i} V_i V_j Y_ij <= d_i^2 / (2 m_i)`.
pub fn assess_corollary1(case: &NetworkCase, y: &AdmittanceMatrix) -> CorollaryReport {
    let generators: Vec<_> = case
        .generator_ids()
        .map(|id| {
            let (_, _, threshold) = damping_threshold(case, id);
            let lhs = corollary1_lhs(case, y, id);
            CorollaryAssessment {
                bus: id,
                name: case.bus(id).name.clone(),
                lhs,
                threshold,
                pass: lhs <= threshold,
            }
        })
        .collect();
    CorollaryReport {
        all_pass: generators.iter().all(|g| g.pass),
        generators,
    }
}

/// What a monitoring agent stores about its own generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentConstants {
    pub bus: BusId,
    pub b_ii: f64,
    pub d: f64,
    pub m: f64,
}

/// Constants for every generator of a case.
pub fn agent_constants(case: &NetworkCase, y: &AdmittanceMatrix) -> Vec<AgentConstants> {
    case.generator_ids()
        .map(|id| {
            let (d, m, _) = damping_threshold(case, id);
            AgentConstants {
                bus: id,
                b_ii: y.b(id.0, id.0),
                d,
                m,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Sample {
    Present { t: f64, v: f64, q: f64 },
    Missing { t: f64 },
}

impl Sample {
    pub fn t(&self) -> f64 {
        match *self {
            Sample::Present { t, .. } | Sample::Missing { t } => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorInput {
    pub constants: AgentConstants,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentVerdict {
    Pass,
    Fail,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerdictRecord {
    pub bus: BusId,
    pub t: f64,
    pub c: Option<f64>,
    pub verdict: AgentVerdict,
}

/// A single generator's monitor. It can only see its own constants and the
/// sample it is handed.
#[derive(Debug, Clone, Copy)]
pub struct MonitorAgent {
    constants: AgentConstants,
}

impl MonitorAgent {
    pub fn new(constants: AgentConstants) -> Result<Self> {
        if !(constants.m > 0.0) || !constants.d.is_finite() || !constants.b_ii.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "agent at bus {} has invalid constants",
                constants.bus.0
            )));
        }
        Ok(Self { constants })
    }

    pub fn constants(&self) -> AgentConstants {
        self.constants
    }

    pub fn process(&self, sample: &Sample) -> VerdictRecord {
        let k = self.constants;
        match *sample {
            Sample::Present { t, v, q } if v.is_finite() && q.is_finite() => {
                let c = -q - v * v * k.b_ii - k.d * k.d / (2.0 * k.m);
                VerdictRecord {
                    bus: k.bus,
                    t,
                    c: Some(c),
                    verdict: if c <= 0.0 { AgentVerdict::Pass } else { AgentVerdict::Fail },
                }
            }
            _ => VerdictRecord {
                bus: k.bus,
                t: sample.t(),
                c: None,
                verdict: AgentVerdict::Stale,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRecord {
    pub t: f64,
    pub verdict: AgentVerdict,
    pub reporting: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributedOutcome {
    /// One stream per input, in input order.
    pub agents: Vec<Vec<VerdictRecord>>,
    /// Conjunction over agents per timestamp, in time order.
    pub aggregate: Vec<AggregateRecord>,
}

/// Runs every agent on its own thread and collects their verdicts over a
/// channel. A timestamp aggregates to `Fail` if any agent fails, otherwise
/// to `Stale` if any agent is stale or silent, otherwise to `Pass`.
pub fn distributed_assess(inputs: Vec<MonitorInput>) -> Result<DistributedOutcome> {
    let agents = inputs
        .iter()
        .map(|input| MonitorAgent::new(input.constants))
        .collect::<Result<Vec<_>>>()?;
    let n_agents = inputs.len();

    let (tx, rx) = mpsc::channel::<(usize, VerdictRecord)>();
    thread::scope(|scope| {
        for (index, (agent, input)) in agents.into_iter().zip(inputs).enumerate() {
            let tx = tx.clone();
            scope.spawn(move || {
                for sample in &input.samples {
                    if tx.send((index, agent.process(sample))).is_err() {
                        break;
                    }
                }
            });
        }
    });
    drop(tx);

    let mut streams = vec![Vec::new(); n_agents];
    let mut all: Vec<VerdictRecord> = Vec::new();
    for (index, record) in rx {
        streams[index].push(record);
        all.push(record);
    }

    all.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut aggregate = Vec::new();
    for group in all.chunk_by(|a, b| a.t.total_cmp(&b.t).is_eq()) {
        let verdict = if group.iter().any(|r| r.verdict == AgentVerdict::Fail) {
            AgentVerdict::Fail
        } else if group.len() < n_agents || group.iter().any(|r| r.verdict == AgentVerdict::Stale) {
            AgentVerdict::Stale
        } else {
            AgentVerdict::Pass
        };
        aggregate.push(AggregateRecord {
            t: group[0].t,
            verdict,
            reporting: group.len(),
        });
    }
    Ok(DistributedOutcome {
        agents: streams,
        aggregate,
    })
}
