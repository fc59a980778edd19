//! End-to-end pipelines shared by the command line and the test suites:
//! equilibrium preparation, modal runs, parameter sweeps and paired
//! time-domain runs of the two models.

use rayon::prelude::*;
use serde::Serialize;

use crate::certificate::{assess_theorem1, CertificateReport, Theorem1Verdict};
use crate::dynamics::{perturbed_state_on_slow_manifold, simulate, trajectory_divergence, DynamicState, Model, SimOptions, Trajectory};
use crate::eigen::{eigenvalues, SpectrumReport, StabilityVerdict};
use crate::equilibrium::{solve_equilibrium, EquilibriumPoint, SolverOptions};
use crate::error::{Error, Result};
use crate::linearization::{flow_jacobian_at, modal_compare, system_jacobian, JacobianKind, ModalComparison};
use crate::netmodel::{build_admittance, AdmittanceMatrix, BusId, NetworkCase};
use nalgebra::DMatrix;

/// A case whose reference injection balances the solved equilibrium.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub case: NetworkCase,
    pub y: AdmittanceMatrix,
    pub eq: EquilibriumPoint,
}

impl Prepared {
    pub fn flow_jacobian(&self) -> DMatrix<f64> {
        flow_jacobian_at(&self.case, &self.y, &self.eq.delta)
    }

    pub fn certificate(&self) -> Result<CertificateReport> {
        assess_theorem1(&self.case, &self.y, &self.eq.delta)
    }

    pub fn spectrum(&self, kind: JacobianKind) -> Result<SpectrumReport> {
        let jac = system_jacobian(&self.flow_jacobian(), &self.case, kind)?;
        eigenvalues(&jac.matrix)
    }
}

pub fn prepare(case: &NetworkCase, opts: &SolverOptions) -> Result<Prepared> {
    let y = build_admittance(case);
    let eq = solve_equilibrium(case, &y, None, opts)?;
    Ok(Prepared {
        case: eq.balanced_case(case),
        y,
        eq,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedModal {
    pub eps: f64,
    pub spectrum: SpectrumReport,
    pub comparison: ModalComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalRun {
    pub unperturbed: SpectrumReport,
    pub perturbed: Vec<PerturbedModal>,
}

/// K spectrum once, then J spectrum and matching diagnostics per epsilon.
pub fn modal_run(prep: &Prepared, eps_list: &[f64]) -> Result<ModalRun> {
    if let Some(bad) = eps_list.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {bad}")));
    }
    let unperturbed = prep.spectrum(JacobianKind::Unperturbed)?;
    let coeffs = prep.case.load_freq_coeffs();
    let perturbed = eps_list
        .iter()
        .map(|&eps| {
            let spectrum = prep.spectrum(JacobianKind::Perturbed { eps })?;
            let comparison = modal_compare(&unperturbed, &spectrum, eps, &coeffs)?;
            Ok(PerturbedModal {
                eps,
                spectrum,
                comparison,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModalRun { unperturbed, perturbed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    DampingScale,
    InertiaScale,
    LoadScale,
}

impl SweepParameter {
    pub fn apply(self, case: &NetworkCase, factor: f64) -> Result<NetworkCase> {
        match self {
            SweepParameter::DampingScale => case.scale_damping(factor),
            SweepParameter::InertiaScale => case.scale_inertia(factor),
            SweepParameter::LoadScale => case.scale_loading(factor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub eps: f64,
}

impl SweepSpec {
    /// `count` evenly spaced multipliers on `[lo, hi]`.
    pub fn linspace(parameter: SweepParameter, lo: f64, hi: f64, count: usize, eps: f64) -> Self {
        let values = match count {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect(),
        };
        SweepSpec { parameter, values, eps }
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one multiplier".into()));
        }
        if let Some(bad) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!("multipliers must be positive, got {bad}")));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    AssumptionFailed,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub multiplier: f64,
    pub status: RowStatus,
    pub assumption1_pass: bool,
    pub avg_c: Option<f64>,
    pub avg_re_lambda: Option<f64>,
    pub theorem1: Option<Theorem1Verdict>,
    pub theorem1_all_pass: Option<bool>,
    pub corollary1_all_pass: Option<bool>,
    pub spectrum_verdict: Option<StabilityVerdict>,
}

impl SweepRow {
    fn failed(multiplier: f64, err: &Error) -> Self {
        SweepRow {
            multiplier,
            status: RowStatus::Failed(err.to_string()),
            assumption1_pass: false,
            avg_c: None,
            avg_re_lambda: None,
            theorem1: None,
            theorem1_all_pass: None,
            corollary1_all_pass: None,
            spectrum_verdict: None,
        }
    }
}

fn sweep_row(base: &NetworkCase, spec: &SweepSpec, multiplier: f64, solver: &SolverOptions) -> SweepRow {
    let prep = match spec
        .parameter
        .apply(base, multiplier)
        .and_then(|case| prepare(&case, solver))
    {
        Ok(prep) => prep,
        Err(err) => return SweepRow::failed(multiplier, &err),
    };
    let report = match prep.certificate() {
        Ok(report) => report,
        Err(err) => return SweepRow::failed(multiplier, &err),
    };
    if !report.assumption.pass {
        return SweepRow {
            status: RowStatus::AssumptionFailed,
            ..SweepRow::failed(multiplier, &Error::Validation(String::new()))
        };
    }
    match prep.spectrum(JacobianKind::Perturbed { eps: spec.eps }) {
        Ok(spectrum) => SweepRow {
            multiplier,
            status: RowStatus::Ok,
            assumption1_pass: true,
            avg_c: Some(report.average_c),
            avg_re_lambda: spectrum.mean_nonzero_real(),
            theorem1: Some(report.theorem1),
            theorem1_all_pass: Some(report.theorem1_all_pass),
            corollary1_all_pass: Some(report.corollary1_all_pass),
            spectrum_verdict: Some(spectrum.verdict()),
        },
        Err(err) => SweepRow::failed(multiplier, &err),
    }
}

/// One row per multiplier, computed in parallel and returned in ascending
/// multiplier order. Rows whose power flow or line-angle check fails are
/// flagged rather than aborting the sweep.
pub fn run_sweep(base: &NetworkCase, spec: &SweepSpec, solver: &SolverOptions) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows: Vec<SweepRow> = spec
        .values
        .par_iter()
        .map(|&multiplier| sweep_row(base, spec, multiplier, solver))
        .collect();
    rows.sort_by(|a, b| a.multiplier.total_cmp(&b.multiplier));
    Ok(rows)
}

/// Offsets from the equilibrium applied at t = 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Disturbance {
    pub delta: Vec<(BusId, f64)>,
    pub omega: Vec<(BusId, f64)>,
}

impl Disturbance {
    /// The same angle offset on every generator.
    pub fn generator_angles(case: &NetworkCase, offset: f64) -> Self {
        Disturbance {
            delta: case.generator_ids().map(|id| (id, offset)).collect(),
            omega: Vec::new(),
        }
    }

    fn validate(&self, case: &NetworkCase) -> Result<()> {
        for &(id, value) in self.delta.iter().chain(&self.omega) {
            if id.0 >= case.n() || !value.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid disturbance entry at bus index {}", id.0)));
            }
        }
        Ok(())
    }
}

/// Disturbed initial state. Perturbed-model load frequencies start on the
/// slow manifold, plus any load frequency offsets given.
pub fn initial_state(prep: &Prepared, model: Model, disturbance: &Disturbance) -> Result<DynamicState> {
    disturbance.validate(&prep.case)?;
    let case = &prep.case;
    let mut delta = prep.eq.delta.clone();
    for &(id, offset) in &disturbance.delta {
        delta[id.0] += offset;
    }
    let mut state = match model {
        Model::Unperturbed => DynamicState::at_rest(case, delta, model),
        Model::Perturbed { eps } => {
            perturbed_state_on_slow_manifold(case, &prep.y, delta, vec![0.0; case.n_gen()], eps)
        }
    };
    for &(id, offset) in &disturbance.omega {
        match state.omega.get_mut(id.0) {
            Some(w) => *w += offset,
            None => {
                return Err(Error::InvalidArgument(format!(
                    "bus index {} has no frequency state in this model",
                    id.0
                )))
            }
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedRun {
    pub eps: f64,
    pub trajectory: Trajectory,
    /// Sup-norm gap to the unperturbed run over generator angles and frequencies.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub unperturbed: Trajectory,
    pub perturbed: Vec<PerturbedRun>,
}

pub fn compare_models(prep: &Prepared, disturbance: &Disturbance, eps_list: &[f64], opts: &SimOptions) -> Result<ModelComparison> {
    let x0 = initial_state(prep, Model::Unperturbed, disturbance)?;
    let unperturbed = simulate(&prep.case, &prep.y, &x0, opts)?;
    let generators: Vec<BusId> = prep.case.generator_ids().collect();
    let perturbed = eps_list
        .iter()
        .map(|&eps| {
            let x0 = initial_state(prep, Model::Perturbed { eps }, disturbance)?;
            let trajectory = simulate(&prep.case, &prep.y, &x0, opts)?;
            let gap = trajectory_divergence(&unperturbed, &trajectory, &generators)?;
            Ok(PerturbedRun { eps, trajectory, gap })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelComparison { unperturbed, perturbed })
}
