//! Time-domain simulation of the structure-preserving swing model, its
//! singularly perturbed counterpart, and the boundary-layer system.
//!
//! State layout is `[delta_0..delta_{n-1}, omega...]`. The unperturbed model
//! carries `omega` for generators only; the perturbed model carries it for
//! every bus, with `epsilon` as the inertia of the load buses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{integrate, IntegrationStats, Method, OdeSystem, StepControl};
use crate::netmodel::{AdmittanceMatrix, BusId, NetworkCase};

/// Below this epsilon the perturbed model is integrated implicitly.
pub const IMPLICIT_EPS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Unperturbed,
    Perturbed { eps: f64 },
}

impl Model {
    pub fn omega_len(&self, case: &NetworkCase) -> usize {
        match self {
            Model::Unperturbed => case.n_gen(),
            Model::Perturbed { .. } => case.n(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicState {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub model: Model,
}

impl DynamicState {
    /// Angles `delta` with all frequency deviations zero.
    pub fn at_rest(case: &NetworkCase, delta: Vec<f64>, model: Model) -> Self {
        DynamicState {
            omega: vec![0.0; model.omega_len(case)],
            delta,
            model,
        }
    }

    fn validate(&self, case: &NetworkCase) -> Result<()> {
        if let Model::Perturbed { eps } = self.model {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
            }
        }
        if self.delta.len() != case.n() || self.omega.len() != self.model.omega_len(case) {
            return Err(Error::InvalidArgument(format!(
                "state dimensions ({}, {}) do not match the case and model",
                self.delta.len(),
                self.omega.len()
            )));
        }
        Ok(())
    }

    fn flatten(&self) -> Vec<f64> {
        self.delta.iter().chain(&self.omega).copied().collect()
    }

    fn unflatten(n: usize, model: Model, x: &[f64]) -> Self {
        DynamicState {
            delta: x[..n].to_vec(),
            omega: x[n..].to_vec(),
            model,
        }
    }
}

/// Swing dynamics over a fixed network, evaluated without allocation.
pub struct SwingSystem {
    n: usize,
    n_gen: usize,
    model: Model,
    // Per bus: (j, V_i V_j |Y_ij|, theta_ij), including j == i.
    couplings: Vec<Vec<(usize, f64, f64)>>,
    injection: Vec<f64>,
    gen_m: Vec<f64>,
    gen_d: Vec<f64>,
    load_coeff: Vec<f64>,
}

impl SwingSystem {
    pub fn new(case: &NetworkCase, y: &AdmittanceMatrix, model: Model) -> Result<Self> {
        if let Model::Perturbed { eps } = model {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
            }
        }
        let n = case.n();
        let v = case.voltages();
        let couplings = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| y.magnitude(i, j) != 0.0)
                    .map(|j| (j, v[i] * v[j] * y.magnitude(i, j), y.angle(i, j)))
                    .collect()
            })
            .collect();
        Ok(SwingSystem {
            n,
            n_gen: case.n_gen(),
            model,
            couplings,
            injection: case.scheduled_injections(),
            gen_m: case.gen_m(),
            gen_d: case.gen_d(),
            load_coeff: case.load_freq_coeffs(),
        })
    }

    fn electrical_power(&self, delta: &[f64], i: usize) -> f64 {
        self.couplings[i]
            .iter()
            .map(|&(j, k, theta)| k * (theta - delta[i] + delta[j]).cos())
            .sum()
    }
}

impl OdeSystem for SwingSystem {
    fn dim(&self) -> usize {
        match self.model {
            Model::Unperturbed => self.n + self.n_gen,
            Model::Perturbed { .. } => 2 * self.n,
        }
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        let (n, n_gen) = (self.n, self.n_gen);
        let (delta, omega) = x.split_at(n);
        match self.model {
            Model::Unperturbed => {
                for i in 0..n {
                    let pe = self.electrical_power(delta, i);
                    if i < n_gen {
                        dx[i] = omega[i];
                        dx[n + i] = (-self.gen_d[i] * omega[i] + self.injection[i] - pe) / self.gen_m[i];
                    } else {
                        // injection = -P_d at loads
                        dx[i] = (self.injection[i] - pe) / self.load_coeff[i - n_gen];
                    }
                }
            }
            Model::Perturbed { eps } => {
                for i in 0..n {
                    let pe = self.electrical_power(delta, i);
                    dx[i] = omega[i];
                    dx[n + i] = if i < n_gen {
                        (-self.gen_d[i] * omega[i] + self.injection[i] - pe) / self.gen_m[i]
                    } else {
                        (-self.load_coeff[i - n_gen] * omega[i] + self.injection[i] - pe) / eps
                    };
                }
            }
        }
    }
}

fn evaluate_rhs(case: &NetworkCase, y: &AdmittanceMatrix, state: &DynamicState) -> Result<DynamicState> {
    state.validate(case)?;
    let sys = SwingSystem::new(case, y, state.model)?;
    let x = state.flatten();
    let mut dx = vec![0.0; x.len()];
    sys.rhs(0.0, &x, &mut dx);
    Ok(DynamicState::unflatten(case.n(), state.model, &dx))
}

/// Time derivative of the structure-preserving model.
pub fn rhs_unperturbed(case: &NetworkCase, y: &AdmittanceMatrix, state: &DynamicState) -> Result<DynamicState> {
    if state.model != Model::Unperturbed {
        return Err(Error::InvalidArgument("state is not tagged unperturbed".into()));
    }
    evaluate_rhs(case, y, state)
}

/// Time derivative of the singularly perturbed model.
pub fn rhs_perturbed(case: &NetworkCase, y: &AdmittanceMatrix, state: &DynamicState) -> Result<DynamicState> {
    if !matches!(state.model, Model::Perturbed { .. }) {
        return Err(Error::InvalidArgument("state is not tagged perturbed".into()));
    }
    evaluate_rhs(case, y, state)
}

/// Load-bus frequencies on the slow manifold: `(-P_d - P_e) / d_tilde`.
pub fn quasi_steady_load_omega(case: &NetworkCase, y: &AdmittanceMatrix, delta: &[f64]) -> Vec<f64> {
    let pe = crate::equilibrium::active_power_injection(case, y, delta);
    let scheduled = case.scheduled_injections();
    let coeff = case.load_freq_coeffs();
    case.load_ids()
        .zip(&coeff)
        .map(|(id, d)| (scheduled[id.0] - pe[id.0]) / d)
        .collect()
}

/// Builds a perturbed-model state whose load frequencies start on the slow
/// manifold for the given angles.
pub fn perturbed_state_on_slow_manifold(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    delta: Vec<f64>,
    gen_omega: Vec<f64>,
    eps: f64,
) -> DynamicState {
    let mut omega = gen_omega;
    omega.extend(quasi_steady_load_omega(case, y, &delta));
    DynamicState {
        delta,
        omega,
        model: Model::Perturbed { eps },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Explicit, switching to implicit below [`IMPLICIT_EPS_THRESHOLD`].
    Auto,
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
    pub sample_interval: f64,
    pub method: MethodChoice,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: 20.0,
            rtol: 1e-8,
            atol: 1e-10,
            max_step: None,
            sample_interval: 0.01,
            method: MethodChoice::Auto,
        }
    }
}

impl SimOptions {
    fn sample_times(&self) -> Vec<f64> {
        let count = (self.horizon / self.sample_interval).round() as usize;
        let mut times: Vec<f64> = (0..=count).map(|k| k as f64 * self.sample_interval).collect();
        if let Some(last) = times.last_mut() {
            if (*last - self.horizon).abs() < 1e-9 * self.horizon {
                *last = self.horizon;
            } else if *last < self.horizon {
                times.push(self.horizon);
            } else {
                *last = self.horizon;
            }
        }
        times
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub model: Model,
    pub times: Vec<f64>,
    pub states: Vec<DynamicState>,
    pub stats: IntegrationStats,
    /// Step cap that was in force, if any.
    pub max_step: Option<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DynamicState {
        self.states.last().expect("trajectory has at least one sample")
    }

    fn value(&self, k: usize, var: Variable) -> Option<f64> {
        let s = &self.states[k];
        match var {
            Variable::Delta(i) => s.delta.get(i).copied(),
            Variable::Omega(i) => s.omega.get(i).copied(),
        }
    }

    fn interpolate(&self, t: f64, var: Variable) -> Option<f64> {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.value(0, var);
        }
        if k >= self.times.len() {
            return self.value(self.times.len() - 1, var);
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (a, b) = (self.value(k - 1, var)?, self.value(k, var)?);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        Some(a + w * (b - a))
    }
}

#[derive(Debug, Clone, Copy)]
enum Variable {
    Delta(usize),
    Omega(usize),
}

/// Integrates either model from `x0` on a uniform output grid.
pub fn simulate(case: &NetworkCase, y: &AdmittanceMatrix, x0: &DynamicState, opts: &SimOptions) -> Result<Trajectory> {
    x0.validate(case)?;
    if !(opts.horizon.is_finite() && opts.horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    if !(opts.sample_interval > 0.0 && opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidArgument("tolerances and sample interval must be positive".into()));
    }

    let (method, fast_cap) = match (x0.model, opts.method) {
        (Model::Unperturbed, MethodChoice::Implicit) => (Method::Sdirk2, None),
        (Model::Unperturbed, _) => (Method::DormandPrince45, None),
        (Model::Perturbed { eps }, choice) => {
            let max_coeff = case.load_freq_coeffs().into_iter().fold(0.0, f64::max);
            let cap = (max_coeff > 0.0).then(|| eps / (2.0 * max_coeff));
            match choice {
                MethodChoice::Implicit => (Method::Sdirk2, None),
                MethodChoice::Auto if eps < IMPLICIT_EPS_THRESHOLD => (Method::Sdirk2, None),
                MethodChoice::Explicit if eps < IMPLICIT_EPS_THRESHOLD => {
                    return Err(Error::InvalidArgument(format!(
                        "epsilon {eps:e} is below {IMPLICIT_EPS_THRESHOLD:e}; use the implicit integrator"
                    )))
                }
                _ => (Method::DormandPrince45, cap),
            }
        }
    };
    let max_step = match (opts.max_step, fast_cap) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };

    let sys = SwingSystem::new(case, y, x0.model)?;
    let ctl = StepControl {
        rtol: opts.rtol,
        atol: opts.atol,
        max_step: max_step.unwrap_or(f64::INFINITY),
        ..Default::default()
    };
    let times = opts.sample_times();
    let (xs, stats) = integrate(&sys, 0.0, &x0.flatten(), &times, method, &ctl)?;
    if let Some((k, _)) = xs.iter().enumerate().find(|(_, x)| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Integration {
            t: times[k],
            reason: "nonfinite state".into(),
        });
    }
    let states = xs
        .iter()
        .map(|x| DynamicState::unflatten(case.n(), x0.model, x))
        .collect();
    Ok(Trajectory {
        model: x0.model,
        times,
        states,
        stats,
        max_step,
    })
}

/// Fast variable of the boundary layer: `y_i = omega_i + (P_d,i + P_e,i) / d_tilde_i`
/// over load buses.
pub fn boundary_layer_transform(case: &NetworkCase, y: &AdmittanceMatrix, state: &DynamicState) -> Result<Vec<f64>> {
    if !matches!(state.model, Model::Perturbed { .. }) {
        return Err(Error::InvalidArgument("boundary layer needs a perturbed state".into()));
    }
    state.validate(case)?;
    let slow = quasi_steady_load_omega(case, y, &state.delta);
    Ok(case
        .load_ids()
        .zip(slow)
        .map(|(id, w)| state.omega[id.0] - w)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryLayerTrajectory {
    pub taus: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub stats: IntegrationStats,
}

struct BoundaryLayer<'a>(&'a [f64]);

impl OdeSystem for BoundaryLayer<'_> {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        for ((dy, y), d) in dx.iter_mut().zip(x).zip(self.0) {
            *dy = -d * y;
        }
    }
}

/// Integrates `dy/dtau = -d_tilde * y` in stretched time.
pub fn simulate_boundary_layer(
    load_coeffs: &[f64],
    y0: &[f64],
    tau_horizon: f64,
    sample_interval: f64,
) -> Result<BoundaryLayerTrajectory> {
    if load_coeffs.len() != y0.len() {
        return Err(Error::InvalidArgument("coefficient and state lengths differ".into()));
    }
    if load_coeffs.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidArgument("load coefficients must be positive".into()));
    }
    let opts = SimOptions {
        horizon: tau_horizon,
        sample_interval,
        ..Default::default()
    };
    if !(tau_horizon.is_finite() && tau_horizon > 0.0 && sample_interval > 0.0) {
        return Err(Error::InvalidArgument("horizon and sample interval must be positive".into()));
    }
    let taus = opts.sample_times();
    let ctl = StepControl {
        rtol: 1e-12,
        atol: 1e-14,
        ..Default::default()
    };
    let (values, stats) = integrate(&BoundaryLayer(load_coeffs), 0.0, y0, &taus, Method::DormandPrince45, &ctl)?;
    Ok(BoundaryLayerTrajectory { taus, values, stats })
}

/// Sup-norm gap between two trajectories over the angles and frequency
/// deviations of `buses` (frequencies only where both trajectories carry
/// them), evaluated on the union of both sample grids inside their common
/// time range with linear interpolation.
pub fn trajectory_divergence(a: &Trajectory, b: &Trajectory, buses: &[BusId]) -> Result<f64> {
    let start = a.times[0].max(b.times[0]);
    let end = a.times.last().unwrap().min(*b.times.last().unwrap());
    if start > end {
        return Err(Error::InvalidArgument("trajectories have disjoint time ranges".into()));
    }
    let mut grid: Vec<f64> = a
        .times
        .iter()
        .chain(&b.times)
        .copied()
        .filter(|&t| t >= start && t <= end)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let omega_shared = a.final_state().omega.len().min(b.final_state().omega.len());
    let mut vars: Vec<Variable> = buses.iter().map(|id| Variable::Delta(id.0)).collect();
    vars.extend(buses.iter().filter(|id| id.0 < omega_shared).map(|id| Variable::Omega(id.0)));

    let mut gap: f64 = 0.0;
    for &t in &grid {
        for &var in &vars {
            let (Some(x), Some(z)) = (a.interpolate(t, var), b.interpolate(t, var)) else {
                return Err(Error::InvalidArgument(format!("variable {var:?} missing from a trajectory")));
            };
            gap = gap.max((x - z).abs());
        }
    }
    Ok(gap)
}
