//! Active power flow, equilibrium angles, and the line-angle condition the
//! certificate relies on.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linearization::flow_jacobian_at;
use crate::netmodel::{AdmittanceMatrix, BusId, NetworkCase};

/// P_e,i = sum_j V_i V_j |Y_ij| cos(theta_ij - delta_i + delta_j)
pub fn active_power_injection(case: &NetworkCase, y: &AdmittanceMatrix, delta: &[f64]) -> Vec<f64> {
    let n = case.n();
    assert_eq!(delta.len(), n, "angle vector length");
    let v = case.voltages();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| y.magnitude(i, j) != 0.0)
                .map(|j| v[i] * v[j] * y.magnitude(i, j) * (y.angle(i, j) - delta[i] + delta[j]).cos())
                .sum()
        })
        .collect()
}

/// Q_i = -sum_j V_i V_j |Y_ij| sin(theta_ij - delta_i + delta_j)
pub fn reactive_power_injection(case: &NetworkCase, y: &AdmittanceMatrix, delta: &[f64]) -> Vec<f64> {
    let n = case.n();
    assert_eq!(delta.len(), n, "angle vector length");
    let v = case.voltages();
    (0..n)
        .map(|i| {
            -(0..n)
                .filter(|&j| y.magnitude(i, j) != 0.0)
                .map(|j| v[i] * v[j] * y.magnitude(i, j) * (y.angle(i, j) - delta[i] + delta[j]).sin())
                .sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Infinity-norm bound on the active power mismatch.
    pub tol: f64,
    pub max_iter: usize,
    /// Bus whose angle is pinned to zero and whose injection is left free.
    pub reference_bus: BusId,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 50,
            reference_bus: BusId(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub delta: Vec<f64>,
    pub reference_bus: BusId,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Injection at the reference bus that balances the network losses.
    pub reference_injection: f64,
}

impl EquilibriumPoint {
    /// The case with the reference bus injection replaced by the solved
    /// value, so that `(delta, 0)` is an exact rest point of the dynamics.
    pub fn balanced_case(&self, case: &NetworkCase) -> NetworkCase {
        case.with_injection(self.reference_bus, self.reference_injection)
    }
}

/// Newton iteration on the non-reference active power mismatch equations.
pub fn solve_equilibrium(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<EquilibriumPoint> {
    let n = case.n();
    let reference = opts.reference_bus.0;
    if reference >= n {
        return Err(Error::InvalidArgument(format!(
            "reference bus {reference} out of range for {n} buses"
        )));
    }
    let mut delta = match init {
        Some(start) if start.len() != n => {
            return Err(Error::InvalidArgument(format!(
                "initial guess has {} entries, expected {n}",
                start.len()
            )))
        }
        Some(start) if start.iter().any(|x| !x.is_finite()) => {
            return Err(Error::InvalidArgument("initial guess is not finite".into()))
        }
        Some(start) => start.to_vec(),
        None => vec![0.0; n],
    };
    let shift = delta[reference];
    delta.iter_mut().for_each(|d| *d -= shift);

    let scheduled = case.scheduled_injections();
    let free: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let mismatch = |delta: &[f64]| -> DVector<f64> {
        let pe = active_power_injection(case, y, delta);
        DVector::from_iterator(free.len(), free.iter().map(|&i| pe[i] - scheduled[i]))
    };

    let mut iterations = 0;
    let mut residual = mismatch(&delta);
    loop {
        let norm = residual.amax();
        if !norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        if norm <= opts.tol {
            let pe = active_power_injection(case, y, &delta);
            return Ok(EquilibriumPoint {
                reference_injection: pe[reference],
                delta,
                reference_bus: opts.reference_bus,
                residual_norm: norm,
                iterations,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        let full = flow_jacobian_at(case, y, &delta);
        let reduced = DMatrix::from_fn(free.len(), free.len(), |r, c| full[(free[r], free[c])]);
        let step = reduced
            .lu()
            .solve(&(-&residual))
            .filter(|s| s.iter().all(|x| x.is_finite()))
            .ok_or(Error::SingularJacobian { iteration: iterations })?;
        for (k, &i) in free.iter().enumerate() {
            delta[i] += step[k];
        }
        iterations += 1;
        residual = mismatch(&delta);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineAngle {
    pub from: BusId,
    pub to: BusId,
    /// theta_ij - delta_i + delta_j
    pub alpha: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// One entry per line orientation (i -> j and j -> i).
    pub lines: Vec<LineAngle>,
    /// Angle-difference bound used instead of the (0, pi) window, if any.
    pub margin: Option<f64>,
    /// Smallest distance of any alpha to the ends of (0, pi).
    pub min_margin: f64,
    pub pass: bool,
}

/// Numerical slack applied to the strict inequalities of the line-angle check.
pub const ASSUMPTION_SLACK: f64 = 1e-9;

/// Checks `0 < theta_ij - delta_i + delta_j < pi` on every line in both
/// orientations, or `|delta_i - delta_j| < margin` when a margin is given.
pub fn check_assumption1(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    delta: &[f64],
    margin: Option<f64>,
) -> AssumptionReport {
    let mut lines = Vec::with_capacity(2 * case.lines().len());
    let mut min_margin = f64::INFINITY;
    for line in case.lines() {
        for (i, j) in [(line.from, line.to), (line.to, line.from)] {
            let alpha = y.angle(i.0, j.0) - delta[i.0] + delta[j.0];
            min_margin = min_margin.min(alpha).min(PI - alpha);
            let pass = match margin {
                Some(gamma) => (delta[i.0] - delta[j.0]).abs() < gamma - ASSUMPTION_SLACK,
                None => alpha > ASSUMPTION_SLACK && alpha < PI - ASSUMPTION_SLACK,
            };
            lines.push(LineAngle {
                from: i,
                to: j,
                alpha,
                pass,
            });
        }
    }
    AssumptionReport {
        pass: lines.iter().all(|l| l.pass),
        lines,
        margin,
        min_margin,
    }
}
