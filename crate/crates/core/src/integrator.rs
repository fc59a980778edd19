//! Adaptive one-step integrators with dense output.
//!
//! Two schemes are provided: the explicit Dormand–Prince 5(4) pair with its
//! fifth-order continuous extension, and a two-stage L-stable SDIRK method of
//! order 2 for stiff problems (the fast load dynamics at very small epsilon).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DormandPrince45,
    Sdirk2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-8,
            atol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrationStats {
    pub method: Method,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    pub jacobian_evals: usize,
    pub smallest_step: f64,
    pub largest_step: f64,
}

impl IntegrationStats {
    fn new(method: Method) -> Self {
        IntegrationStats {
            method,
            accepted_steps: 0,
            rejected_steps: 0,
            rhs_evals: 0,
            jacobian_evals: 0,
            smallest_step: f64::INFINITY,
            largest_step: 0.0,
        }
    }

    fn record_step(&mut self, h: f64) {
        self.accepted_steps += 1;
        self.smallest_step = self.smallest_step.min(h);
        self.largest_step = self.largest_step.max(h);
    }
}

/// Integrates from `t0` and returns the state at every requested sample
/// time. Samples must be nondecreasing and not before `t0`.
pub fn integrate<S: OdeSystem>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    samples: &[f64],
    method: Method,
    ctl: &StepControl,
) -> Result<(Vec<Vec<f64>>, IntegrationStats)> {
    if x0.len() != sys.dim() {
        return Err(Error::InvalidArgument(format!(
            "state has {} entries, system dimension is {}",
            x0.len(),
            sys.dim()
        )));
    }
    if x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Integration {
            t: t0,
            reason: "nonfinite initial state".into(),
        });
    }
    if samples.windows(2).any(|w| w[1] < w[0]) || samples.first().is_some_and(|&s| s < t0) {
        return Err(Error::InvalidArgument("sample times must be sorted and >= t0".into()));
    }
    if !(ctl.rtol > 0.0 && ctl.atol > 0.0 && ctl.max_step > 0.0) {
        return Err(Error::InvalidArgument("tolerances and max step must be positive".into()));
    }
    match method {
        Method::DormandPrince45 => dopri5(sys, t0, x0, samples, ctl),
        Method::Sdirk2 => sdirk2(sys, t0, x0, samples, ctl),
    }
}

fn error_norm(err: &[f64], x: &[f64], x_new: &[f64], ctl: &StepControl) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(x.iter().zip(x_new))
        .map(|(e, (a, b))| {
            let scale = ctl.atol + ctl.rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / err.len().max(1) as f64).sqrt()
}

fn initial_step(x: &[f64], f: &[f64], span: f64, ctl: &StepControl) -> f64 {
    if let Some(h) = ctl.initial_step {
        return h.min(ctl.max_step).min(span);
    }
    let zeros = vec![0.0; x.len()];
    let d0 = error_norm(x, &zeros, x, ctl);
    let d1 = error_norm(f, &zeros, x, ctl);
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(ctl.max_step).min(span).max(1e-12 * span)
}

fn underflow(t: f64, h: f64) -> bool {
    h <= 1e-14 * t.abs().max(1.0)
}

// Dormand–Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn dopri5<S: OdeSystem>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    samples: &[f64],
    ctl: &StepControl,
) -> Result<(Vec<Vec<f64>>, IntegrationStats)> {
    let dim = x0.len();
    let mut stats = IntegrationStats::new(Method::DormandPrince45);
    let mut out = Vec::with_capacity(samples.len());
    let mut next = 0;
    while next < samples.len() && samples[next] <= t0 {
        out.push(x0.to_vec());
        next += 1;
    }
    let Some(&t_end) = samples.last() else {
        return Ok((out, stats));
    };

    let mut t = t0;
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; dim];
    sys.rhs(t, &x, &mut k1);
    stats.rhs_evals += 1;
    let mut h = initial_step(&x, &k1, t_end - t0, ctl);

    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    );
    let mut stage = vec![0.0; dim];
    let mut x_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut last_rejected = false;

    while next < samples.len() {
        if stats.accepted_steps + stats.rejected_steps >= ctl.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("exceeded {} steps", ctl.max_steps),
            });
        }
        h = h.min(ctl.max_step);
        if t + h >= t_end || t_end - (t + h) < 1e-12 * h {
            h = t_end - t;
        }
        if underflow(t, h) {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {h:.3e}); problem is too stiff"),
            });
        }

        for i in 0..dim {
            stage[i] = x[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, &stage, &mut k2);
        for i in 0..dim {
            stage[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, &stage, &mut k3);
        for i in 0..dim {
            stage[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, &stage, &mut k4);
        for i in 0..dim {
            stage[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, &stage, &mut k5);
        for i in 0..dim {
            stage[i] = x[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.rhs(t + h, &stage, &mut k6);
        for i in 0..dim {
            x_new[i] = x[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t + h, &x_new, &mut k7);
        stats.rhs_evals += 6;
        for i in 0..dim {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let norm = error_norm(&err, &x, &x_new, ctl);
        let finite = norm.is_finite() && x_new.iter().all(|v| v.is_finite());

        if finite && norm <= 1.0 {
            let t_new = t + h;
            if next < samples.len() && samples[next] <= t_new {
                let mut rcont = vec![[0.0; 5]; dim];
                for i in 0..dim {
                    let dx = x_new[i] - x[i];
                    let r3 = h * k1[i] - dx;
                    let r4 = dx - h * k7[i] - r3;
                    let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                    rcont[i] = [x[i], dx, r3, r4, r5];
                }
                while next < samples.len() && samples[next] <= t_new {
                    let theta = ((samples[next] - t) / h).clamp(0.0, 1.0);
                    let theta1 = 1.0 - theta;
                    out.push(
                        rcont
                            .iter()
                            .map(|r| r[0] + theta * (r[1] + theta1 * (r[2] + theta * (r[3] + theta1 * r[4]))))
                            .collect(),
                    );
                    next += 1;
                }
            }
            stats.record_step(h);
            t = t_new;
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut k1, &mut k7);
            let mut factor = (0.9 * norm.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h *= factor;
        } else {
            stats.rejected_steps += 1;
            last_rejected = true;
            h *= if finite { (0.9 * norm.powf(-0.2)).max(0.2) } else { 0.1 };
        }
    }
    Ok((out, stats))
}

fn finite_difference_jacobian<S: OdeSystem>(sys: &S, t: f64, x: &[f64], f0: &[f64]) -> DMatrix<f64> {
    let dim = x.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut probe = x.to_vec();
    let mut f = vec![0.0; dim];
    for j in 0..dim {
        let delta = f64::EPSILON.sqrt() * x[j].abs().max(1.0);
        probe[j] = x[j] + delta;
        sys.rhs(t, &probe, &mut f);
        for i in 0..dim {
            jac[(i, j)] = (f[i] - f0[i]) / delta;
        }
        probe[j] = x[j];
    }
    jac
}

fn sdirk2<S: OdeSystem>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    samples: &[f64],
    ctl: &StepControl,
) -> Result<(Vec<Vec<f64>>, IntegrationStats)> {
    let gamma = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    let dim = x0.len();
    let mut stats = IntegrationStats::new(Method::Sdirk2);
    let mut out = Vec::with_capacity(samples.len());
    let mut next = 0;
    while next < samples.len() && samples[next] <= t0 {
        out.push(x0.to_vec());
        next += 1;
    }
    let Some(&t_end) = samples.last() else {
        return Ok((out, stats));
    };

    let mut t = t0;
    let mut x = x0.to_vec();
    let mut f0 = vec![0.0; dim];
    sys.rhs(t, &x, &mut f0);
    stats.rhs_evals += 1;
    let mut h = initial_step(&x, &f0, t_end - t0, ctl);
    let mut last_rejected = false;
    let mut fz = vec![0.0; dim];

    while next < samples.len() {
        if stats.accepted_steps + stats.rejected_steps >= ctl.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("exceeded {} steps", ctl.max_steps),
            });
        }
        h = h.min(ctl.max_step);
        if t + h >= t_end || t_end - (t + h) < 1e-12 * h {
            h = t_end - t;
        }
        if underflow(t, h) {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {h:.3e})"),
            });
        }

        let jac = finite_difference_jacobian(sys, t, &x, &f0);
        stats.jacobian_evals += 1;
        stats.rhs_evals += dim;
        let iteration = DMatrix::identity(dim, dim) - &jac * (h * gamma);
        let Some(lu) = Some(iteration.lu()).filter(|lu| lu.is_invertible()) else {
            stats.rejected_steps += 1;
            h *= 0.25;
            continue;
        };

        // Simplified Newton on Z = base + h*gamma*f(t_stage, Z).
        let solve_stage = |base: &[f64], t_stage: f64, guess: &[f64], fz: &mut [f64], evals: &mut usize| -> Option<Vec<f64>> {
            let mut z = guess.to_vec();
            for _ in 0..10 {
                sys.rhs(t_stage, &z, fz);
                *evals += 1;
                let residual = DVector::from_iterator(
                    dim,
                    (0..dim).map(|i| -(z[i] - base[i] - h * gamma * fz[i])),
                );
                let dz = lu.solve(&residual)?;
                let mut size = 0.0;
                for i in 0..dim {
                    z[i] += dz[i];
                    let scale = ctl.atol + ctl.rtol * z[i].abs();
                    size += (dz[i] / scale).powi(2);
                }
                let size = (size / dim as f64).sqrt();
                if !size.is_finite() {
                    return None;
                }
                if size < 1e-2 {
                    sys.rhs(t_stage, &z, fz);
                    *evals += 1;
                    return Some(z);
                }
            }
            None
        };

        let mut evals = 0;
        let stage1 = solve_stage(&x, t + gamma * h, &x, &mut fz, &mut evals);
        let Some(z1) = stage1 else {
            stats.rhs_evals += evals;
            stats.rejected_steps += 1;
            last_rejected = true;
            h *= 0.25;
            continue;
        };
        let f1 = fz.clone();
        let base2: Vec<f64> = (0..dim).map(|i| x[i] + h * (1.0 - gamma) * f1[i]).collect();
        let stage2 = solve_stage(&base2, t + h, &z1, &mut fz, &mut evals);
        stats.rhs_evals += evals;
        let Some(x_new) = stage2 else {
            stats.rejected_steps += 1;
            last_rejected = true;
            h *= 0.25;
            continue;
        };
        let f_new = fz.clone();

        // Difference to the first-order companion x + h f1, filtered through
        // (I - h gamma J)^-1 so stiff components do not inflate the estimate.
        let raw = DVector::from_iterator(dim, (0..dim).map(|i| x_new[i] - (x[i] + h * f1[i])));
        let err = lu.solve(&raw).unwrap_or(raw);
        let norm = error_norm(err.as_slice(), &x, &x_new, ctl);
        let finite = norm.is_finite() && x_new.iter().all(|v| v.is_finite());

        if finite && norm <= 1.0 {
            let t_new = t + h;
            while next < samples.len() && samples[next] <= t_new {
                // Cubic Hermite interpolation on the accepted step.
                let s = ((samples[next] - t) / h).clamp(0.0, 1.0);
                let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
                let h10 = s.powi(3) - 2.0 * s * s + s;
                let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
                let h11 = s.powi(3) - s * s;
                out.push(
                    (0..dim)
                        .map(|i| h00 * x[i] + h10 * h * f0[i] + h01 * x_new[i] + h11 * h * f_new[i])
                        .collect(),
                );
                next += 1;
            }
            stats.record_step(h);
            t = t_new;
            x = x_new;
            f0 = f_new;
            let mut factor = (0.9 * norm.max(1e-10).powf(-0.5)).clamp(0.2, 4.0);
            if last_rejected {
                factor = factor.min(1.0);
            }
            last_rejected = false;
            h *= factor;
        } else {
            stats.rejected_steps += 1;
            last_rejected = true;
            h *= if finite { (0.9 * norm.powf(-0.5)).max(0.2) } else { 0.1 };
        }
    }
    Ok((out, stats))
}
