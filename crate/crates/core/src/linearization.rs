//! Linearization at an equilibrium: the flow Jacobian L, the system
//! Jacobians of both models, the quadratic pencil residual and the modal
//! comparison between the two spectra.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::eigen::SpectrumReport;
use crate::equilibrium::EquilibriumPoint;
use crate::error::{Error, Result};
use crate::netmodel::{AdmittanceMatrix, NetworkCase};

/// dP_e,i / d delta_j at an arbitrary angle vector.
pub fn flow_jacobian_at(case: &NetworkCase, y: &AdmittanceMatrix, delta: &[f64]) -> DMatrix<f64> {
    let n = case.n();
    let v = case.voltages();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if j == i || y.magnitude(i, j) == 0.0 {
                continue;
            }
            let entry = -v[i] * v[j] * y.magnitude(i, j) * (y.angle(i, j) - delta[i] + delta[j]).sin();
            l[(i, j)] = entry;
            diag -= entry;
        }
        l[(i, i)] = diag;
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowJacobian {
    pub matrix: DMatrix<f64>,
    pub delta: Vec<f64>,
}

pub fn flow_jacobian(case: &NetworkCase, y: &AdmittanceMatrix, eq: &EquilibriumPoint) -> FlowJacobian {
    FlowJacobian {
        matrix: flow_jacobian_at(case, y, &eq.delta),
        delta: eq.delta.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JacobianKind {
    /// 2n x 2n, load inertias equal to `eps`.
    Perturbed { eps: f64 },
    /// (n + n_gen) x (n + n_gen).
    Unperturbed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemJacobian {
    pub matrix: DMatrix<f64>,
    pub kind: JacobianKind,
    /// Inertias: generators, then `eps` per load bus for the perturbed kind.
    pub m_diag: Vec<f64>,
    /// Damping: generator d_i, then load d_tilde_i.
    pub d_diag: Vec<f64>,
}

pub fn system_jacobian(l: &DMatrix<f64>, case: &NetworkCase, kind: JacobianKind) -> Result<SystemJacobian> {
    let n = case.n();
    let n_gen = case.n_gen();
    if l.nrows() != n || l.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "flow jacobian is {}x{}, case has {n} buses",
            l.nrows(),
            l.ncols()
        )));
    }
    let mut d_diag = case.gen_d();
    d_diag.extend(case.load_freq_coeffs());
    let gen_m = case.gen_m();

    match kind {
        JacobianKind::Perturbed { eps } => {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
            }
            let mut m_diag = gen_m;
            m_diag.resize(n, eps);
            let mut j = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                j[(i, n + i)] = 1.0;
                for k in 0..n {
                    j[(n + i, k)] = -l[(i, k)] / m_diag[i];
                }
                j[(n + i, n + i)] = -d_diag[i] / m_diag[i];
            }
            Ok(SystemJacobian {
                matrix: j,
                kind,
                m_diag,
                d_diag,
            })
        }
        JacobianKind::Unperturbed => {
            let dim = n + n_gen;
            let mut k = DMatrix::zeros(dim, dim);
            for i in 0..n_gen {
                k[(i, n + i)] = 1.0;
                for c in 0..n {
                    k[(n + i, c)] = -l[(i, c)] / gen_m[i];
                }
                k[(n + i, n + i)] = -d_diag[i] / gen_m[i];
            }
            for i in n_gen..n {
                for c in 0..n {
                    k[(i, c)] = -l[(i, c)] / d_diag[i];
                }
            }
            Ok(SystemJacobian {
                matrix: k,
                kind,
                m_diag: gen_m,
                d_diag,
            })
        }
    }
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

/// Smallest singular value of `L + lambda D + lambda^2 M`, normalized by
/// `||L|| + |lambda| ||D|| + |lambda|^2 ||M||`.
pub fn pencil_residual(l: &DMatrix<f64>, d: &[f64], m: &[f64], lambda: Complex64) -> Result<f64> {
    let n = l.nrows();
    if l.ncols() != n || d.len() != n || m.len() != n {
        return Err(Error::InvalidArgument("pencil dimensions do not agree".into()));
    }
    let pencil = DMatrix::from_fn(n, n, |i, j| {
        let mut v = Complex64::new(l[(i, j)], 0.0);
        if i == j {
            v += lambda * d[i] + lambda * lambda * m[i];
        }
        v
    });
    let smallest = pencil.svd(false, false).singular_values.min();
    let abs_max = |v: &[f64]| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let scale = spectral_norm(l) + lambda.norm() * abs_max(d) + lambda.norm_sqr() * abs_max(m);
    Ok(if scale == 0.0 { smallest } else { smallest / scale })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub k_index: usize,
    pub j_index: usize,
    pub k: Complex64,
    pub j: Complex64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FastMode {
    pub lambda: Complex64,
    pub predicted: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalComparison {
    pub eps: f64,
    pub matched: Vec<MatchedPair>,
    pub fast: Vec<FastMode>,
    /// K indices whose nearest J eigenvalue had already been claimed.
    pub ambiguous: Vec<usize>,
    pub max_distance: f64,
}

/// Greedy nearest-neighbour matching of K's eigenvalues into J's, largest
/// |lambda| first (positive imaginary part first on ties). Unmatched J
/// eigenvalues are the fast modes, paired in order of real part with the
/// boundary-layer predictions `-d_tilde_i / eps`.
pub fn modal_compare(
    k_spectrum: &SpectrumReport,
    j_spectrum: &SpectrumReport,
    eps: f64,
    load_coeffs: &[f64],
) -> Result<ModalComparison> {
    let (nk, nj) = (k_spectrum.dim(), j_spectrum.dim());
    if nj < nk || nj - nk != load_coeffs.len() {
        return Err(Error::InvalidArgument(format!(
            "spectra of size {nk} and {nj} do not differ by the {} load buses",
            load_coeffs.len()
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }

    let mut order: Vec<usize> = (0..nk).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (k_spectrum.eigenvalues[a], k_spectrum.eigenvalues[b]);
        lb.norm()
            .total_cmp(&la.norm())
            .then((lb.im > 0.0).cmp(&(la.im > 0.0)))
    });

    let mut taken = vec![false; nj];
    let mut matched = Vec::with_capacity(nk);
    let mut ambiguous = Vec::new();
    for k_index in order {
        let lk = k_spectrum.eigenvalues[k_index];
        let nearest = |free_only: bool| {
            (0..nj)
                .filter(|&j| !free_only || !taken[j])
                .min_by(|&a, &b| {
                    (j_spectrum.eigenvalues[a] - lk)
                        .norm()
                        .total_cmp(&(j_spectrum.eigenvalues[b] - lk).norm())
                })
                .expect("J has at least as many eigenvalues as K")
        };
        let best = nearest(true);
        let overall = nearest(false);
        if taken[overall] && (j_spectrum.eigenvalues[overall] - lk).norm() < (j_spectrum.eigenvalues[best] - lk).norm() {
            ambiguous.push(k_index);
        }
        taken[best] = true;
        let lj = j_spectrum.eigenvalues[best];
        matched.push(MatchedPair {
            k_index,
            j_index: best,
            k: lk,
            j: lj,
            distance: (lj - lk).norm(),
        });
    }

    let mut fast: Vec<Complex64> = (0..nj)
        .filter(|&j| !taken[j])
        .map(|j| j_spectrum.eigenvalues[j])
        .collect();
    fast.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut predicted: Vec<f64> = load_coeffs.iter().map(|d| -d / eps).collect();
    predicted.sort_by(f64::total_cmp);
    let fast = fast
        .into_iter()
        .zip(predicted)
        .map(|(lambda, predicted)| FastMode {
            lambda,
            predicted,
            rel_err: (lambda - predicted).norm() / predicted.abs(),
        })
        .collect();

    let max_distance = matched.iter().map(|p| p.distance).fold(0.0, f64::max);
    Ok(ModalComparison {
        eps,
        matched,
        fast,
        ambiguous,
        max_distance,
    })
}
