//! Dense nonsymmetric eigenvalue solver: diagonal balancing, Householder
//! reduction to upper Hessenberg form, then the implicitly double-shifted
//! (Francis) QR iteration. Only eigenvalues are computed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION_CAP: usize = 512;

/// Eigenvalues with |lambda| <= ZERO_MODE_REL_TOL * ||A||_F count as zero modes.
pub const ZERO_MODE_REL_TOL: f64 = 1e-8;

const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    /// The largest nonzero real part is within 10x the backward error of the
    /// imaginary axis, or more than one eigenvalue sits at zero.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// Sorted by real part, then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    /// Frobenius norm of the input matrix.
    pub norm: f64,
    pub zero_tol: f64,
    pub zero_modes: usize,
    pub max_nonzero_real: Option<f64>,
    /// Largest estimated backward error over all eigenvalues (absolute).
    pub backward_error: f64,
}

impl SpectrumReport {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_zero_mode(&self, lambda: Complex64) -> bool {
        lambda.norm() <= self.zero_tol
    }

    pub fn nonzero(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.eigenvalues.iter().copied().filter(move |l| !self.is_zero_mode(*l))
    }

    /// Stability of the equilibrium, ignoring one rotational zero mode.
    pub fn verdict(&self) -> StabilityVerdict {
        if self.zero_modes > 1 {
            return StabilityVerdict::Inconclusive;
        }
        match self.max_nonzero_real {
            None => StabilityVerdict::Stable,
            Some(r) if r.abs() < 10.0 * self.backward_error => StabilityVerdict::Inconclusive,
            Some(r) if r < 0.0 => StabilityVerdict::Stable,
            Some(_) => StabilityVerdict::Unstable,
        }
    }

    /// Mean real part over the eigenvalues that are not zero modes.
    pub fn mean_nonzero_real(&self) -> Option<f64> {
        let (sum, count) = self.nonzero().fold((0.0, 0usize), |(s, c), l| (s + l.re, c + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<SpectrumReport> {
    eigenvalues_with_cap(a, DEFAULT_DIMENSION_CAP)
}

pub fn eigenvalues_with_cap(a: &DMatrix<f64>, cap: usize) -> Result<SpectrumReport> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument(format!("matrix is {}x{}, not square", n, a.ncols())));
    }
    if n > cap {
        return Err(Error::InvalidArgument(format!("dimension {n} exceeds the cap of {cap}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has nonfinite entries".into()));
    }

    let mut work = a.clone();
    balance(&mut work);
    hessenberg(&mut work);
    let mut eigenvalues = hessenberg_qr(&mut work)?;
    eigenvalues.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    let norm = a.norm();
    let zero_tol = ZERO_MODE_REL_TOL * norm;
    let backward_error = eigenvalues
        .iter()
        .map(|&l| backward_error(a, l))
        .fold(0.0, f64::max);
    let zero_modes = eigenvalues.iter().filter(|l| l.norm() <= zero_tol).count();
    let max_nonzero_real = eigenvalues
        .iter()
        .filter(|l| l.norm() > zero_tol)
        .map(|l| l.re)
        .reduce(f64::max);
    Ok(SpectrumReport {
        eigenvalues,
        norm,
        zero_tol,
        zero_modes,
        max_nonzero_real,
        backward_error,
    })
}

/// Upper bound on min singular value of (A - lambda I) from two steps of
/// inverse iteration.
pub fn backward_error(a: &DMatrix<f64>, lambda: Complex64) -> f64 {
    let n = a.nrows();
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    });
    let lu = shifted.lu();
    let mut x = DVector::from_fn(n, |i, _| Complex64::new(1.0 + i as f64 / n as f64, 0.5 - (i % 3) as f64 / 4.0));
    for _ in 0..2 {
        let scale = x.norm();
        x /= Complex64::new(scale, 0.0);
        match lu.solve(&x) {
            Some(next) if next.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => {
                let grown = next.norm();
                if grown == 0.0 {
                    return f64::INFINITY;
                }
                if !grown.is_finite() {
                    return 0.0;
                }
                x = next;
            }
            _ => return 0.0,
        }
    }
    // Last x solved from a unit vector: ||(A - lambda I) x|| / ||x|| = 1 / ||x||.
    1.0 / x.norm()
}

/// Parlett–Reinsch balancing with power-of-two scalings; eigenvalues are
/// unchanged.
fn balance(a: &mut DMatrix<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let sqrdx = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Householder similarity reduction to upper Hessenberg form, in place.
fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_sq: f64 = (k + 1..n).map(|i| a[(i, k)].powi(2)).sum();
        let norm = alpha_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);

        // A <- (I - 2vv^T) A on rows k+1..n
        for j in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(p, vp)| vp * a[(k + 1 + p, j)]).sum();
            for (p, vp) in v.iter().enumerate() {
                a[(k + 1 + p, j)] -= 2.0 * vp * dot;
            }
        }
        // A <- A (I - 2vv^T) on columns k+1..n
        for i in 0..n {
            let dot: f64 = v.iter().enumerate().map(|(p, vp)| vp * a[(i, k + 1 + p)]).sum();
            for (p, vp) in v.iter().enumerate() {
                a[(i, k + 1 + p)] -= 2.0 * vp * dot;
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys it).
fn hessenberg_qr(h: &mut DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = h.nrows();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based view keeps the index arithmetic of the classic formulation.
    macro_rules! a {
        ($i:expr, $j:expr) => {
            h[($i - 1, $j - 1)]
        };
    }

    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a!(i, j).abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let mut total_sweeps = 0;
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a!(l - 1, l - 1).abs() + a!(l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a!(l, l - 1).abs() + s == s {
                    a!(l, l - 1) = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a!(nn, nn);
            if l == nn {
                wr[nn - 1] = x + t;
                wi[nn - 1] = 0.0;
                nn -= 1;
            } else {
                let mut y = a!(nn - 1, nn - 1);
                let mut w = a!(nn, nn - 1) * a!(nn - 1, nn);
                if l == nn - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 2] = x + z;
                        wr[nn - 1] = x + z;
                        if z != 0.0 {
                            wr[nn - 1] = x - w / z;
                        }
                        wi[nn - 2] = 0.0;
                        wi[nn - 1] = 0.0;
                    } else {
                        wr[nn - 2] = x + p;
                        wr[nn - 1] = x + p;
                        wi[nn - 2] = -z;
                        wi[nn - 1] = z;
                    }
                    nn -= 2;
                } else {
                    if its >= MAX_SWEEPS_PER_EIGENVALUE {
                        return Err(Error::EigenNonConvergence {
                            iterations: total_sweeps,
                        });
                    }
                    if its > 0 && its % 10 == 0 {
                        // Exceptional shift.
                        t += x;
                        for i in 1..=nn {
                            a!(i, i) -= x;
                        }
                        let s = a!(nn, nn - 1).abs() + a!(nn - 1, nn - 2).abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total_sweeps += 1;

                    let (mut p, mut q, mut r, mut z);
                    let mut m = nn - 2;
                    loop {
                        z = a!(m, m);
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / a!(m + 1, m) + a!(m, m + 1);
                        q = a!(m + 1, m + 1) - z - r - s0;
                        r = a!(m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a!(m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a!(m - 1, m - 1).abs() + z.abs() + a!(m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a!(i, i - 2) = 0.0;
                        if i != m + 2 {
                            a!(i, i - 3) = 0.0;
                        }
                    }
                    let mut k = m;
                    while k + 1 <= nn {
                        if k != m {
                            p = a!(k, k - 1);
                            q = a!(k + 1, k - 1);
                            r = 0.0;
                            if k != nn - 1 {
                                r = a!(k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a!(k, k - 1) = -a!(k, k - 1);
                                }
                            } else {
                                a!(k, k - 1) = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a!(k, j) + q * a!(k + 1, j);
                                if k != nn - 1 {
                                    p += r * a!(k + 2, j);
                                    a!(k + 2, j) -= p * z;
                                }
                                a!(k + 1, j) -= p * y;
                                a!(k, j) -= p * x;
                            }
                            let mmin = nn.min(k + 3);
                            for i in l..=mmin {
                                p = x * a!(i, k) + y * a!(i, k + 1);
                                if k != nn - 1 {
                                    p += z * a!(i, k + 2);
                                    a!(i, k + 2) -= p * r;
                                }
                                a!(i, k + 1) -= p * q;
                                a!(i, k) -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_spectrum(report: &SpectrumReport, expected: &[Complex64], tol: f64) {
        assert_eq!(report.eigenvalues.len(), expected.len());
        let mut expected = expected.to_vec();
        expected.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
        for (got, want) in report.eigenvalues.iter().zip(&expected) {
            assert!((got - want).norm() < tol, "{got} vs {want}");
        }
    }

    #[test]
    fn diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0, 3.0]));
        let report = eigenvalues(&a).unwrap();
        assert_spectrum(
            &report,
            &[Complex64::new(-2.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(3.0, 0.0)],
            1e-14,
        );
        assert_eq!(report.zero_modes, 0);
        assert_eq!(report.verdict(), StabilityVerdict::Unstable);
    }

    #[test]
    fn rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let report = eigenvalues(&a).unwrap();
        assert_spectrum(&report, &[Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0)], 1e-14);
    }

    #[test]
    fn companion_matrix_roots() {
        // (x - 1)(x + 2)(x - 3)(x^2 + 2x + 5): roots 1, -2, 3, -1 +- 2i
        // x^5 - 3x^3 + 10x^2 - 29x + 30... build from coefficients directly.
        let roots = [
            Complex64::new(1.0, 0.0),
            Complex64::new(-2.0, 0.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(-1.0, 2.0),
            Complex64::new(-1.0, -2.0),
        ];
        let mut coeffs = vec![Complex64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
            for (k, c) in coeffs.iter().enumerate() {
                next[k] += c;
                next[k + 1] -= c * r;
            }
            coeffs = next;
        }
        let n = roots.len();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            a[(0, j)] = -coeffs[j + 1].re;
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let report = eigenvalues(&a).unwrap();
        assert_spectrum(&report, &roots, 1e-9);
        assert!(report.backward_error <= 1e-8 * report.norm);
    }

    #[test]
    fn random_matrices_are_consistent() {
        // Deterministic pseudo-random entries; check trace and determinant.
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for n in [1usize, 2, 3, 7, 15, 30] {
            let a = DMatrix::from_fn(n, n, |_, _| next());
            let report = eigenvalues(&a).unwrap();
            let sum: Complex64 = report.eigenvalues.iter().sum();
            assert!((sum.re - a.trace()).abs() < 1e-10 * (1.0 + a.norm()));
            assert!(sum.im.abs() < 1e-10);
            let prod: Complex64 = report.eigenvalues.iter().product();
            let det = a.clone().determinant();
            assert!((prod.re - det).abs() < 1e-8 * (1.0 + det.abs()), "n={n}: {prod} vs {det}");
            assert!(report.backward_error <= 1e-8 * report.norm);
            // Conjugate pairs.
            for l in &report.eigenvalues {
                if l.im != 0.0 {
                    assert!(report.eigenvalues.iter().any(|m| (m - l.conj()).norm() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn badly_scaled_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 2e4, -2e4, 0.0, -2.0, 2.0, -1.0]);
        let report = eigenvalues(&a).unwrap();
        assert_eq!(report.zero_modes, 1);
        let sum: f64 = report.eigenvalues.iter().map(|l| l.re).sum();
        assert!((sum - a.trace()).abs() < 1e-8 * a.norm());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(eigenvalues(&DMatrix::zeros(2, 3)).is_err());
        assert!(eigenvalues_with_cap(&DMatrix::zeros(4, 4), 3).is_err());
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(eigenvalues(&a).is_err());
    }

    #[test]
    fn empty_and_zero_matrices() {
        assert!(eigenvalues(&DMatrix::zeros(0, 0)).unwrap().eigenvalues.is_empty());
        let report = eigenvalues(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(report.zero_modes, 3);
        assert_eq!(report.verdict(), StabilityVerdict::Inconclusive);
    }
}
