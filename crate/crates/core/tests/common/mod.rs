//! Shared helpers for the integration suites: a seeded random case generator
//! and oracles that recompute network quantities from raw line data.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swingcert_core::netmodel::{Bus, BusRole, LineSpec, LoadParams, MachineParams, NetworkCase};

pub const TWO_BUS: &str = include_str!("../../data/two_bus.json");
pub const WSCC9: &str = include_str!("../../data/wscc9.json");

pub fn two_bus(d: f64) -> NetworkCase {
    swingcert_core::load_case(&TWO_BUS.replace("\"D\": 2.0", &format!("\"D\": {d}"))).unwrap()
}

pub fn wscc9() -> NetworkCase {
    swingcert_core::load_case(WSCC9).unwrap()
}

/// Controls how generator damping relates to the network strength at the
/// generator: `d^2 / (2m) = damping_ratio * sum_j V_i V_j |y_ij|`.
#[derive(Debug, Clone, Copy)]
pub struct CaseShape {
    pub damping_ratio: (f64, f64),
    pub lossy_fraction: f64,
}

impl Default for CaseShape {
    fn default() -> Self {
        CaseShape {
            damping_ratio: (0.6, 3.0),
            lossy_fraction: 0.5,
        }
    }
}

/// A connected 2 to 6 bus case with at least one generator, `omega_s = 1`.
pub fn random_case(rng: &mut ChaCha8Rng, shape: CaseShape) -> NetworkCase {
    let n = rng.gen_range(2..=6);
    let n_gen = rng.gen_range(1..=n.min(3));
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.95..1.05)).collect();

    let mut edges: Vec<(usize, usize, f64, f64)> = Vec::new();
    let add_edge = |rng: &mut ChaCha8Rng, edges: &mut Vec<(usize, usize, f64, f64)>, i: usize, j: usize| {
        let x = rng.gen_range(0.2..1.0);
        let r = if rng.gen_bool(shape.lossy_fraction) { x * rng.gen_range(0.0..0.3) } else { 0.0 };
        let y = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        edges.push((i, j, y.re, y.im));
    };
    for j in 1..n {
        let i = rng.gen_range(0..j);
        add_edge(rng, &mut edges, i, j);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let exists = edges.iter().any(|e| (e.0, e.1) == (i, j));
            if !exists && rng.gen_bool(0.3) {
                add_edge(rng, &mut edges, i, j);
            }
        }
    }

    let strength: Vec<f64> = (0..n)
        .map(|i| {
            edges
                .iter()
                .filter_map(|&(a, b, g, bb)| {
                    let other = if a == i { b } else if b == i { a } else { return None };
                    Some(v[i] * v[other] * (g * g + bb * bb).sqrt())
                })
                .sum()
        })
        .collect();

    let buses = (0..n)
        .map(|i| {
            let role = if i < n_gen {
                let m = rng.gen_range(0.05..1.0);
                let ratio = rng.gen_range(shape.damping_ratio.0..shape.damping_ratio.1);
                let d = (2.0 * m * ratio * strength[i]).sqrt();
                BusRole::Generator {
                    mech_power: rng.gen_range(0.0..0.3),
                    machine: MachineParams { inertia: m, damping: d },
                }
            } else {
                BusRole::Load(LoadParams {
                    freq_coeff: rng.gen_range(0.5..2.0),
                    demand: rng.gen_range(0.0..0.3),
                })
            };
            Bus {
                name: format!("b{i}"),
                voltage: v[i],
                shunt_b: 0.0,
                role,
            }
        })
        .collect();
    let lines = edges
        .iter()
        .map(|&(i, j, g, b)| LineSpec {
            from: format!("b{i}"),
            to: format!("b{j}"),
            g,
            b,
        })
        .collect();
    NetworkCase::new(1.0, buses, lines).expect("generated case is valid")
}

/// Y-bus assembled directly from the line list and shunts.
pub fn ybus_oracle(case: &NetworkCase) -> DMatrix<Complex64> {
    let n = case.n();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in case.lines() {
        let yl = Complex64::new(line.g, line.b);
        let (i, j) = (line.from.0, line.to.0);
        y[(i, i)] += yl;
        y[(j, j)] += yl;
        y[(i, j)] -= yl;
        y[(j, i)] -= yl;
    }
    for (i, bus) in case.buses().iter().enumerate() {
        y[(i, i)] += Complex64::new(0.0, bus.shunt_b);
    }
    y
}

/// Complex power injections `S = V .* conj(Y V)` with phasors `V_i e^{j delta_i}`.
pub fn complex_power_oracle(case: &NetworkCase, delta: &[f64]) -> Vec<Complex64> {
    let y = ybus_oracle(case);
    let phasors: Vec<Complex64> = case
        .buses()
        .iter()
        .zip(delta)
        .map(|(b, &d)| Complex64::from_polar(b.voltage, d))
        .collect();
    (0..case.n())
        .map(|i| {
            let current: Complex64 = (0..case.n()).map(|j| y[(i, j)] * phasors[j]).sum();
            phasors[i] * current.conj()
        })
        .collect()
}

pub fn active_power_oracle(case: &NetworkCase, delta: &[f64]) -> Vec<f64> {
    complex_power_oracle(case, delta).iter().map(|s| s.re).collect()
}

/// `sum_{j != i} V_i V_j |Y_ij| sin(angle(Y_ij) - delta_i + delta_j)` from the oracle Y-bus.
pub fn neighbor_sine_sum_oracle(case: &NetworkCase, delta: &[f64], i: usize) -> f64 {
    let y = ybus_oracle(case);
    let v = case.voltages();
    (0..case.n())
        .filter(|&j| j != i && y[(i, j)].norm() > 0.0)
        .map(|j| v[i] * v[j] * y[(i, j)].norm() * (y[(i, j)].arg() - delta[i] + delta[j]).sin())
        .sum()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && x[idx[end + 1]] == x[idx[k]] {
            end += 1;
        }
        let avg = (k + end) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=end] {
            r[i] = avg;
        }
        k = end + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
