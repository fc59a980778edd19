//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use swingcert_core::certificate::{assess_corollary1, assess_theorem1, Theorem1Verdict};
use swingcert_core::dynamics::{boundary_layer_transform, simulate_boundary_layer, SimOptions};
use swingcert_core::eigen::eigenvalues;
use swingcert_core::equilibrium::{check_assumption1, reactive_power_injection, solve_equilibrium, SolverOptions};
use swingcert_core::experiments::{compare_models, initial_state, modal_run, prepare, run_sweep, Disturbance, Prepared, RowStatus, SweepParameter, SweepSpec};
use swingcert_core::dynamics::Model;
use swingcert_core::linearization::{flow_jacobian_at, pencil_residual, system_jacobian, JacobianKind};
use swingcert_core::{build_admittance, BusId, NetworkCase};

const SEED: u64 = 42;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

/// Randomized cases whose equilibrium satisfies the line-angle hypothesis,
/// shared by the soundness and identity criteria.
struct Pool {
    cases: Vec<Prepared>,
    attempts: usize,
}

fn build_pool(target: usize) -> Pool {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut cases = Vec::new();
    let mut attempts = 0;
    while cases.len() < target && attempts < 50 * target {
        attempts += 1;
        let case = random_case(&mut rng, CaseShape::default());
        let Ok(prep) = prepare(&case, &SolverOptions::default()) else { continue };
        if check_assumption1(&prep.case, &prep.y, &prep.eq.delta, None).pass {
            cases.push(prep);
        }
    }
    Pool { cases, attempts }
}

fn c1_power_flow() -> Check {
    let case = wscc9();
    let y = build_admittance(&case);
    let start = Instant::now();
    let eq = match solve_equilibrium(&case, &y, None, &SolverOptions::default()) {
        Ok(eq) => eq,
        Err(e) => return check(false, format!("solver error: {e}")),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let balanced = eq.balanced_case(&case);
    let p = active_power_oracle(&balanced, &eq.delta);
    let mismatch = p
        .iter()
        .zip(balanced.scheduled_injections())
        .skip(1)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pass = mismatch <= 1e-10 && eq.iterations <= 10 && elapsed < 0.1;
    check(
        pass,
        format!("mismatch {mismatch:.2e} (oracle), {} iterations, {elapsed:.4} s", eq.iterations),
    )
}

fn c2_assumption() -> Check {
    let case = wscc9();
    let y = build_admittance(&case);
    let eq = solve_equilibrium(&case, &y, None, &SolverOptions::default()).unwrap();
    let report = check_assumption1(&case, &y, &eq.delta, None);
    let inside = report.lines.iter().all(|l| l.alpha > 0.0 && l.alpha < std::f64::consts::PI);
    check(
        report.pass && inside && report.min_margin > 0.05,
        format!("{} oriented lines, min margin {:.4} rad", report.lines.len(), report.min_margin),
    )
}

fn c3_flow_jacobian() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst_fd: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    let mut bad_zero = 0;
    let mut tested = 0;
    while tested < 20 {
        let case = random_case(&mut rng, CaseShape::default());
        let y = build_admittance(&case);
        let delta: Vec<f64> = (0..case.n()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        if !check_assumption1(&case, &y, &delta, None).pass {
            continue;
        }
        tested += 1;
        let l = flow_jacobian_at(&case, &y, &delta);
        let h = 1e-6;
        for j in 0..case.n() {
            let (mut plus, mut minus) = (delta.clone(), delta.clone());
            plus[j] += h;
            minus[j] -= h;
            let (fp, fm) = (active_power_oracle(&case, &plus), active_power_oracle(&case, &minus));
            for i in 0..case.n() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                worst_fd = worst_fd.max((fd - l[(i, j)]).abs() / l[(i, j)].abs().max(1.0));
            }
        }
        for i in 0..case.n() {
            worst_row = worst_row.max(l.row(i).sum().abs());
        }
        let zeros = l.complex_eigenvalues().iter().filter(|z| z.norm() <= 1e-9).count();
        if zeros != 1 {
            bad_zero += 1;
        }
    }
    check(
        worst_fd <= 1e-6 && worst_row <= 1e-12 && bad_zero == 0,
        format!("20 cases: max FD rel err {worst_fd:.2e}, max |L 1| {worst_row:.2e}, cases without a simple zero {bad_zero}"),
    )
}

fn c4_pencil() -> Check {
    let eps = 1e-3;
    let mut worst_on: f64 = 0.0;
    let mut worst_off = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut probes = 0;
    for case in [two_bus(2.0), wscc9()] {
        let prep = prepare(&case, &SolverOptions::default()).unwrap();
        let l = prep.flow_jacobian();
        let jac = system_jacobian(&l, &prep.case, JacobianKind::Perturbed { eps }).unwrap();
        let spectrum = eigenvalues(&jac.matrix).unwrap();
        for &lambda in &spectrum.eigenvalues {
            worst_on = worst_on.max(pencil_residual(&l, &jac.d_diag, &jac.m_diag, lambda).unwrap());
        }
        // Square box around the whole spectrum, fast modes included.
        let rho = spectrum.eigenvalues.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let (re_lo, im_hi) = (-1.2 * rho, 0.7 * rho);
        let mut taken = 0;
        while taken < 50 {
            let z = Complex64::new(rng.gen_range(re_lo..-0.2 * re_lo), rng.gen_range(-im_hi..im_hi));
            let nearest = spectrum.eigenvalues.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
            if nearest < 0.05 * z.norm().max(1.0) {
                continue;
            }
            taken += 1;
            worst_off = worst_off.min(pencil_residual(&l, &jac.d_diag, &jac.m_diag, z).unwrap());
        }
        probes += taken;
    }
    check(
        worst_on <= 1e-8 && worst_off >= 1e-4,
        format!("max residual at eigenvalues {worst_on:.2e}, min residual at {probes} probes {worst_off:.2e}"),
    )
}

fn c5_modal() -> Check {
    let prep = prepare(&wscc9(), &SolverOptions::default()).unwrap();
    let start = Instant::now();
    let run = modal_run(&prep, &[1e-3, 1e-4]).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (coarse, fine) = (&run.perturbed[0].comparison, &run.perturbed[1].comparison);
    let ratio = coarse.max_distance / fine.max_distance;
    let n_fast = fine.fast.len();
    let worst_fast = fine.fast.iter().map(|f| f.rel_err).fold(0.0, f64::max);
    let expected_fast = prep.case.n() - prep.case.n_gen();
    let pass = (1.5..=4.0).contains(&ratio) && n_fast == expected_fast && worst_fast <= 0.1 && elapsed < 1.0;
    check(
        pass,
        format!(
            "max matched distance {:.4e} -> {:.4e} (factor {ratio:.3}, band [1.5, 4]); {n_fast} fast modes, worst rel err {worst_fast:.2e}; {elapsed:.3} s",
            coarse.max_distance, fine.max_distance
        ),
    )
}

fn c6_time_domain() -> Check {
    let prep = prepare(&wscc9(), &SolverOptions::default()).unwrap();
    let kick = Disturbance::generator_angles(&prep.case, 0.1);
    let opts = SimOptions::default();
    let mut gaps = Vec::new();
    let mut slowest: f64 = 0.0;
    for eps in [1e-2, 2e-3] {
        let start = Instant::now();
        let cmp = compare_models(&prep, &kick, &[eps], &opts).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        gaps.push(cmp.perturbed[0].gap);
    }
    let ratio = gaps[0] / gaps[1];
    check(
        (2.5..=10.0).contains(&ratio) && slowest < 10.0,
        format!("gap {:.4e} -> {:.4e} (factor {ratio:.3}); slowest pair {slowest:.2} s", gaps[0], gaps[1]),
    )
}

fn c7_boundary_layer() -> Check {
    let prep = prepare(&wscc9(), &SolverOptions::default()).unwrap();
    let mut kick = Disturbance::generator_angles(&prep.case, 0.1);
    kick.omega = prep.case.load_ids().map(|id| (id, 0.05 * (id.0 as f64 - 5.0))).collect();
    let state = initial_state(&prep, Model::Perturbed { eps: 1e-3 }, &kick).unwrap();
    let y0 = boundary_layer_transform(&prep.case, &prep.y, &state).unwrap();
    let coeffs = prep.case.load_freq_coeffs();
    let run = simulate_boundary_layer(&coeffs, &y0, 10.0, 0.01).unwrap();
    let mut worst: f64 = 0.0;
    for (tau, values) in run.taus.iter().zip(&run.values) {
        for ((v, y), d) in values.iter().zip(&y0).zip(&coeffs) {
            worst = worst.max((v - y * (-d * tau).exp()).abs());
        }
    }
    check(worst <= 1e-10, format!("max |y - y0 exp(-d tau)| {worst:.2e} over {} samples", run.taus.len()))
}

fn c8_soundness(pool: &Pool) -> Check {
    let start = Instant::now();
    let mut certified = 0;
    let mut counterexamples = 0;
    let mut worst_re = f64::NEG_INFINITY;
    for prep in &pool.cases {
        let report = prep.certificate().unwrap();
        if report.theorem1 != Theorem1Verdict::Pass {
            continue;
        }
        certified += 1;
        let spectrum = prep.spectrum(JacobianKind::Perturbed { eps: 1e-3 }).unwrap();
        let max_re = spectrum.max_nonzero_real.unwrap_or(f64::NEG_INFINITY);
        worst_re = worst_re.max(max_re);
        if spectrum.zero_modes != 1 || max_re >= -1e-9 {
            counterexamples += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        certified >= 1000 && counterexamples == 0 && elapsed < 60.0,
        format!("{certified} certified cases, {counterexamples} counterexamples, largest nonzero Re {worst_re:.3e}; {elapsed:.2} s"),
    )
}

fn c9_identities(pool: &Pool) -> Check {
    let mut worst_identity: f64 = 0.0;
    let mut implication_violations = 0;
    let mut checked = 0;
    let mut cases: Vec<(NetworkCase, Vec<f64>)> = pool.cases.iter().map(|p| (p.case.clone(), p.eq.delta.clone())).collect();
    for case in [two_bus(2.0), two_bus(1.0), wscc9()] {
        let prep = prepare(&case, &SolverOptions::default()).unwrap();
        cases.push((prep.case, prep.eq.delta));
    }
    for (case, delta) in &cases {
        let y = build_admittance(case);
        let q = reactive_power_injection(case, &y, delta);
        for id in case.generator_ids() {
            let i = id.0;
            let lhs = -q[i] - case.voltages()[i].powi(2) * y.b(i, i);
            worst_identity = worst_identity.max((lhs - neighbor_sine_sum_oracle(case, delta, i)).abs());
        }
        let report = assess_theorem1(case, &y, delta).unwrap();
        if report.assumption.pass {
            checked += 1;
            for g in &report.generators {
                if g.corollary1_pass && !g.theorem1_pass {
                    implication_violations += 1;
                }
            }
        }
    }
    check(
        worst_identity <= 1e-12 && implication_violations == 0,
        format!(
            "{} cases: max identity gap {worst_identity:.2e}; corollary-without-theorem generators {implication_violations} over {checked} hypothesis-satisfying cases",
            cases.len()
        ),
    )
}

fn c10_sweep() -> Check {
    let spec = SweepSpec::linspace(SweepParameter::DampingScale, 0.5, 3.0, 20, 1e-3);
    let rows = run_sweep(&wscc9(), &spec, &SolverOptions::default()).unwrap();
    let ok: Vec<_> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
    let c: Vec<f64> = ok.iter().map(|r| r.avg_c.unwrap()).collect();
    let re: Vec<f64> = ok.iter().map(|r| r.avg_re_lambda.unwrap()).collect();
    let rho = spearman(&c, &re);
    check(
        ok.len() == 20 && rho >= 0.9,
        format!(
            "{} rows, Spearman {rho:.4}; endpoints ({:.3}, {:.3}) -> ({:.3}, {:.3})",
            ok.len(),
            c[0],
            re[0],
            c[c.len() - 1],
            re[re.len() - 1]
        ),
    )
}

fn c11_braess() -> Check {
    let base = two_bus(2.0);
    let before = assess_corollary1(&base, &build_admittance(&base)).all_pass;
    let doubled = base.with_added_line(BusId(0), BusId(1), 0.0, -2.0).unwrap();
    let after = assess_corollary1(&doubled, &build_admittance(&doubled)).all_pass;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 11);
    let shape = CaseShape {
        damping_ratio: (1.0, 1.5),
        ..Default::default()
    };
    let mut witness = None;
    for attempt in 1..=5000 {
        let case = random_case(&mut rng, shape);
        if case.n() < 3 {
            continue;
        }
        let Ok(prep) = prepare(&case, &SolverOptions::default()) else { continue };
        if prep.certificate().unwrap().theorem1 != Theorem1Verdict::Pass {
            continue;
        }
        let gen = BusId(rng.gen_range(0..case.n_gen()));
        let other = BusId(rng.gen_range(0..case.n()));
        if other == gen {
            continue;
        }
        let x = rng.gen_range(0.3..1.0);
        let Ok(extended) = case.with_added_line(gen, other, 0.0, -1.0 / x) else { continue };
        let Ok(prep2) = prepare(&extended, &SolverOptions::default()) else { continue };
        if prep2.certificate().unwrap().theorem1 == Theorem1Verdict::Fail {
            witness = Some((attempt, case.n(), gen.0, other.0));
            break;
        }
    }
    let detail = match witness {
        Some((attempt, n, g, o)) => format!("random flip at attempt {attempt}: {n} buses, line {g}-{o}"),
        None => "no random flip found".to_string(),
    };
    check(
        before && !after && witness.is_some(),
        format!("two-bus corollary {before} -> {after}; {detail}"),
    )
}

fn c12_non_necessity() -> Check {
    let case = two_bus(1.0);
    let prep = prepare(&case, &SolverOptions::default()).unwrap();
    let report = prep.certificate().unwrap();
    let c1 = report.generators[0].c;
    let l = prep.flow_jacobian();
    let j = system_jacobian(&l, &prep.case, JacobianKind::Perturbed { eps: 1e-3 }).unwrap();
    let spectrum = eigenvalues(&j.matrix).unwrap();
    // Independent route: the library's general eigen-decomposition.
    let reference = DMatrix::from(j.matrix.clone()).complex_eigenvalues();
    let mut nonzero: Vec<f64> = reference.iter().filter(|z| z.norm() > 1e-9).map(|z| z.re).collect();
    nonzero.sort_by(f64::total_cmp);
    let stable = spectrum.zero_modes == 1
        && spectrum.max_nonzero_real.unwrap() < 0.0
        && nonzero.len() == 3
        && nonzero.iter().all(|&r| r < 0.0);
    check(
        c1 > 0.0 && stable && report.theorem1 == Theorem1Verdict::Fail,
        format!("C_1 = {c1:.4}, largest nonzero Re {:.4e}", spectrum.max_nonzero_real.unwrap()),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        check(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id:>2} {:<28} {}  {}",
        name,
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail
    );
    outcome.pass
}

fn main() {
    let pool_start = Instant::now();
    let pool = build_pool(2000);
    println!(
        "random pool: {} hypothesis-satisfying cases from {} draws (seed {SEED}, {:.2} s)",
        pool.cases.len(),
        pool.attempts,
        pool_start.elapsed().as_secs_f64()
    );
    let results = [
        run(1, "power flow", c1_power_flow),
        run(2, "line-angle hypothesis", c2_assumption),
        run(3, "flow jacobian oracle", c3_flow_jacobian),
        run(4, "pencil duality", c4_pencil),
        run(5, "modal convergence", c5_modal),
        run(6, "time-domain gap", c6_time_domain),
        run(7, "boundary layer", c7_boundary_layer),
        run(8, "certificate soundness", || c8_soundness(&pool)),
        run(9, "certificate identities", || c9_identities(&pool)),
        run(10, "damping sweep trend", c10_sweep),
        run(11, "added-line paradox", c11_braess),
        run(12, "non-necessity witness", c12_non_necessity),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
