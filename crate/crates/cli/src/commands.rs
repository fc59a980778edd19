use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use swingcert_core::certificate::{agent_constants, distributed_assess, AgentVerdict, MonitorInput, Sample, Theorem1Verdict};
use swingcert_core::dynamics::{simulate as run_model, trajectory_divergence, MethodChoice, Model, SimOptions, Trajectory};
use swingcert_core::integrator::IntegrationStats;
use swingcert_core::eigen::{SpectrumReport, StabilityVerdict};
use swingcert_core::equilibrium::{check_assumption1, SolverOptions};
use swingcert_core::experiments::{initial_state, modal_run, prepare, run_sweep, Disturbance, Prepared, RowStatus, SweepParameter, SweepSpec};
use swingcert_core::linearization::{pencil_residual, system_jacobian, JacobianKind};
use swingcert_core::netmodel::augment_internal_buses;
use swingcert_core::{build_admittance, data, load_case, BusId, Error, NetworkCase};

use crate::output::{hf, mf, table, to_csv, to_json, Sink};
use crate::{Format, GlobalOpts};

pub const EXIT_CERTIFICATE_FAIL: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_POWER_FLOW: i32 = 3;
pub const EXIT_ASSUMPTION: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        Failure::new(EXIT_USAGE, anyhow!(msg.into()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::Validation(_) => EXIT_PARSE,
            Error::NonConvergence { .. } | Error::SingularJacobian { .. } => EXIT_POWER_FLOW,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure::new(code, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::new(EXIT_RUNTIME, e)
    }
}

type CmdResult = Result<i32, Failure>;

fn load(global: &GlobalOpts) -> Result<NetworkCase, Failure> {
    let text = match global.case.strip_prefix("builtin:") {
        Some(name) => data::bundled(name)
            .ok_or_else(|| Failure::usage(format!("unknown bundled case `{name}` (try wscc9 or two_bus)")))?
            .to_string(),
        None => fs::read_to_string(&global.case)
            .map_err(|e| Failure::new(EXIT_PARSE, anyhow!("reading {}: {e}", global.case)))?,
    };
    let case = load_case(&text)?;
    if global.augment_internal {
        return Ok(augment_internal_buses(&case, &global.xdprime)?);
    }
    if !global.xdprime.is_empty() {
        return Err(Failure::usage("--xdprime only applies with --augment-internal"));
    }
    Ok(case)
}

fn solve(case: &NetworkCase) -> Result<Prepared, Failure> {
    Ok(prepare(case, &SolverOptions::default())?)
}

fn eps_list(global: &GlobalOpts, default: &[f64]) -> Result<Vec<f64>, Failure> {
    let list = if global.eps.is_empty() { default.to_vec() } else { global.eps.clone() };
    if let Some(bad) = list.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Failure::usage(format!(
            "--eps must be positive, got {bad}; the unperturbed model is always included where relevant"
        )));
    }
    Ok(list)
}

fn yes_no(b: bool) -> String {
    if b { "pass" } else { "FAIL" }.to_string()
}

fn bus_name(case: &NetworkCase, id: BusId) -> String {
    case.bus(id).name.clone()
}

fn angle_table(prep: &Prepared) -> String {
    let report = check_assumption1(&prep.case, &prep.y, &prep.eq.delta, None);
    let rows: Vec<Vec<String>> = report
        .lines
        .iter()
        .map(|l| {
            vec![
                bus_name(&prep.case, l.from),
                bus_name(&prep.case, l.to),
                hf(l.alpha),
                hf(l.alpha.to_degrees()),
                yes_no(l.pass),
            ]
        })
        .collect();
    table(&["from", "to", "alpha_rad", "alpha_deg", "ok"], &rows)
}

#[derive(Serialize)]
struct EquilibriumSummary<'a> {
    delta: &'a [f64],
    reference_bus: String,
    reference_injection: f64,
    iterations: usize,
    residual_norm: f64,
}

#[derive(Serialize)]
struct AssessOutput<'a, T: Serialize> {
    case: Option<&'a str>,
    bus_names: Vec<String>,
    equilibrium: EquilibriumSummary<'a>,
    certificate: T,
}

pub fn assess(global: &GlobalOpts) -> CmdResult {
    let case = load(global)?;
    let prep = solve(&case)?;
    let report = prep.certificate()?;
    let sink = Sink::new(global.out.as_deref())?;

    let header = ["bus", "Q_i", "B_ii", "C_i", "thm1", "cor1"];
    let human_rows: Vec<Vec<String>> = report
        .generators
        .iter()
        .map(|g| vec![g.name.clone(), hf(g.q), hf(g.b_ii), hf(g.c), yes_no(g.theorem1_pass), yes_no(g.corollary1_pass)])
        .collect();
    let mut text = table(&header, &human_rows);
    text.push_str(&format!(
        "theorem 1: {:?}   corollary 1: {}   average C: {}\n\nline angles theta_ij - delta_i + delta_j (must lie in (0, pi)):\n",
        report.theorem1,
        yes_no(report.corollary1_all_pass),
        hf(report.average_c)
    ));
    text.push_str(&angle_table(&prep));
    for g in report.generators.iter().filter(|g| g.positive_b_ii) {
        text.push_str(&format!("warning: B_ii > 0 at generator {}\n", g.name));
    }

    match global.format {
        Format::Json => {
            let out = AssessOutput {
                case: prep.case.name(),
                bus_names: prep.case.buses().iter().map(|b| b.name.clone()).collect(),
                equilibrium: EquilibriumSummary {
                    delta: &prep.eq.delta,
                    reference_bus: bus_name(&prep.case, prep.eq.reference_bus),
                    reference_injection: prep.eq.reference_injection,
                    iterations: prep.eq.iterations,
                    residual_norm: prep.eq.residual_norm,
                },
                certificate: &report,
            };
            sink.emit("assess.json", &to_json(&out)?)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .generators
                .iter()
                .map(|g| {
                    vec![
                        g.name.clone(),
                        mf(g.v),
                        mf(g.q),
                        mf(g.b_ii),
                        mf(g.threshold),
                        mf(g.c),
                        g.theorem1_pass.to_string(),
                        mf(g.corollary1_lhs),
                        g.corollary1_pass.to_string(),
                    ]
                })
                .collect();
            let header = ["bus", "V", "Q", "B_ii", "threshold", "C", "theorem1_pass", "corollary1_lhs", "corollary1_pass"];
            sink.emit("assess.csv", &to_csv(&header, &rows)?)?;
        }
    }
    sink.human(&text);
    Ok(match report.theorem1 {
        Theorem1Verdict::Pass => 0,
        Theorem1Verdict::Fail => EXIT_CERTIFICATE_FAIL,
        Theorem1Verdict::Inapplicable => EXIT_ASSUMPTION,
    })
}

#[derive(Debug, Args)]
pub struct CheckAssumptionArgs {
    /// Check |delta_i - delta_j| < MARGIN instead of the (0, pi) window.
    #[arg(long)]
    margin: Option<f64>,
}

pub fn check_assumption(global: &GlobalOpts, args: &CheckAssumptionArgs) -> CmdResult {
    let case = load(global)?;
    let prep = solve(&case)?;
    let report = check_assumption1(&prep.case, &prep.y, &prep.eq.delta, args.margin);
    let sink = Sink::new(global.out.as_deref())?;
    let rows: Vec<Vec<String>> = report
        .lines
        .iter()
        .map(|l| vec![bus_name(&prep.case, l.from), bus_name(&prep.case, l.to), mf(l.alpha), l.pass.to_string()])
        .collect();
    match global.format {
        Format::Csv => sink.emit("assumption.csv", &to_csv(&["line_from", "line_to", "alpha_rad", "pass"], &rows)?)?,
        Format::Json => sink.emit("assumption.json", &to_json(&report)?)?,
    }
    sink.human(&format!(
        "{} oriented lines, min margin {} rad: {}\n",
        report.lines.len(),
        hf(report.min_margin),
        yes_no(report.pass)
    ));
    Ok(if report.pass { 0 } else { EXIT_ASSUMPTION })
}

#[derive(Debug, Args)]
pub struct ModalArgs {
    /// Random off-spectrum points at which the pencil residual is probed.
    #[arg(long, default_value_t = 100)]
    probes: usize,
}

#[derive(Serialize)]
struct PencilCheck {
    max_at_eigenvalues: f64,
    min_at_probes: Option<f64>,
    probes: usize,
}

#[derive(Serialize)]
struct PerturbedOut {
    eps: f64,
    eigenvalues_j: Vec<Complex64>,
    verdict: StabilityVerdict,
    zero_modes: usize,
    matched: Vec<(usize, usize, f64)>,
    fast: Vec<swingcert_core::linearization::FastMode>,
    ambiguous: Vec<usize>,
    max_distance: f64,
    mean_nonzero_real: Option<f64>,
    pencil: PencilCheck,
}

#[derive(Serialize)]
struct ModalOut {
    eigenvalues_k: Vec<Complex64>,
    verdict_k: StabilityVerdict,
    zero_modes_k: usize,
    perturbed: Vec<PerturbedOut>,
}

fn pencil_check(prep: &Prepared, eps: f64, spectrum: &SpectrumReport, probes: usize, rng: &mut ChaCha8Rng) -> Result<PencilCheck, Failure> {
    let l = prep.flow_jacobian();
    let jac = system_jacobian(&l, &prep.case, JacobianKind::Perturbed { eps })?;
    let mut max_on: f64 = 0.0;
    for &lambda in &spectrum.eigenvalues {
        max_on = max_on.max(pencil_residual(&l, &jac.d_diag, &jac.m_diag, lambda)?);
    }
    let rho = spectrum.eigenvalues.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut min_off: Option<f64> = None;
    let mut taken = 0;
    while taken < probes {
        let z = Complex64::new(rng.gen_range(-1.2 * rho..0.24 * rho), rng.gen_range(-0.7 * rho..0.7 * rho));
        let nearest = spectrum.eigenvalues.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
        if nearest < 0.05 * z.norm().max(1.0) {
            continue;
        }
        taken += 1;
        let r = pencil_residual(&l, &jac.d_diag, &jac.m_diag, z)?;
        min_off = Some(min_off.map_or(r, |m: f64| m.min(r)));
    }
    Ok(PencilCheck {
        max_at_eigenvalues: max_on,
        min_at_probes: min_off,
        probes,
    })
}

pub fn modal(global: &GlobalOpts, args: &ModalArgs) -> CmdResult {
    let eps = eps_list(global, &[1e-3, 1e-4])?;
    let case = load(global)?;
    let prep = solve(&case)?;
    let run = modal_run(&prep, &eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(global.seed);

    let mut perturbed = Vec::new();
    let mut summary = Vec::new();
    let mut csv_rows: Vec<Vec<String>> = run
        .unperturbed
        .eigenvalues
        .iter()
        .map(|z| vec![mf(z.re), mf(z.im), "K".into()])
        .collect();
    for p in &run.perturbed {
        let pencil = pencil_check(&prep, p.eps, &p.spectrum, args.probes, &mut rng)?;
        let worst_fast = p.comparison.fast.iter().map(|f| f.rel_err).fold(0.0, f64::max);
        summary.push(vec![
            hf(p.eps),
            hf(p.comparison.max_distance),
            p.comparison.fast.len().to_string(),
            hf(worst_fast),
            format!("{:?}", p.spectrum.verdict()),
            hf(pencil.max_at_eigenvalues),
            pencil.min_at_probes.map_or("-".into(), hf),
        ]);
        let source = format!("J(eps={})", mf(p.eps));
        csv_rows.extend(p.spectrum.eigenvalues.iter().map(|z| vec![mf(z.re), mf(z.im), source.clone()]));
        perturbed.push(PerturbedOut {
            eps: p.eps,
            eigenvalues_j: p.spectrum.eigenvalues.clone(),
            verdict: p.spectrum.verdict(),
            zero_modes: p.spectrum.zero_modes,
            matched: p.comparison.matched.iter().map(|m| (m.k_index, m.j_index, m.distance)).collect(),
            fast: p.comparison.fast.clone(),
            ambiguous: p.comparison.ambiguous.clone(),
            max_distance: p.comparison.max_distance,
            mean_nonzero_real: p.spectrum.mean_nonzero_real(),
            pencil,
        });
    }
    let out = ModalOut {
        eigenvalues_k: run.unperturbed.eigenvalues.clone(),
        verdict_k: run.unperturbed.verdict(),
        zero_modes_k: run.unperturbed.zero_modes,
        perturbed,
    };

    let sink = Sink::new(global.out.as_deref())?;
    let json = to_json(&out)?;
    let csv = to_csv(&["re", "im", "source"], &csv_rows)?;
    if sink.has_dir() {
        sink.emit("modal.json", &json)?;
        sink.emit("modal.csv", &csv)?;
    } else {
        match global.format {
            Format::Json => sink.emit("modal.json", &json)?,
            Format::Csv => sink.emit("modal.csv", &csv)?,
        }
    }
    let mut text = format!("K: {} eigenvalues, verdict {:?}\n", out.eigenvalues_k.len(), out.verdict_k);
    text.push_str(&table(
        &["eps", "max_match_dist", "fast", "worst_fast_rel_err", "verdict", "pencil_at_eig", "pencil_min_probe"],
        &summary,
    ));
    sink.human(&text);
    Ok(0)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParamArg {
    Damping,
    Inertia,
    Load,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = ParamArg::Damping)]
    parameter: ParamArg,
    #[arg(long, default_value_t = 0.5)]
    from: f64,
    #[arg(long, default_value_t = 3.0)]
    to: f64,
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Explicit multipliers; overrides --from/--to/--points.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

pub fn sweep(global: &GlobalOpts, args: &SweepArgs) -> CmdResult {
    let eps = eps_list(global, &[1e-3])?;
    if eps.len() != 1 {
        return Err(Failure::usage("sweep takes a single --eps"));
    }
    let parameter = match args.parameter {
        ParamArg::Damping => SweepParameter::DampingScale,
        ParamArg::Inertia => SweepParameter::InertiaScale,
        ParamArg::Load => SweepParameter::LoadScale,
    };
    let spec = if args.values.is_empty() {
        SweepSpec::linspace(parameter, args.from, args.to, args.points, eps[0])
    } else {
        SweepSpec {
            parameter,
            values: args.values.clone(),
            eps: eps[0],
        }
    };
    let case = load(global)?;
    let rows = run_sweep(&case, &spec, &SolverOptions::default())?;
    let sink = Sink::new(global.out.as_deref())?;

    let opt = |x: Option<f64>| x.map(mf).unwrap_or_default();
    let optb = |x: Option<bool>| x.map(|b| b.to_string()).unwrap_or_default();
    let machine: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (status, detail) = match &r.status {
                RowStatus::Ok => ("ok", String::new()),
                RowStatus::AssumptionFailed => ("assumption_failed", String::new()),
                RowStatus::Failed(msg) => ("failed", msg.clone()),
            };
            vec![
                mf(r.multiplier),
                status.into(),
                r.assumption1_pass.to_string(),
                opt(r.avg_c),
                opt(r.avg_re_lambda),
                r.theorem1.map(|t| format!("{t:?}").to_lowercase()).unwrap_or_default(),
                optb(r.theorem1_all_pass),
                optb(r.corollary1_all_pass),
                r.spectrum_verdict.map(|v| format!("{v:?}").to_lowercase()).unwrap_or_default(),
                detail,
            ]
        })
        .collect();
    match global.format {
        Format::Csv => {
            let header = [
                "multiplier",
                "status",
                "assumption1_pass",
                "avg_c",
                "avg_re_lambda",
                "theorem1",
                "theorem1_all_pass",
                "corollary1_all_pass",
                "spectrum_verdict",
                "detail",
            ];
            sink.emit("sweep.csv", &to_csv(&header, &machine)?)?;
        }
        Format::Json => sink.emit("sweep.json", &to_json(&rows)?)?,
    }
    let human: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                hf(r.multiplier),
                r.avg_c.map_or("-".into(), hf),
                r.avg_re_lambda.map_or("-".into(), hf),
                r.theorem1.map_or("-".into(), |t| format!("{t:?}")),
            ]
        })
        .collect();
    let mut text = table(&["multiplier", "avg_C", "avg_Re_lambda", "theorem1"], &human);
    for r in rows.iter().filter(|r| r.status != RowStatus::Ok) {
        text.push_str(&format!("warning: multiplier {} skipped ({:?})\n", hf(r.multiplier), r.status));
    }
    sink.human(&text);
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Unperturbed,
    Perturbed,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Explicit,
    Implicit,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Both)]
    model: ModelArg,
    /// Angle offset added to every generator at t = 0 (rad).
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    gen_angle_offset: f64,
    /// Extra angle offset at one bus, as NAME=VALUE (repeatable).
    #[arg(long = "delta-offset", allow_hyphen_values = true)]
    delta_offsets: Vec<String>,
    /// Frequency offset at one bus, as NAME=VALUE (repeatable).
    #[arg(long = "omega-offset", allow_hyphen_values = true)]
    omega_offsets: Vec<String>,
    #[arg(long, default_value_t = 20.0)]
    horizon: f64,
    /// Output sample interval (s).
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
}

fn parse_offsets(case: &NetworkCase, specs: &[String]) -> Result<Vec<(BusId, f64)>, Failure> {
    specs
        .iter()
        .map(|s| {
            let (name, value) = s
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("expected NAME=VALUE, got `{s}`")))?;
            let id = case
                .bus_id(name)
                .ok_or_else(|| Failure::usage(format!("unknown bus `{name}`")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Failure::usage(format!("bad offset value in `{s}`")))?;
            Ok((id, value))
        })
        .collect()
}

fn trajectory_csv(case: &NetworkCase, run: &Trajectory) -> Result<String, Failure> {
    let omega_len = run.final_state().omega.len();
    let mut header = vec!["t".to_string()];
    header.extend(case.buses().iter().map(|b| format!("delta_{}", b.name)));
    header.extend(case.buses().iter().take(omega_len).map(|b| format!("omega_{}", b.name)));
    let rows: Vec<Vec<String>> = run
        .times
        .iter()
        .zip(&run.states)
        .map(|(t, s)| std::iter::once(mf(*t)).chain(s.delta.iter().chain(&s.omega).map(|x| mf(*x))).collect())
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(to_csv(&header, &rows)?)
}

#[derive(Serialize)]
struct RunMeta {
    file: String,
    model: Model,
    max_step: Option<f64>,
    stats: IntegrationStats,
}

#[derive(Serialize)]
struct Divergence {
    eps: f64,
    generator_sup_gap: f64,
}

#[derive(Serialize)]
struct SimulateMeta {
    horizon: f64,
    sample_interval: f64,
    disturbance: Disturbance,
    runs: Vec<RunMeta>,
    divergence: Vec<Divergence>,
}

pub fn simulate(global: &GlobalOpts, args: &SimulateArgs) -> CmdResult {
    let eps = match args.model {
        ModelArg::Unperturbed => Vec::new(),
        _ => eps_list(global, &[1e-2, 2e-3])?,
    };
    let case = load(global)?;
    let prep = solve(&case)?;
    let mut disturbance = Disturbance::generator_angles(&prep.case, args.gen_angle_offset);
    disturbance.delta.extend(parse_offsets(&prep.case, &args.delta_offsets)?);
    disturbance.omega = parse_offsets(&prep.case, &args.omega_offsets)?;
    let opts = SimOptions {
        horizon: args.horizon,
        rtol: args.rtol,
        atol: args.atol,
        max_step: None,
        sample_interval: args.dt,
        method: match args.method {
            MethodArg::Auto => MethodChoice::Auto,
            MethodArg::Explicit => MethodChoice::Explicit,
            MethodArg::Implicit => MethodChoice::Implicit,
        },
    };

    let mut models = Vec::new();
    if args.model != ModelArg::Perturbed {
        models.push(("trajectory_unperturbed.csv".to_string(), Model::Unperturbed));
    }
    models.extend(eps.iter().map(|&e| (format!("trajectory_eps_{e}.csv"), Model::Perturbed { eps: e })));
    let sink = Sink::new(global.out.as_deref())?;
    if models.len() > 1 && !sink.has_dir() {
        return Err(Failure::usage("several runs need --out DIR (or pick --model and a single --eps)"));
    }

    let mut runs = Vec::new();
    for (file, model) in &models {
        let x0 = initial_state(&prep, *model, &disturbance)?;
        let run = run_model(&prep.case, &prep.y, &x0, &opts)?;
        sink.emit(file, &trajectory_csv(&prep.case, &run)?)?;
        runs.push((file.clone(), run));
    }

    let generators: Vec<BusId> = prep.case.generator_ids().collect();
    let mut divergence = Vec::new();
    if let Some((_, reference)) = runs.iter().find(|(_, r)| r.model == Model::Unperturbed) {
        for (_, run) in &runs {
            if let Model::Perturbed { eps } = run.model {
                divergence.push(Divergence {
                    eps,
                    generator_sup_gap: trajectory_divergence(reference, run, &generators)?,
                });
            }
        }
    }
    let meta = SimulateMeta {
        horizon: args.horizon,
        sample_interval: args.dt,
        disturbance,
        runs: runs
            .iter()
            .map(|(file, r)| RunMeta {
                file: file.clone(),
                model: r.model,
                max_step: r.max_step,
                stats: r.stats.clone(),
            })
            .collect(),
        divergence,
    };
    sink.file_only("simulate.json", &to_json(&meta)?)?;
    let mut text = table(
        &["file", "method", "accepted", "rejected"],
        &meta
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.file.clone(),
                    format!("{:?}", r.stats.method),
                    r.stats.accepted_steps.to_string(),
                    r.stats.rejected_steps.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    );
    for d in &meta.divergence {
        text.push_str(&format!("eps {}: generator sup gap {}\n", hf(d.eps), hf(d.generator_sup_gap)));
    }
    sink.human(&text);
    Ok(0)
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Measurement CSV with columns t, bus, V, Q. Empty V or Q marks a missing sample.
    #[arg(long)]
    input: PathBuf,
}

#[derive(serde::Deserialize)]
struct MeasurementRow {
    t: f64,
    bus: String,
    #[serde(rename = "V")]
    v: Option<f64>,
    #[serde(rename = "Q")]
    q: Option<f64>,
}

#[derive(Serialize)]
struct AgentOut {
    bus: String,
    records: Vec<swingcert_core::certificate::VerdictRecord>,
}

#[derive(Serialize)]
struct MonitorOut {
    agents: Vec<AgentOut>,
    aggregate: Vec<swingcert_core::certificate::AggregateRecord>,
}

fn verdict_name(v: AgentVerdict) -> &'static str {
    match v {
        AgentVerdict::Pass => "pass",
        AgentVerdict::Fail => "fail",
        AgentVerdict::Stale => "stale",
    }
}

pub fn monitor(global: &GlobalOpts, args: &MonitorArgs) -> CmdResult {
    let case = load(global)?;
    let y = build_admittance(&case);
    let parse_err = |msg: String| Failure::new(EXIT_PARSE, anyhow!(msg));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&args.input)
        .map_err(|e| parse_err(format!("reading {}: {e}", args.input.display())))?;

    let constants = agent_constants(&case, &y);
    let mut measured: HashMap<(usize, u64), Option<(f64, f64)>> = HashMap::new();
    let mut times: Vec<f64> = Vec::new();
    for (line, row) in reader.deserialize::<MeasurementRow>().enumerate() {
        let row = row.map_err(|e| parse_err(format!("{}: record {}: {e}", args.input.display(), line + 1)))?;
        let id = case
            .bus_id(&row.bus)
            .filter(|id| case.bus(*id).is_generator())
            .ok_or_else(|| parse_err(format!("record {}: `{}` is not a generator bus", line + 1, row.bus)))?;
        if !row.t.is_finite() {
            return Err(parse_err(format!("record {}: non-finite time", line + 1)));
        }
        let sample = match (row.v, row.q) {
            (Some(v), Some(q)) if v.is_finite() && q.is_finite() => Some((v, q)),
            (Some(_), Some(_)) => return Err(parse_err(format!("record {}: non-finite measurement", line + 1))),
            _ => None,
        };
        times.push(row.t);
        measured.insert((id.0, row.t.to_bits()), sample);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    // Every agent gets a sample slot at every timestamp seen in the file;
    // slots without a reading for that agent are missing samples.
    let inputs: Vec<MonitorInput> = constants
        .iter()
        .map(|k| {
            let samples = times
                .iter()
                .map(|&t| match measured.get(&(k.bus.0, t.to_bits())).copied().flatten() {
                    Some((v, q)) => Sample::Present { t, v, q },
                    None => Sample::Missing { t },
                })
                .collect();
            MonitorInput { constants: *k, samples }
        })
        .collect();
    let outcome = distributed_assess(inputs)?;

    let sink = Sink::new(global.out.as_deref())?;
    let rows: Vec<Vec<String>> = outcome
        .agents
        .iter()
        .flatten()
        .map(|r| {
            vec![
                mf(r.t),
                bus_name(&case, r.bus),
                r.c.map(mf).unwrap_or_default(),
                verdict_name(r.verdict).into(),
            ]
        })
        .collect();
    let aggregate_rows: Vec<Vec<String>> = outcome
        .aggregate
        .iter()
        .map(|a| vec![mf(a.t), verdict_name(a.verdict).into(), a.reporting.to_string()])
        .collect();
    let aggregate_csv = to_csv(&["t", "verdict", "reporting"], &aggregate_rows)?;
    match global.format {
        Format::Csv => {
            sink.emit("monitor.csv", &to_csv(&["t", "bus", "C", "verdict"], &rows)?)?;
            sink.file_only("monitor_aggregate.csv", &aggregate_csv)?;
        }
        Format::Json => {
            let out = MonitorOut {
                agents: outcome
                    .agents
                    .iter()
                    .zip(&constants)
                    .map(|(records, k)| AgentOut {
                        bus: bus_name(&case, k.bus),
                        records: records.clone(),
                    })
                    .collect(),
                aggregate: outcome.aggregate.clone(),
            };
            sink.emit("monitor.json", &to_json(&out)?)?;
        }
    }
    let counts = |v: AgentVerdict| outcome.aggregate.iter().filter(|a| a.verdict == v).count();
    sink.human(&format!(
        "{} agents, {} timestamps: {} pass, {} fail, {} stale\n",
        constants.len(),
        outcome.aggregate.len(),
        counts(AgentVerdict::Pass),
        counts(AgentVerdict::Fail),
        counts(AgentVerdict::Stale)
    ));
    Ok(0)
}
