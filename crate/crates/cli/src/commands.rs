use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use sagd_mixing::chains::{run_chain, run_coupled, ChainState, LabelModel, Synthetic, Theta};
use sagd_mixing::contraction::{evolve_gram, mc_estimate_mn, reconstruct_mn};
use sagd_mixing::harness::emit::{table_csv_string, trajectory_csv_string, write_sidecar, Sidecar, TableRecord};
use sagd_mixing::harness::fit::fit_exponential_rate;
use sagd_mixing::harness::ingest::EmpiricalSummary;
use sagd_mixing::harness::table::{
    benchmark_thetas, GAUSSIAN_BENCHMARK, GAUSSIAN_BENCHMARK_MU, UNIFORM_RADEMACHER_BENCHMARK,
    UNIFORM_RADEMACHER_BENCHMARK_KAPPA,
};
use sagd_mixing::harness::{
    mean_coupled_trajectory, run_table_with, ExperimentConfig, Format, ModelChoice, RateRow, TableOptions, ThetaChoice,
};
use sagd_mixing::spectral::{self, GridPoint};
use sagd_mixing::tuner::{self, Axis, Objective, TuneConfig, TuneResult};
use sagd_mixing::Error;

use crate::args::{parse_axis, Common};
use crate::source::Source;
use crate::CliError;

fn command_line() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)? + "\n")
}

/// Writes `text` to `--out` with a sidecar, or to stdout.
fn emit(cfg: &ExperimentConfig, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| {
                CliError::Lib(Error::Io {
                    path: path.clone(),
                    source: e,
                })
            })?;
            let config = serde_json::to_value(cfg).map_err(Error::from)?;
            let sc = write_sidecar(path, &Sidecar::new(&command_line(), cfg.seed, config))?;
            log::info!("wrote {} and {}", path.display(), sc.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn explicit(theta: &Theta) -> ThetaChoice {
    ThetaChoice::Explicit {
        alpha: theta.alpha,
        beta: theta.beta,
        gamma: theta.gamma,
    }
}

fn divergence_check(diverged: usize, runs: usize) -> Result<(), CliError> {
    if 2 * diverged > runs {
        Err(CliError::Diverged(format!("{diverged} of {runs} runs diverged")))
    } else {
        if diverged > 0 {
            log::warn!("{diverged} of {runs} runs diverged and were left out");
        }
        Ok(())
    }
}

/// Common setup: merged config, loaded source, resolved theta and labels.
struct Setup {
    cfg: ExperimentConfig,
    src: Source,
    theta: Theta,
    labels: LabelModel,
}

impl Setup {
    fn new(common: &Common) -> Result<Self, CliError> {
        let mut cfg = common.experiment()?;
        let src = Source::load(&cfg)?;
        let theta = src.theta(common, &cfg)?;
        let labels = src.labels(common, &cfg)?;
        cfg.theta = Some(explicit(&theta));
        cfg.labels = labels.clone();
        Ok(Setup {
            cfg,
            src,
            theta,
            labels,
        })
    }

    fn w0(&self) -> Result<Vec<f64>, CliError> {
        let d = self.src.dim();
        let w0 = self.cfg.w0.clone().unwrap_or_else(|| vec![1.0; d]);
        if w0.len() != d {
            return Err(CliError::Usage(format!(
                "--w0 has {} entries, the model has dimension {d}",
                w0.len()
            )));
        }
        Ok(w0)
    }

    fn eps(&self) -> f64 {
        self.cfg.eps_for(self.src.mu())
    }
}

#[derive(Serialize)]
struct SimulateReport {
    model: String,
    theta: Theta,
    runs: usize,
    diverged_runs: usize,
    /// Mean of `||u_k - u_ref||^2` over non-divergent runs.
    mean: Vec<f64>,
}

/// Runs independent chains from `(w0, w0)` and records the mean squared
/// distance of the lifted iterate to `(w*, w*)`, or to the origin when there
/// is no ground truth.
pub fn simulate(common: &Common) -> Result<(), CliError> {
    let s = Setup::new(common)?;
    let d = s.src.dim();
    let sampler = s.src.sampler(&s.labels)?;
    let reference = ChainState::at_rest(match &s.labels {
        LabelModel::Realizable { w_star } | LabelModel::Noisy { w_star, .. } => w_star.clone(),
        LabelModel::Zero => vec![0.0; d],
    });
    let init = ChainState::at_rest(s.w0()?);
    let (n, runs) = (s.cfg.n, s.cfg.runs);
    let mut sums = vec![0.0; n + 1];
    let (mut ok, mut diverged) = (0usize, 0usize);
    for r in 0..runs as u64 {
        match run_chain(sampler.as_ref(), &s.theta, &init, n, s.cfg.seed, r, 1) {
            Ok(run) => {
                for (acc, st) in sums.iter_mut().zip(&run.states) {
                    *acc += st.sq_dist(&reference);
                }
                ok += 1;
            }
            Err(Error::Divergence { step }) => {
                log::debug!("run {r} diverged at step {step}");
                diverged += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mean: Vec<f64> = if ok > 0 {
        sums.iter().map(|v| v / ok as f64).collect()
    } else {
        vec![f64::NAN; n + 1]
    };
    let text = match s.cfg.format {
        Format::Csv => trajectory_csv_string(&mean)?,
        Format::Json => json(&SimulateReport {
            model: s.src.name().to_string(),
            theta: s.theta,
            runs,
            diverged_runs: diverged,
            mean,
        })?,
    };
    emit(&s.cfg, &text)?;
    divergence_check(diverged, runs)
}

#[derive(Serialize)]
struct CoupleReport {
    model: String,
    theta: Theta,
    runs: usize,
    diverged_runs: usize,
    empirical_rate: Option<f64>,
    theoretical_rate: f64,
    mean: Vec<f64>,
    stderr: Vec<f64>,
}

/// Couples a chain from `(w0, w0)` with one from the origin.
pub fn couple(common: &Common) -> Result<(), CliError> {
    let s = Setup::new(common)?;
    let sampler = s.src.sampler(&s.labels)?;
    let i0 = ChainState::at_rest(s.w0()?);
    let i1 = ChainState::zeros(s.src.dim());
    let traj = mean_coupled_trajectory(
        sampler.as_ref(),
        s.src.name(),
        &s.theta,
        &i0,
        &i1,
        s.cfg.n,
        s.cfg.runs,
        s.cfg.seed,
        s.cfg.burn_in,
    )?;
    let rho = s.src.contraction(&s.theta)?.spectral_radius()?;
    let empirical_rate = if traj.diverged_runs < traj.runs {
        fit_exponential_rate(&traj.mean, s.cfg.burn_in).ok().map(|f| f.rate)
    } else {
        None
    };
    log::info!(
        "empirical rate {}, theoretical rate {:.5}",
        empirical_rate.map_or("n/a".into(), |r| format!("{r:.5}")),
        -rho.ln()
    );
    let text = match s.cfg.format {
        Format::Csv => trajectory_csv_string(&traj.mean)?,
        Format::Json => json(&CoupleReport {
            model: s.src.name().to_string(),
            theta: s.theta,
            runs: traj.runs,
            diverged_runs: traj.diverged_runs,
            empirical_rate,
            theoretical_rate: -rho.ln(),
            mean: traj.mean.clone(),
            stderr: traj.stderr.clone(),
        })?,
    };
    emit(&s.cfg, &text)?;
    divergence_check(traj.diverged_runs, traj.runs)
}

#[derive(Args, Clone, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,

    /// Write `re,im,sigma_min` on an N x N grid instead of the report.
    #[arg(long, value_name = "N")]
    pub grid: Option<usize>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    model: String,
    theta: Theta,
    dim: usize,
    eps: f64,
    rho: f64,
    theoretical_rate: f64,
    rho_eps: f64,
    eigenvector_condition: f64,
    /// `[re, im]` pairs.
    eigenvalues: Vec<[f64; 2]>,
    j_radii: Option<Vec<f64>>,
    jblock_bound: Option<f64>,
    perturbation_term: Option<f64>,
    /// Contraction matrix, row by row.
    matrix: Vec<Vec<f64>>,
}

/// Contraction matrix, its spectrum, pseudospectral radius and block bound.
pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let s = Setup::new(&args.common)?;
    let eps = s.eps();
    let c = s.src.contraction(&s.theta)?;
    let m = c.mat();
    if let Some(n) = args.grid {
        let r = spectral::operator_norm(m) + eps;
        let pts = spectral::pseudospectrum_grid(m, (-r, r), (-r, r), n, n)?;
        return emit(&s.cfg, &grid_csv(&pts));
    }
    let rho = spectral::spectral_radius(m)?;
    let bound = match &s.src {
        Source::Model(model) => Some(spectral::jblock_mixing_bound(model, &s.theta, eps)?),
        Source::Data(_) => None,
    };
    let report = AnalyzeReport {
        model: s.src.name().to_string(),
        theta: s.theta,
        dim: c.dim(),
        eps,
        rho,
        theoretical_rate: -rho.ln(),
        rho_eps: spectral::pseudospectral_radius(m, eps)?,
        eigenvector_condition: spectral::eigenvector_condition_number(m)?,
        eigenvalues: spectral::eigenvalues(m)?.iter().map(|z| [z.re, z.im]).collect(),
        j_radii: bound.as_ref().map(|b| b.j_radii.clone()),
        jblock_bound: bound.as_ref().map(|b| b.rho_eps),
        perturbation_term: bound.as_ref().map(|b| b.perturbation_term),
        matrix: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    let text = match s.cfg.format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut t = String::from("quantity,value\n");
            let mut row = |k: &str, v: f64| writeln!(t, "{k},{v}").expect("string write");
            row("rho", report.rho);
            row("theoretical_rate", report.theoretical_rate);
            row("eps", report.eps);
            row("rho_eps", report.rho_eps);
            row("eigenvector_condition", report.eigenvector_condition);
            if let Some(b) = report.jblock_bound {
                row("jblock_bound", b);
            }
            if let Some(p) = report.perturbation_term {
                row("perturbation_term", p);
            }
            for (i, r) in report.j_radii.iter().flatten().enumerate() {
                row(&format!("rho_j{}", i + 1), *r);
            }
            t
        }
    };
    emit(&s.cfg, &text)
}

fn grid_csv(pts: &[GridPoint]) -> String {
    let mut t = String::from("re,im,sigma_min\n");
    for p in pts {
        writeln!(t, "{},{},{}", p.re, p.im, p.sigma_min).expect("string write");
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    RhoJ1,
    JblockBound,
    RhoC,
}

#[derive(Args, Clone, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: Common,

    /// Tuner config JSON; flags below override it.
    #[arg(long, value_name = "PATH")]
    pub tune_config: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,

    /// Constraint `rho(J_d) <= 1 - c sqrt(mu / L)`.
    #[arg(long)]
    pub constraint_c: Option<f64>,

    #[arg(long)]
    pub refine_rounds: Option<usize>,

    /// Exchange the objective and constraint blocks.
    #[arg(long)]
    pub swap_indices: bool,

    /// `lin:START:STOP:STEP`, `log:START:STOP:POINTS` or `v1,v2,...`.
    #[arg(long, value_parser = parse_axis, allow_hyphen_values = true)]
    pub alpha_grid: Option<Axis>,

    #[arg(long, value_parser = parse_axis, allow_hyphen_values = true)]
    pub beta_grid: Option<Axis>,

    #[arg(long, value_parser = parse_axis, allow_hyphen_values = true)]
    pub gamma_grid: Option<Axis>,
}

/// Grid search for hyper-parameters on a synthetic model.
pub fn tune(args: &TuneArgs) -> Result<(), CliError> {
    let mut cfg = args.common.experiment()?;
    let src = Source::load(&cfg)?;
    let model = src.model()?;
    let mut tc = match &args.tune_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            TuneConfig::from_json_str(&text)?
        }
        None => match &cfg.theta {
            Some(ThetaChoice::Tuned { config: Some(c) }) => c.clone(),
            _ => TuneConfig::for_model(model),
        },
    };
    if let Some(o) = args.objective {
        tc.objective = match o {
            ObjectiveArg::RhoJ1 => Objective::RhoJ1,
            ObjectiveArg::JblockBound => Objective::JblockBound,
            ObjectiveArg::RhoC => Objective::RhoC,
        };
    }
    if let Some(c) = args.constraint_c {
        tc.constraint_c = c;
    }
    if let Some(r) = args.refine_rounds {
        tc.refine_rounds = r;
    }
    if args.swap_indices {
        tc.swap_indices = true;
    }
    for (axis, flag) in [
        (&mut tc.alpha, &args.alpha_grid),
        (&mut tc.beta, &args.beta_grid),
        (&mut tc.gamma, &args.gamma_grid),
    ] {
        if let Some(a) = flag {
            *axis = a.clone();
        }
    }
    if cfg.eps.is_some() {
        tc.eps = cfg.eps;
    }
    tc.validate()?;
    let result = tuner::tune(model, &tc)?;
    if !result.feasible {
        log::warn!("no grid point meets the constraint; reporting the least violating one");
    }
    cfg.theta = Some(ThetaChoice::Tuned { config: Some(tc) });
    let text = match cfg.format {
        Format::Json => json(&result)?,
        Format::Csv => tune_csv(&result),
    };
    emit(&cfg, &text)
}

fn tune_csv(r: &TuneResult) -> String {
    format!(
        "alpha,beta,gamma,objective_value,constraint_value,constraint_bound,feasible\n{},{},{},{},{},{},{}\n",
        r.theta.alpha,
        r.theta.beta,
        r.theta.gamma,
        r.objective_value,
        r.constraint_value,
        r.constraint_bound,
        r.feasible
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Benchmark {
    Gaussian,
    UniformRademacher,
}

#[derive(Args, Clone, Debug)]
pub struct TableArgs {
    #[command(flatten)]
    pub common: Common,

    /// Use the four reference configurations of a model family.
    #[arg(long, value_enum)]
    pub benchmark: Option<Benchmark>,
}

/// Empirical and theoretical rates for a list of configurations.
pub fn table(args: &TableArgs) -> Result<(), CliError> {
    let common = &args.common;
    let mut cfg = common.experiment()?;
    if let Some(b) = args.benchmark {
        if cfg.model.is_none() && cfg.dataset.is_none() {
            cfg.model = Some(match b {
                Benchmark::Gaussian => ModelChoice::Gaussian {
                    mu: GAUSSIAN_BENCHMARK_MU,
                },
                Benchmark::UniformRademacher => ModelChoice::UniformRademacher {
                    kappa: UNIFORM_RADEMACHER_BENCHMARK_KAPPA,
                },
            });
        }
    }
    let src = Source::load(&cfg)?;
    let single = common.preset.is_some() || cfg.theta.is_some();
    let family = match (args.benchmark, &cfg.model) {
        (Some(b), _) => Some(b),
        (None, _) if single => None,
        (None, Some(ModelChoice::Gaussian { .. })) => Some(Benchmark::Gaussian),
        (None, Some(ModelChoice::UniformRademacher { .. })) => Some(Benchmark::UniformRademacher),
        (None, _) => {
            return Err(CliError::Usage(
                "give --alpha/--beta/--gamma, --preset or --benchmark for this model".into(),
            ))
        }
    };
    let thetas = match family {
        Some(Benchmark::Gaussian) => benchmark_thetas(&GAUSSIAN_BENCHMARK),
        Some(Benchmark::UniformRademacher) => benchmark_thetas(&UNIFORM_RADEMACHER_BENCHMARK),
        None => {
            let t = src.theta(common, &cfg)?;
            cfg.theta = Some(explicit(&t));
            vec![t]
        }
    };
    let labels = src.labels(common, &cfg)?;
    cfg.labels = labels.clone();
    let sampler = src.sampler(&labels)?;
    let opts = TableOptions {
        n: cfg.n,
        runs: cfg.runs,
        seed: cfg.seed,
        burn_in: cfg.burn_in,
        w0: cfg.w0.clone(),
    };
    let theory = |t: &Theta| -> sagd_mixing::Result<f64> {
        match &src {
            Source::Model(m) => sagd_mixing::contraction::build_contraction_matrix(m, t)?.spectral_radius(),
            Source::Data(d) => d.contraction(t)?.spectral_radius(),
        }
    };
    let rows = run_table_with(sampler.as_ref(), src.name(), &theory, &thetas, &opts)?;
    for r in &rows {
        if !r.notes.is_empty() {
            log::warn!(
                "alpha={} beta={} gamma={}: {}",
                r.theta.alpha,
                r.theta.beta,
                r.theta.gamma,
                r.notes
            );
        }
    }
    let text = match cfg.format {
        Format::Csv => table_csv_string(&rows.iter().map(TableRecord::from).collect::<Vec<_>>())?,
        Format::Json => json(&rows)?,
    };
    emit(&cfg, &text)?;
    let bad: Vec<&RateRow> = rows.iter().filter(|r| r.diverged).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Diverged(format!(
            "{} of {} rows are dominated by divergent runs",
            bad.len(),
            rows.len()
        )))
    }
}

#[derive(Args, Clone, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,

    /// Steps for the second-moment and power checks.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,

    /// Monte Carlo trials for the second-moment check.
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Oracle and lemma checks for one model and configuration.
pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let s = Setup::new(&args.common)?;
    let model = s.src.model()?;
    let (theta, eps, n) = (s.theta, s.eps(), args.steps);
    let c = s.src.contraction(&theta)?;
    let mut checks = Vec::new();

    let exact = reconstruct_mn(model, &evolve_gram(&c, n)?)?;
    let mc = mc_estimate_mn(model, &theta, n, args.trials, s.cfg.seed)?;
    let worst = exact
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let (diff, se) = ((mc.mean[k] - e).abs(), mc.stderr[k]);
            if se > 0.0 {
                diff / se
            } else if diff <= 1e-12 * (1.0 + e.abs()) {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "second moment vs Monte Carlo",
        pass: worst <= 5.0,
        detail: format!("n = {n}, {} trials, max |z| = {worst:.2}", args.trials),
    });

    let rho = spectral::spectral_radius(c.mat())?;
    let rho_eps = spectral::pseudospectral_radius(c.mat(), eps)?;
    checks.push(Check {
        name: "rho <= rho_eps",
        pass: rho <= rho_eps + 1e-12,
        detail: format!("rho = {rho:.6}, rho_eps = {rho_eps:.6}, eps = {eps:.4}"),
    });

    let bound = spectral::jblock_mixing_bound(model, &theta, eps)?;
    checks.push(Check {
        name: "rho_eps <= block bound",
        pass: rho_eps <= bound.rho_eps + 1e-3,
        detail: format!("block bound = {:.6}", bound.rho_eps),
    });

    let powers = (1..=n.max(1) * 10)
        .map(|k| spectral::power_norm_bound_check(c.mat(), eps, k))
        .collect::<sagd_mixing::Result<Vec<_>>>()?;
    let failed = powers.iter().filter(|p| !p.holds).count();
    checks.push(Check {
        name: "||C^k|| <= rho_eps^(k+1) / eps",
        pass: failed == 0,
        detail: format!("k = 1..={}, {failed} violations", powers.len()),
    });

    let w_star: Vec<f64> = (0..model.dim()).map(|i| 1.0 - 0.5 * i as f64).collect();
    let real = Synthetic::new(model, LabelModel::Realizable { w_star: w_star.clone() })?;
    let run = run_chain(
        &real,
        &theta,
        &ChainState::at_rest(w_star.clone()),
        1000,
        s.cfg.seed,
        0,
        1,
    )?;
    let moved = run.states.iter().any(|st| st.w_curr != w_star || st.w_prev != w_star);
    checks.push(Check {
        name: "realizable fixed point",
        pass: !moved,
        detail: "1000 steps from (w*, w*)".into(),
    });

    let noisy = Synthetic::new(
        model,
        LabelModel::Noisy {
            w_star,
            noise: sagd_mixing::ScalarLaw::Gaussian { variance: 1.0 },
        },
    )?;
    let i0 = ChainState::at_rest(vec![1.0; model.dim()]);
    let i1 = ChainState::zeros(model.dim());
    let zero = Synthetic::zero_labels(model);
    let a = run_coupled(&zero, model.name(), &theta, &i0, &i1, 500, s.cfg.seed, 0)?;
    let b = run_coupled(&noisy, model.name(), &theta, &i0, &i1, 500, s.cfg.seed, 0)?;
    let same = a
        .sq_dist
        .iter()
        .zip(&b.sq_dist)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    checks.push(Check {
        name: "coupling is label independent",
        pass: same,
        detail: "zero vs noisy labels, 500 steps".into(),
    });

    for ch in &checks {
        eprintln!("[{}] {}: {}", if ch.pass { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    if s.cfg.out.is_some() || s.cfg.format == Format::Json {
        emit(&s.cfg, &json(&checks)?)?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct IngestReport {
    #[serde(flatten)]
    summary: EmpiricalSummary,
    mu: f64,
}

/// Standardises a dataset and reports its moments.
pub fn ingest(common: &Common) -> Result<(), CliError> {
    let cfg = common.experiment()?;
    if cfg.dataset.is_none() {
        return Err(CliError::Usage("ingest needs --dataset and --target".into()));
    }
    let Source::Data(d) = Source::load(&cfg)? else {
        unreachable!("dataset configured")
    };
    let summary = d.summary();
    let text = match cfg.format {
        Format::Json => json(&IngestReport { mu: d.mu(), summary })?,
        Format::Csv => {
            let mut t = String::from("index,sigma,sigma_effective,kurt\n");
            for (i, ((s, se), k)) in summary
                .sigma
                .iter()
                .zip(&summary.sigma_effective)
                .zip(&summary.kurt)
                .enumerate()
            {
                writeln!(t, "{i},{s},{se},{k}").expect("string write");
            }
            t
        }
    };
    emit(&cfg, &text)
}
