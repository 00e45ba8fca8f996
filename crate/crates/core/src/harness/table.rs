use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponential_rate, DEFAULT_BURN_IN};
use crate::chains::{run_coupled, ChainState, SampleSource, Synthetic, Theta};
use crate::contraction::build_contraction_matrix;
use crate::error::{Error, Result};
use crate::moments::MomentSpec;

/// Options shared by every row of a rate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    pub n: usize,
    pub runs: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// First chain starts at `(w0, w0)`, the second at the origin. All-ones when absent.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
}

fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            n: 1000,
            runs: 10,
            seed: 42,
            burn_in: DEFAULT_BURN_IN,
            w0: None,
        }
    }
}

impl TableOptions {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        if self.n < 10 {
            return Err(Error::InvalidParameter("n must be at least 10 for rate fitting".into()));
        }
        Ok(())
    }

    fn inits(&self, d: usize) -> Result<(ChainState, ChainState)> {
        let w0 = self.w0.clone().unwrap_or_else(|| vec![1.0; d]);
        if w0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: w0.len(),
            });
        }
        Ok((ChainState::at_rest(w0), ChainState::zeros(d)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub theta: Theta,
    /// Fitted `r` in `exp(-r n)` for the mean squared distance. NaN when unavailable.
    pub empirical_rate: f64,
    /// Spread of per-run fitted rates over `sqrt(runs)`. NaN with fewer than two runs.
    pub empirical_stderr: f64,
    /// `-ln rho(C)`.
    pub theoretical_rate: f64,
    pub runs: usize,
    pub diverged_runs: usize,
    /// More than half of the runs diverged.
    pub diverged: bool,
    #[serde(default)]
    pub notes: String,
}

/// Mean squared distance of coupled chains over independent runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub theta: Theta,
    /// Mean over non-divergent runs, steps `0..=n`.
    pub mean: Vec<f64>,
    /// Standard error of the mean at every step.
    pub stderr: Vec<f64>,
    pub runs: usize,
    pub diverged_runs: usize,
    /// Fitted rate of each non-divergent run, where a fit was possible.
    pub run_rates: Vec<f64>,
}

/// Runs `runs` coupled pairs; run `r` uses stream `r` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn mean_coupled_trajectory(
    source: &dyn SampleSource,
    model_id: &str,
    theta: &Theta,
    init0: &ChainState,
    init1: &ChainState,
    n: usize,
    runs: usize,
    seed: u64,
    burn_in: f64,
) -> Result<MeanTrajectory> {
    theta.validate()?;
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    let results: Vec<Result<Vec<f64>>> = (0..runs as u64)
        .into_par_iter()
        .map(|r| run_coupled(source, model_id, theta, init0, init1, n, seed, r).map(|t| t.sq_dist))
        .collect();
    let mut ok = Vec::with_capacity(runs);
    let mut diverged_runs = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(Error::Divergence { .. }) => diverged_runs += 1,
            Err(e) => return Err(e),
        }
    }
    let k = ok.len() as f64;
    let mut mean = vec![f64::NAN; n + 1];
    let mut stderr = vec![f64::NAN; n + 1];
    if !ok.is_empty() {
        for step in 0..=n {
            let m = ok.iter().map(|v| v[step]).sum::<f64>() / k;
            mean[step] = m;
            if ok.len() > 1 {
                let var = ok.iter().map(|v| (v[step] - m).powi(2)).sum::<f64>() / (k - 1.0);
                stderr[step] = (var / k).sqrt();
            }
        }
    }
    let run_rates = ok
        .iter()
        .filter_map(|v| fit_exponential_rate(v, burn_in).ok().map(|f| f.rate))
        .collect();
    Ok(MeanTrajectory {
        theta: *theta,
        mean,
        stderr,
        runs,
        diverged_runs,
        run_rates,
    })
}

/// Rate table on an arbitrary sample source; `theory` maps `theta` to `rho(C)`.
pub fn run_table_with(
    source: &dyn SampleSource,
    model_id: &str,
    theory: &dyn Fn(&Theta) -> Result<f64>,
    configs: &[Theta],
    opts: &TableOptions,
) -> Result<Vec<RateRow>> {
    opts.validate()?;
    let (i0, i1) = opts.inits(source.dim())?;
    configs
        .iter()
        .map(|theta| {
            let rho = theory(theta)?;
            let traj = mean_coupled_trajectory(
                source,
                model_id,
                theta,
                &i0,
                &i1,
                opts.n,
                opts.runs,
                opts.seed,
                opts.burn_in,
            )?;
            let mut notes = Vec::new();
            let empirical_rate = if traj.diverged_runs < traj.runs {
                match fit_exponential_rate(&traj.mean, opts.burn_in) {
                    Ok(f) => f.rate,
                    Err(e) => {
                        notes.push(format!("fit: {e}"));
                        f64::NAN
                    }
                }
            } else {
                f64::NAN
            };
            let empirical_stderr = if traj.run_rates.len() >= 2 {
                let k = traj.run_rates.len() as f64;
                let m = traj.run_rates.iter().sum::<f64>() / k;
                let var = traj.run_rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                f64::NAN
            };
            if traj.diverged_runs > 0 {
                notes.push(format!("{} of {} runs diverged", traj.diverged_runs, traj.runs));
            }
            Ok(RateRow {
                theta: *theta,
                empirical_rate,
                empirical_stderr,
                theoretical_rate: -rho.ln(),
                runs: traj.runs,
                diverged_runs: traj.diverged_runs,
                diverged: 2 * traj.diverged_runs > traj.runs,
                notes: notes.join("; "),
            })
        })
        .collect()
}

/// Rate table for a synthetic model with zero labels.
pub fn run_table(model: &MomentSpec, configs: &[Theta], opts: &TableOptions) -> Result<Vec<RateRow>> {
    let source = Synthetic::zero_labels(model);
    let theory = |t: &Theta| build_contraction_matrix(model, t)?.spectral_radius();
    run_table_with(&source, model.name(), &theory, configs, opts)
}

/// `(gamma, beta, alpha)` triples, in that order, of the Gaussian benchmark.
pub const GAUSSIAN_BENCHMARK: [(f64, f64, f64); 4] =
    [(0.1, 0.95, 2.0), (0.1, 0.99, 2.0), (0.1, 0.95, 3.0), (0.01, 0.95, 2.0)];
pub const GAUSSIAN_BENCHMARK_MU: f64 = 0.05;

/// `(gamma, beta, alpha)` triples of the uniform-Rademacher benchmark.
pub const UNIFORM_RADEMACHER_BENCHMARK: [(f64, f64, f64); 4] = [
    (2e-3, 0.95, 2.0),
    (2e-3, 0.99, 2.0),
    (2e-3, 0.95, 3.0),
    (4e-4, 0.95, 2.0),
];
pub const UNIFORM_RADEMACHER_BENCHMARK_KAPPA: f64 = 0.05;

pub fn benchmark_thetas(triples: &[(f64, f64, f64)]) -> Vec<Theta> {
    triples
        .iter()
        .map(|&(gamma, beta, alpha)| Theta { alpha, beta, gamma })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theoretical_column_is_pure() {
        let m = MomentSpec::gaussian_two_scale(GAUSSIAN_BENCHMARK_MU).unwrap();
        let cfg = benchmark_thetas(&GAUSSIAN_BENCHMARK);
        let opts = TableOptions {
            n: 100,
            runs: 2,
            ..TableOptions::default()
        };
        let a = run_table(&m, &cfg, &opts).unwrap();
        let b = run_table(&m, &cfg, &opts).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.theoretical_rate.is_finite() && r.theoretical_rate > 0.0);
            assert!(r.empirical_stderr.is_finite());
        }
    }

    #[test]
    fn sgd_row_matches_sgd_contraction() {
        let m = MomentSpec::gaussian_two_scale(0.2).unwrap();
        let t = Theta::sgd(0.3).unwrap();
        let opts = TableOptions {
            n: 400,
            runs: 200,
            ..TableOptions::default()
        };
        let row = &run_table(&m, &[t], &opts).unwrap()[0];
        let rho = build_contraction_matrix(&m, &t).unwrap().spectral_radius().unwrap();
        assert!(
            (row.empirical_rate + rho.ln()).abs() < 0.15 * (-rho.ln()),
            "{row:?} vs {}",
            -rho.ln()
        );
    }

    #[test]
    fn divergent_rows_are_flagged_not_fatal() {
        let m = MomentSpec::gaussian_two_scale(0.5).unwrap();
        let opts = TableOptions {
            n: 2000,
            runs: 3,
            ..TableOptions::default()
        };
        let rows = run_table(&m, &[Theta::sgd(5.0).unwrap(), Theta::sgd(0.1).unwrap()], &opts).unwrap();
        assert!(rows[0].diverged);
        assert!(rows[0].empirical_rate.is_nan());
        assert!(!rows[1].diverged);
    }

    #[test]
    fn options_are_validated() {
        let m = MomentSpec::gaussian_two_scale(0.5).unwrap();
        let t = [Theta::sgd(0.1).unwrap()];
        let bad_runs = TableOptions {
            runs: 0,
            ..TableOptions::default()
        };
        assert!(run_table(&m, &t, &bad_runs).is_err());
        let bad_w0 = TableOptions {
            w0: Some(vec![1.0]),
            ..TableOptions::default()
        };
        assert!(run_table(&m, &t, &bad_w0).is_err());
    }
}
