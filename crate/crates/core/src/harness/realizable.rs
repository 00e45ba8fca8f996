use serde::{Deserialize, Serialize};

use super::table::mean_coupled_trajectory;
use crate::chains::{ChainState, LabelModel, Synthetic, Theta};
use crate::contraction::{build_contraction_matrix, w2_bound_from_radius};
use crate::error::{Error, Result};
use crate::moments::MomentSpec;
use crate::spectral;

/// Distance to the fixed point `(w*, w*)` in the realizable case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizableResult {
    pub theta: Theta,
    /// `E ||u_k - (w*, w*)||^2` over non-divergent runs, `k = 0..=n`.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `18 d^{3/2} c0 rho_eps(C)^{k+1} / eps` with `c0` the initial distance.
    pub envelope: Vec<f64>,
    pub rho_eps: f64,
    pub eps: f64,
    pub runs: usize,
    pub diverged_runs: usize,
    pub diverged: bool,
}

/// Runs SAGD on realizable labels `y = x^T w*` from `init`.
///
/// With labels exactly realizable, `(w*, w*)` is a fixed point of every
/// step, so it is coupled against `init` and the squared coupling distance is
/// the distance to the limit.
#[allow(clippy::too_many_arguments)]
pub fn run_realizable(
    model: &MomentSpec,
    w_star: &[f64],
    theta: &Theta,
    init: &ChainState,
    n: usize,
    runs: usize,
    seed: u64,
    eps: f64,
) -> Result<RealizableResult> {
    if w_star.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: w_star.len(),
        });
    }
    let source = Synthetic::new(
        model,
        LabelModel::Realizable {
            w_star: w_star.to_vec(),
        },
    )?;
    let fixed = ChainState::at_rest(w_star.to_vec());
    let traj = mean_coupled_trajectory(&source, model.name(), theta, init, &fixed, n, runs, seed, 0.0)?;
    let c = build_contraction_matrix(model, theta)?;
    let rho_eps = spectral::pseudospectral_radius(c.mat(), eps)?;
    let c0 = init.sq_dist(&fixed);
    let envelope = (0..=n)
        .map(|k| w2_bound_from_radius(model.dim(), rho_eps, eps, k, c0))
        .collect::<Result<Vec<_>>>()?;
    Ok(RealizableResult {
        theta: *theta,
        mean: traj.mean,
        stderr: traj.stderr,
        envelope,
        rho_eps,
        eps,
        runs,
        diverged_runs: traj.diverged_runs,
        diverged: 2 * traj.diverged_runs > runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fit::fit_exponential_rate;
    use crate::tuner::{preset_theta, Preset};

    #[test]
    fn start_at_fixed_point_stays_there() {
        let m = MomentSpec::gaussian_two_scale(0.05).unwrap();
        let w = [0.3, -0.7];
        let t = Theta::new(2.0, 0.9, 0.1).unwrap();
        let r = run_realizable(&m, &w, &t, &ChainState::at_rest(w.to_vec()), 500, 3, 1, 0.01).unwrap();
        assert!(r.mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preset_reaches_guaranteed_rate() {
        let mu = 0.01;
        let m = MomentSpec::gaussian_two_scale(mu).unwrap();
        let t = preset_theta(Preset::Gaussian { mu }).unwrap();
        let r = run_realizable(
            &m,
            &[1.0, -1.0],
            &t,
            &ChainState::zeros(2),
            1500,
            5,
            42,
            0.05 * mu.sqrt(),
        )
        .unwrap();
        let fit = fit_exponential_rate(&r.mean, 0.1).unwrap();
        assert!(fit.rate >= mu.sqrt() / 5.0, "{}", fit.rate);
        assert!(r.envelope.windows(2).all(|w| w[1] <= w[0]) || r.rho_eps >= 1.0);
    }
}
