//! SGD and SAGD iterations on least squares, single and coupled.
//!
//! A SAGD step from `(w, w_prev)` on sample `(x, y)`:
//!
//! ```text
//! e      = w + alpha (w - w_prev)
//! w_next = w + beta (w - w_prev) - gamma (x (x^T e - y) + ridge e)
//! ```
//!
//! With `alpha = beta = 0` this is plain SGD.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{MomentSpec, ScalarLaw};
use crate::rng::{self, StreamRng};

/// Norm beyond which an iterate is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e150;

/// Hyper-parameters `(alpha, beta, gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Theta {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let t = Theta { alpha, beta, gamma };
        t.validate()?;
        Ok(t)
    }

    /// Plain SGD with step size `gamma`.
    pub fn sgd(gamma: f64) -> Result<Self> {
        Self::new(0.0, 0.0, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && (0.0..1.0).contains(&self.beta)) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Lifted state `(w_curr, w_prev)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub w_curr: Vec<f64>,
    pub w_prev: Vec<f64>,
}

impl ChainState {
    pub fn new(w_curr: Vec<f64>, w_prev: Vec<f64>) -> Result<Self> {
        if w_curr.len() != w_prev.len() {
            return Err(Error::DimensionMismatch {
                expected: w_curr.len(),
                got: w_prev.len(),
            });
        }
        Ok(ChainState { w_curr, w_prev })
    }

    /// State with no momentum: `w_curr = w_prev = w`.
    pub fn at_rest(w: Vec<f64>) -> Self {
        ChainState {
            w_prev: w.clone(),
            w_curr: w,
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self::at_rest(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.w_curr.len()
    }

    /// Squared Euclidean distance between the lifted states.
    pub fn sq_dist(&self, other: &ChainState) -> f64 {
        sq_diff(&self.w_curr, &other.w_curr) + sq_diff(&self.w_prev, &other.w_prev)
    }

    pub fn lifted(&self) -> Vec<f64> {
        self.w_curr.iter().chain(&self.w_prev).copied().collect()
    }

    fn diverged(&self) -> bool {
        !self
            .w_curr
            .iter()
            .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD)
    }
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// One SGD step `w - gamma x (x^T w - y)`.
pub fn sgd_step(w: &[f64], x: &[f64], y: f64, gamma: f64) -> Result<Vec<f64>> {
    check_dim(w.len(), x.len())?;
    let r = dot(x, w) - y;
    Ok(w.iter().zip(x).map(|(wi, xi)| wi - gamma * (xi * r)).collect())
}

/// One SAGD step on the lifted state.
pub fn sagd_step(state: &ChainState, x: &[f64], y: f64, theta: &Theta) -> Result<ChainState> {
    check_dim(state.dim(), x.len())?;
    check_dim(state.dim(), state.w_prev.len())?;
    let mut next = state.clone();
    let mut scratch = vec![0.0; state.dim()];
    step_in_place(&mut next, &mut scratch, x, y, theta, 0.0);
    Ok(next)
}

/// In-place SAGD step; `scratch` holds the extrapolated point.
fn step_in_place(s: &mut ChainState, e: &mut [f64], x: &[f64], y: f64, theta: &Theta, ridge: f64) {
    let Theta { alpha, beta, gamma } = *theta;
    for ((ei, wc), wp) in e.iter_mut().zip(&s.w_curr).zip(&s.w_prev) {
        *ei = wc + alpha * (wc - wp);
    }
    let r = dot(x, e) - y;
    for (((wp, wc), xi), ei) in s.w_prev.iter_mut().zip(&s.w_curr).zip(x).zip(e.iter()) {
        // w_prev receives the new iterate, then the buffers are swapped.
        *wp = wc + beta * (wc - *wp) - gamma * (xi * r + ridge * ei);
    }
    std::mem::swap(&mut s.w_curr, &mut s.w_prev);
}

/// The `2d x 2d` random matrix `A` with `[w_next; w_curr] = A [w_curr; w_prev]`
/// when the labels are zero.
pub fn build_a_matrix(x: &[f64], theta: &Theta) -> DMatrix<f64> {
    let d = x.len();
    let Theta { alpha, beta, gamma } = *theta;
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let xx = x[i] * x[j];
            let id = if i == j { 1.0 } else { 0.0 };
            a[(i, j)] = (1.0 + beta) * id - (1.0 + alpha) * gamma * xx;
            a[(i, d + j)] = alpha * gamma * xx - beta * id;
        }
        a[(d + i, i)] = 1.0;
    }
    a
}

/// Label model for synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelModel {
    /// `y = 0`.
    Zero,
    /// `y = x^T w_star`.
    Realizable { w_star: Vec<f64> },
    /// `y = x^T w_star + noise`, with the noise drawn from its own stream.
    Noisy { w_star: Vec<f64>, noise: ScalarLaw },
}

impl LabelModel {
    fn w_star(&self) -> Option<&[f64]> {
        match self {
            LabelModel::Zero => None,
            LabelModel::Realizable { w_star } | LabelModel::Noisy { w_star, .. } => Some(w_star),
        }
    }
}

/// Source of samples `(x, y)`. Inputs and labels use separate streams so that
/// changing the label law never changes the input sequence.
pub trait SampleSource: Sync {
    fn dim(&self) -> usize;

    /// Fills `x` and returns the label.
    fn draw(&self, inputs: &mut StreamRng, labels: &mut StreamRng, x: &mut [f64]) -> f64;

    /// L2 penalty added to the objective.
    fn ridge(&self) -> f64 {
        0.0
    }
}

/// Synthetic data: inputs from a [`MomentSpec`], labels from a [`LabelModel`].
#[derive(Clone, Debug)]
pub struct Synthetic<'a> {
    model: &'a MomentSpec,
    labels: LabelModel,
}

impl<'a> Synthetic<'a> {
    pub fn new(model: &'a MomentSpec, labels: LabelModel) -> Result<Self> {
        if let Some(w) = labels.w_star() {
            check_dim(model.dim(), w.len())?;
        }
        if let LabelModel::Noisy { noise, .. } = &labels {
            noise.validate()?;
        }
        Ok(Synthetic { model, labels })
    }

    pub fn zero_labels(model: &'a MomentSpec) -> Self {
        Synthetic {
            model,
            labels: LabelModel::Zero,
        }
    }
}

impl SampleSource for Synthetic<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn draw(&self, inputs: &mut StreamRng, labels: &mut StreamRng, x: &mut [f64]) -> f64 {
        let d = self.model.dim();
        if self.model.has_identity_basis() {
            self.model.sample_coords(inputs, x);
        } else {
            let mut scratch = [0.0; 16];
            if d <= scratch.len() {
                self.model.sample_input_with(inputs, &mut scratch[..d], x);
            } else {
                let mut v = vec![0.0; d];
                self.model.sample_input_with(inputs, &mut v, x);
            }
        }
        match &self.labels {
            LabelModel::Zero => 0.0,
            LabelModel::Realizable { w_star } => dot(x, w_star),
            LabelModel::Noisy { w_star, noise } => dot(x, w_star) + noise.sample(labels),
        }
    }
}

/// Iterates recorded every `stride` steps (step 0 included) plus the final state.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    pub theta: Theta,
    pub steps: Vec<usize>,
    pub states: Vec<ChainState>,
    pub final_state: ChainState,
}

/// Runs one chain for `n` steps on run stream `run` of `seed`.
pub fn run_chain(
    source: &dyn SampleSource,
    theta: &Theta,
    init: &ChainState,
    n: usize,
    seed: u64,
    run: u64,
    stride: usize,
) -> Result<ChainRun> {
    theta.validate()?;
    check_dim(source.dim(), init.dim())?;
    check_dim(init.dim(), init.w_prev.len())?;
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let (mut xr, mut yr) = rng::run_streams(seed, run);
    let d = source.dim();
    let ridge = source.ridge();
    let mut x = vec![0.0; d];
    let mut e = vec![0.0; d];
    let mut s = init.clone();
    let mut steps = vec![0];
    let mut states = vec![s.clone()];
    for k in 1..=n {
        let y = source.draw(&mut xr, &mut yr, &mut x);
        step_in_place(&mut s, &mut e, &x, y, theta, ridge);
        if s.diverged() {
            return Err(Error::Divergence { step: k });
        }
        if k % stride == 0 {
            steps.push(k);
            states.push(s.clone());
        }
    }
    Ok(ChainRun {
        theta: *theta,
        steps,
        states,
        final_state: s,
    })
}

/// Two chains driven by the same samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrajectory {
    pub theta: Theta,
    pub model_id: String,
    pub seed: u64,
    pub run: u64,
    /// Squared lifted distance after `k` steps, for `k = 0..=n`.
    pub sq_dist: Vec<f64>,
    pub final0: ChainState,
    pub final1: ChainState,
}

impl CoupledTrajectory {
    pub fn steps(&self) -> usize {
        self.sq_dist.len() - 1
    }
}

/// Runs two chains from `init0` and `init1` on shared samples.
///
/// The difference of the two chains obeys the same recursion with zero
/// labels, so `sq_dist` is computed from that recursion directly. It is
/// therefore independent of the label model, bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    source: &dyn SampleSource,
    model_id: &str,
    theta: &Theta,
    init0: &ChainState,
    init1: &ChainState,
    n: usize,
    seed: u64,
    run: u64,
) -> Result<CoupledTrajectory> {
    theta.validate()?;
    let d = source.dim();
    for s in [init0, init1] {
        check_dim(d, s.w_curr.len())?;
        check_dim(d, s.w_prev.len())?;
    }
    let ridge = source.ridge();
    let (mut xr, mut yr) = rng::run_streams(seed, run);
    let mut x = vec![0.0; d];
    let mut e = vec![0.0; d];
    let mut s0 = init0.clone();
    let mut s1 = init1.clone();
    let mut diff = ChainState {
        w_curr: init0.w_curr.iter().zip(&init1.w_curr).map(|(a, b)| a - b).collect(),
        w_prev: init0.w_prev.iter().zip(&init1.w_prev).map(|(a, b)| a - b).collect(),
    };
    let mut sq_dist = Vec::with_capacity(n + 1);
    sq_dist.push(dot(&diff.w_curr, &diff.w_curr) + dot(&diff.w_prev, &diff.w_prev));
    for k in 1..=n {
        let y = source.draw(&mut xr, &mut yr, &mut x);
        step_in_place(&mut s0, &mut e, &x, y, theta, ridge);
        step_in_place(&mut s1, &mut e, &x, y, theta, ridge);
        step_in_place(&mut diff, &mut e, &x, 0.0, theta, ridge);
        if s0.diverged() || s1.diverged() || diff.diverged() {
            return Err(Error::Divergence { step: k });
        }
        sq_dist.push(dot(&diff.w_curr, &diff.w_curr) + dot(&diff.w_prev, &diff.w_prev));
    }
    Ok(CoupledTrajectory {
        theta: *theta,
        model_id: model_id.to_string(),
        seed,
        run,
        sq_dist,
        final0: s0,
        final1: s1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn theta() -> Theta {
        Theta::new(2.0, 0.95, 0.1).unwrap()
    }

    #[test]
    fn theta_validation() {
        assert!(Theta::new(-0.1, 0.5, 0.1).is_err());
        assert!(Theta::new(0.0, 1.0, 0.1).is_err());
        assert!(Theta::new(0.0, 0.5, 0.0).is_err());
        assert!(Theta::new(0.0, 0.0, 0.1).is_ok());
    }

    #[test]
    fn sagd_with_zero_momentum_is_sgd() {
        let w = vec![0.3, -1.2];
        let x = [0.7, 2.0];
        let y = 0.4;
        let t = Theta::sgd(0.05).unwrap();
        let a = sagd_step(&ChainState::new(w.clone(), vec![5.0, 5.0]).unwrap(), &x, y, &t).unwrap();
        let b = sgd_step(&w, &x, y, 0.05).unwrap();
        assert_eq!(a.w_curr, b);
        assert_eq!(a.w_prev, w);
    }

    #[test]
    fn step_matches_hand_computation() {
        let s = ChainState::new(vec![1.0], vec![0.5]).unwrap();
        let t = theta();
        let next = sagd_step(&s, &[2.0], 1.0, &t).unwrap();
        let e = 1.0 + 2.0 * 0.5;
        let expect = 1.0 + 0.95 * 0.5 - 0.1 * 2.0 * (2.0 * e - 1.0);
        assert!((next.w_curr[0] - expect).abs() < 1e-15);
        assert_eq!(next.w_prev, vec![1.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = ChainState::zeros(2);
        assert!(matches!(
            sagd_step(&s, &[1.0], 0.0, &theta()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn realizable_fixed_point_is_exact() {
        let m = MomentSpec::gaussian_two_scale(0.05).unwrap();
        let w_star = vec![0.37, -2.1];
        let src = Synthetic::new(&m, LabelModel::Realizable { w_star: w_star.clone() }).unwrap();
        let run = run_chain(&src, &theta(), &ChainState::at_rest(w_star.clone()), 2000, 1, 0, 500).unwrap();
        assert_eq!(run.final_state, ChainState::at_rest(w_star));
    }

    #[test]
    fn divergence_reports_step() {
        let m = MomentSpec::gaussian(&[1.0]).unwrap();
        let src = Synthetic::zero_labels(&m);
        let t = Theta::sgd(50.0).unwrap();
        let err = run_chain(&src, &t, &ChainState::at_rest(vec![1.0]), 10_000, 3, 0, 1).unwrap_err();
        match err {
            Error::Divergence { step } => assert!(step > 1 && step < 10_000),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coupled_is_label_independent() {
        let m = MomentSpec::uniform_rademacher(0.05).unwrap();
        let t = Theta::new(2.0, 0.95, 2e-3).unwrap();
        let i0 = ChainState::at_rest(vec![1.0, 1.0]);
        let i1 = ChainState::zeros(2);
        let plain = Synthetic::zero_labels(&m);
        let noisy = Synthetic::new(
            &m,
            LabelModel::Noisy {
                w_star: vec![3.0, -1.0],
                noise: ScalarLaw::Gaussian { variance: 4.0 },
            },
        )
        .unwrap();
        let a = run_coupled(&plain, "m", &t, &i0, &i1, 500, 9, 2).unwrap();
        let b = run_coupled(&noisy, "m", &t, &i0, &i1, 500, 9, 2).unwrap();
        assert_eq!(a.sq_dist, b.sq_dist);
        assert_ne!(a.final0, b.final0);
    }

    #[test]
    fn coupled_distance_matches_direct_difference() {
        let m = MomentSpec::gaussian_two_scale(0.1).unwrap();
        let t = theta();
        let src = Synthetic::new(&m, LabelModel::Realizable { w_star: vec![0.5, 0.5] }).unwrap();
        let i0 = ChainState::at_rest(vec![1.0, 1.0]);
        let i1 = ChainState::zeros(2);
        let c = run_coupled(&src, "m", &t, &i0, &i1, 50, 4, 0).unwrap();
        let direct = c.final0.sq_dist(&c.final1);
        let last = *c.sq_dist.last().unwrap();
        assert!((direct - last).abs() <= 1e-9 * (1.0 + last));
    }

    #[test]
    fn a_matrix_matches_step_with_zero_labels() {
        let x = [0.4, -1.3, 0.8];
        let t = theta();
        let s = ChainState::new(vec![0.2, 0.1, -0.5], vec![1.0, 0.0, 0.3]).unwrap();
        let next = sagd_step(&s, &x, 0.0, &t).unwrap();
        let u = DVector::from_vec(s.lifted());
        let v = build_a_matrix(&x, &t) * u;
        for (a, b) in v.iter().zip(next.lifted()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn step_is_affine_in_state(
            w in prop::array::uniform4(-3.0f64..3.0),
            x in prop::array::uniform2(-2.0f64..2.0),
            y in -2.0f64..2.0,
            alpha in 0.0f64..3.0, beta in 0.0f64..0.99, gamma in 1e-3f64..0.5,
        ) {
            let t = Theta::new(alpha, beta, gamma).unwrap();
            let s = ChainState::new(vec![w[0], w[1]], vec![w[2], w[3]]).unwrap();
            let z = ChainState::zeros(2);
            let a = sagd_step(&s, &x, y, &t).unwrap();
            let b = sagd_step(&z, &x, y, &t).unwrap();
            let lin = build_a_matrix(&x, &t) * DVector::from_vec(s.lifted());
            for (i, (p, q)) in a.lifted().iter().zip(b.lifted()).enumerate() {
                prop_assert!((p - q - lin[i]).abs() <= 1e-10 * (1.0 + lin[i].abs()));
            }
        }

        #[test]
        fn runs_are_reproducible(seed in 0u64..1000, run in 0u64..8) {
            let m = MomentSpec::gaussian_two_scale(0.2).unwrap();
            let src = Synthetic::zero_labels(&m);
            let i0 = ChainState::at_rest(vec![1.0, -1.0]);
            let a = run_coupled(&src, "g", &theta(), &i0, &ChainState::zeros(2), 40, seed, run).unwrap();
            let b = run_coupled(&src, "g", &theta(), &i0, &ChainState::zeros(2), 40, seed, run).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
