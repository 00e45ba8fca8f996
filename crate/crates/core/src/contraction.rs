//! The `3d x 3d` contraction matrix and the closed-form second-moment recursion.
//!
//! Write `M_n = E[B_n^T M_0 B_n]` with `B_n = A_n ... A_1`. When `M_0` has
//! blocks `U diag(l1) U^T`, `U diag(l2) U^T`, `U diag(l3) U^T`, so does every
//! `M_n`, and `a_n = (l1, l2, l3)` evolves linearly: `a_{n+1} = C a_n`.
//!
//! Two starting vectors matter:
//! * `a_0 = (1, 0, 1)` is `M_0 = I`, giving the Gram matrix `E[B_n^T B_n]`
//!   ([`evolve_gram`]);
//! * `a_0 = (1, 1, 1)` is `M_0 = [[I, I], [I, I]]` ([`evolve_second_moment`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::{build_a_matrix, Theta};
use crate::error::{Error, Result};
use crate::moments::MomentSpec;
use crate::rng;
use crate::spectral;

const PSD_TOL: f64 = 1e-9;

/// Monte Carlo trials per random stream.
pub const MC_CHUNK: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionMatrix {
    d: usize,
    mat: DMatrix<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    /// `K = gamma^2 (diag(k_diag) + k_vec k_vec^T)`.
    k_diag: Vec<f64>,
    k_vec: Vec<f64>,
    theta: Theta,
    model_id: String,
}

/// Names of the nine `d x d` blocks, row by row.
pub const BLOCK_NAMES: [[&str; 3]; 3] = [
    ["D1^2+(1+a)^2K", "2D1", "I"],
    ["D1D2-a(1+a)K", "D2", "0"],
    ["D2^2+a^2K", "0", "0"],
];

impl ContractionMatrix {
    /// Assembles the matrix from the drift eigenvalues and the noise operator
    /// `N(l) = (noise_diag) l + noise_vec <noise_vec, l>`.
    pub fn from_parts(
        model_id: impl Into<String>,
        drift: &[f64],
        noise_diag: &[f64],
        noise_vec: &[f64],
        theta: Theta,
    ) -> Result<Self> {
        theta.validate()?;
        let d = drift.len();
        for len in [noise_diag.len(), noise_vec.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, got: len });
            }
        }
        let Theta { alpha, beta, gamma } = theta;
        let d1: Vec<f64> = drift.iter().map(|s| (1.0 + beta) - gamma * (1.0 + alpha) * s).collect();
        let d2: Vec<f64> = drift.iter().map(|s| alpha * gamma * s - beta).collect();
        let g2 = gamma * gamma;
        let k = |i: usize, j: usize| {
            let diag = if i == j { noise_diag[i] } else { 0.0 };
            g2 * (diag + noise_vec[i] * noise_vec[j])
        };
        let mut mat = DMatrix::zeros(3 * d, 3 * d);
        let a1 = (1.0 + alpha).powi(2);
        let a12 = alpha * (1.0 + alpha);
        let a2 = alpha * alpha;
        for i in 0..d {
            for j in 0..d {
                let kij = k(i, j);
                let id = if i == j { 1.0 } else { 0.0 };
                mat[(i, j)] = id * d1[i] * d1[i] + a1 * kij;
                mat[(d + i, j)] = id * d1[i] * d2[i] - a12 * kij;
                mat[(2 * d + i, j)] = id * d2[i] * d2[i] + a2 * kij;
            }
            mat[(i, d + i)] = 2.0 * d1[i];
            mat[(i, 2 * d + i)] = 1.0;
            mat[(d + i, d + i)] = d2[i];
        }
        Ok(ContractionMatrix {
            d,
            mat,
            d1,
            d2,
            k_diag: noise_diag.to_vec(),
            k_vec: noise_vec.to_vec(),
            theta,
            model_id: model_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Diagonal of `D1`.
    pub fn d1(&self) -> &[f64] {
        &self.d1
    }

    /// Diagonal of `D2`.
    pub fn d2(&self) -> &[f64] {
        &self.d2
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        let g2 = self.theta.gamma * self.theta.gamma;
        let d = self.d;
        DMatrix::from_fn(d, d, |i, j| {
            let diag = if i == j { self.k_diag[i] } else { 0.0 };
            g2 * (diag + self.k_vec[i] * self.k_vec[j])
        })
    }

    /// Block `(row, col)` of the `3 x 3` block layout, see [`BLOCK_NAMES`].
    pub fn block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let d = self.d;
        self.mat.view((row * d, col * d), (d, d)).into_owned()
    }

    /// `C` with the rank-one part of `K` replaced by its diagonal. Its
    /// spectrum is the union of the spectra of the `3 x 3` blocks.
    pub fn decoupled(&self) -> Result<Self> {
        let diag: Vec<f64> = self.k_diag.iter().zip(&self.k_vec).map(|(k, v)| k + v * v).collect();
        let drift = self.drift();
        Self::from_parts(
            format!("{}-decoupled", self.model_id),
            &drift,
            &diag,
            &vec![0.0; self.d],
            self.theta,
        )
    }

    fn drift(&self) -> Vec<f64> {
        let Theta { alpha, beta, gamma } = self.theta;
        self.d1
            .iter()
            .map(|d1| ((1.0 + beta) - d1) / (gamma * (1.0 + alpha)))
            .collect()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral::spectral_radius(&self.mat)
    }
}

pub fn build_contraction_matrix(model: &MomentSpec, theta: &Theta) -> Result<ContractionMatrix> {
    let s = model.sigma();
    let noise_diag: Vec<f64> = s.iter().zip(model.kurt()).map(|(s, k)| k - 2.0 * s * s).collect();
    ContractionMatrix::from_parts(model.name(), s, &noise_diag, s, *theta)
}

/// `a_n = (lambda1, lambda2, lambda3)` after `n` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentState {
    pub a: Vec<f64>,
    pub n: usize,
}

impl SecondMomentState {
    pub fn dim(&self) -> usize {
        self.a.len() / 3
    }

    pub fn lambda1(&self) -> &[f64] {
        &self.a[..self.dim()]
    }

    pub fn lambda2(&self) -> &[f64] {
        let d = self.dim();
        &self.a[d..2 * d]
    }

    pub fn lambda3(&self) -> &[f64] {
        let d = self.dim();
        &self.a[2 * d..]
    }

    pub fn norm(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest violation of positive semidefiniteness of the `2 x 2` per-direction
    /// blocks, relative to the overall scale.
    fn psd_violation(&self) -> f64 {
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        let (l1, l2, l3) = (self.lambda1(), self.lambda2(), self.lambda3());
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            worst = worst.max(-l1[i] / scale).max(-l3[i] / scale);
            let det = l1[i] * l3[i] - l2[i] * l2[i];
            worst = worst.max(-det / (scale * scale));
        }
        worst
    }
}

/// `a_n = C^n 1`.
pub fn evolve_second_moment(c: &ContractionMatrix, n: usize) -> Result<SecondMomentState> {
    evolve_from(c, &vec![1.0; 3 * c.d], n)
}

/// `a_n` for `M_0 = I`, i.e. the Gram matrix `E[B_n^T B_n]`.
pub fn evolve_gram(c: &ContractionMatrix, n: usize) -> Result<SecondMomentState> {
    let d = c.d;
    let mut a0 = vec![1.0; 3 * d];
    a0[d..2 * d].fill(0.0);
    evolve_from(c, &a0, n)
}

/// `a_n = C^n a_0` by repeated matrix-vector products. If `a_0` describes a
/// positive semidefinite `M_0`, every iterate is checked to stay so.
pub fn evolve_from(c: &ContractionMatrix, a0: &[f64], n: usize) -> Result<SecondMomentState> {
    if a0.len() != 3 * c.d {
        return Err(Error::DimensionMismatch {
            expected: 3 * c.d,
            got: a0.len(),
        });
    }
    let mut state = SecondMomentState { a: a0.to_vec(), n: 0 };
    let check = state.psd_violation() <= PSD_TOL;
    let mut v = DVector::from_column_slice(a0);
    for k in 1..=n {
        v = &c.mat * v;
        if v.iter().any(|x| !x.is_finite() || x.abs() > 1e300) {
            return Err(Error::Divergence { step: k });
        }
        state.a.copy_from_slice(v.as_slice());
        state.n = k;
        if check {
            let bad = state.psd_violation();
            if bad > PSD_TOL {
                return Err(Error::Consistency(format!(
                    "step {k}: per-direction block fails PSD by {bad:.3e}"
                )));
            }
        }
    }
    Ok(state)
}

/// `M_n` with blocks `U diag(lambda_k) U^T`.
pub fn reconstruct_mn(model: &MomentSpec, state: &SecondMomentState) -> Result<DMatrix<f64>> {
    let d = model.dim();
    if state.a.len() != 3 * d {
        return Err(Error::DimensionMismatch {
            expected: 3 * d,
            got: state.a.len(),
        });
    }
    let scale = state.norm_inf().max(1.0);
    for (which, l) in [("lambda1", state.lambda1()), ("lambda3", state.lambda3())] {
        if let Some(v) = l.iter().find(|&&v| v < -PSD_TOL * scale) {
            return Err(Error::Consistency(format!("{which} has negative entry {v}")));
        }
    }
    let u = model.basis();
    let block = |l: &[f64]| u * DMatrix::from_diagonal(&DVector::from_column_slice(l)) * u.transpose();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    let b1 = block(state.lambda1());
    let b2 = block(state.lambda2());
    let b3 = block(state.lambda3());
    m.view_mut((0, 0), (d, d)).copy_from(&b1);
    m.view_mut((0, d), (d, d)).copy_from(&b2);
    m.view_mut((d, 0), (d, d)).copy_from(&b2);
    m.view_mut((d, d), (d, d)).copy_from(&b3);
    Ok(m)
}

/// Both sides of the quadratic-form sandwich for `[v; v]^T M_n [v; v]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticFormCheck {
    pub value: f64,
    /// `||a_n||_inf ||v||^2`.
    pub lower: f64,
    /// `6 sqrt(d) ||a_n|| ||v||^2`.
    pub upper: f64,
}

impl QuadraticFormCheck {
    pub fn lower_holds(&self) -> bool {
        self.lower <= self.value * (1.0 + 1e-12) + 1e-300
    }

    pub fn upper_holds(&self) -> bool {
        self.value <= self.upper * (1.0 + 1e-12)
    }
}

pub fn quadratic_form_check(model: &MomentSpec, state: &SecondMomentState, v: &[f64]) -> Result<QuadraticFormCheck> {
    let d = model.dim();
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let u = model.basis();
    let coords = u.transpose() * DVector::from_column_slice(v);
    let (l1, l2, l3) = (state.lambda1(), state.lambda2(), state.lambda3());
    let value = (0..d)
        .map(|i| coords[i] * coords[i] * (l1[i] + 2.0 * l2[i] + l3[i]))
        .sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    Ok(QuadraticFormCheck {
        value,
        lower: state.norm_inf() * vv,
        upper: 6.0 * (d as f64).sqrt() * state.norm() * vv,
    })
}

/// Monte Carlo estimate of `E[B_n^T W B_n]` with per-entry standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloMoment {
    pub mean: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub trials: usize,
}

/// Estimates the Gram matrix `E[B_n^T B_n]` by multiplying random `A_k` densely.
pub fn mc_estimate_mn(
    model: &MomentSpec,
    theta: &Theta,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloMoment> {
    let d = model.dim();
    mc_estimate_weighted(model, theta, &DMatrix::identity(2 * d, 2 * d), n, trials, seed)
}

/// Estimates `E[B_n^T W B_n]`. Trials are split into chunks of [`MC_CHUNK`],
/// chunk `c` drawing from stream `c`, and reduced in chunk order.
pub fn mc_estimate_weighted(
    model: &MomentSpec,
    theta: &Theta,
    weight: &DMatrix<f64>,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloMoment> {
    if trials < 1000 {
        return Err(Error::InvalidParameter(format!(
            "need at least 1000 trials, got {trials}"
        )));
    }
    let Theta { alpha, beta, gamma } = *theta;
    if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad theta {theta:?}")));
    }
    let d = model.dim();
    if weight.shape() != (2 * d, 2 * d) {
        return Err(Error::DimensionMismatch {
            expected: 2 * d,
            got: weight.nrows(),
        });
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let partial: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, c as u64);
            let count = MC_CHUNK.min(trials - c * MC_CHUNK);
            let mut sum = DMatrix::zeros(2 * d, 2 * d);
            let mut sumsq = DMatrix::zeros(2 * d, 2 * d);
            for _ in 0..count {
                let mut b = DMatrix::<f64>::identity(2 * d, 2 * d);
                for _ in 0..n {
                    let x = model.sample_input(&mut r);
                    b = build_a_matrix(&x, theta) * b;
                }
                let g = b.transpose() * weight * &b;
                sumsq += g.component_mul(&g);
                sum += g;
            }
            (sum, sumsq)
        })
        .collect();
    let mut sum = DMatrix::zeros(2 * d, 2 * d);
    let mut sumsq = DMatrix::zeros(2 * d, 2 * d);
    for (s, q) in &partial {
        sum += s;
        sumsq += q;
    }
    let nt = trials as f64;
    let mean = sum / nt;
    let stderr = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let var = (sumsq[(i, j)] - nt * mean[(i, j)] * mean[(i, j)]) / (nt - 1.0);
        (var.max(0.0) / nt).sqrt()
    });
    Ok(MonteCarloMoment { mean, stderr, trials })
}

/// `18 d^{3/2} c0 rho_eps(C)^{n+1} / eps`.
pub fn w2_upper_bound(c: &ContractionMatrix, eps: f64, n: usize, c0: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let rho_eps = spectral::pseudospectral_radius(&c.mat, eps)?;
    w2_bound_from_radius(c.d, rho_eps, eps, n, c0)
}

/// The same envelope with a caller-supplied radius in place of `rho_eps(C)`.
pub fn w2_bound_from_radius(d: usize, radius: f64, eps: f64, n: usize, c0: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !(radius.is_finite() && radius >= 0.0 && c0.is_finite() && c0 >= 0.0) {
        return Err(Error::InvalidParameter(
            "radius and c0 must be finite and non-negative".into(),
        ));
    }
    Ok(18.0 * (d as f64).powf(1.5) * c0 * radius.powf(n as f64 + 1.0) / eps)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rotation(theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    #[test]
    fn scalar_sgd_entries() {
        let g = 0.3;
        let m = MomentSpec::gaussian(&[1.0]).unwrap();
        let c = build_contraction_matrix(&m, &Theta::sgd(g).unwrap()).unwrap();
        let row0 = [(1.0 - g) * (1.0 - g) + 2.0 * g * g, 2.0 * (1.0 - g), 1.0];
        for (j, v) in row0.iter().enumerate() {
            assert!((c.mat()[(0, j)] - v).abs() < 1e-15);
        }
        for i in 1..3 {
            for j in 0..3 {
                assert_eq!(c.mat()[(i, j)].abs(), 0.0, "({i},{j})");
            }
        }
        let a1 = evolve_second_moment(&c, 1).unwrap();
        assert!((a1.a[0] - (row0[0] + row0[1] + 1.0)).abs() < 1e-14);
        assert_eq!(&a1.a[1..], &[0.0, 0.0]);
    }

    #[test]
    fn sgd_block_matches_independent_oracle() {
        // (I - gamma diag(s))^2 + gamma^2 diag(s)^2 + gamma^2 s s^T for Gaussian inputs.
        let m = MomentSpec::gaussian(&[0.2, 0.5, 1.0]).unwrap();
        let g = 0.15;
        let c = build_contraction_matrix(&m, &Theta::sgd(g).unwrap()).unwrap();
        let s = m.sigma();
        for i in 0..3 {
            for j in 0..3 {
                let mut expect = g * g * s[i] * s[j];
                if i == j {
                    expect += (1.0 - g * s[i]).powi(2) + g * g * s[i] * s[i];
                }
                assert!((c.block(0, 0)[(i, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn blocks_assemble_matrix() {
        let m = MomentSpec::uniform_rademacher(0.1).unwrap();
        let t = Theta::new(2.0, 0.9, 0.01).unwrap();
        let c = build_contraction_matrix(&m, &t).unwrap();
        let d1 = DMatrix::from_diagonal(&DVector::from_column_slice(c.d1()));
        let d2 = DMatrix::from_diagonal(&DVector::from_column_slice(c.d2()));
        let k = c.k_matrix();
        let a = t.alpha;
        let id = DMatrix::<f64>::identity(2, 2);
        let expect = [
            [&d1 * &d1 + (1.0 + a).powi(2) * &k, 2.0 * &d1, id.clone()],
            [&d1 * &d2 - a * (1.0 + a) * &k, d2.clone(), id.clone() * 0.0],
            [&d2 * &d2 + a * a * &k, id.clone() * 0.0, id.clone() * 0.0],
        ];
        for (r, row) in expect.iter().enumerate() {
            for (col, blk) in row.iter().enumerate() {
                assert!((c.block(r, col) - blk).amax() < 1e-15, "{}", BLOCK_NAMES[r][col]);
            }
        }
    }

    #[test]
    fn evolve_matches_repeated_matvec() {
        let m = MomentSpec::gaussian_two_scale(0.05).unwrap();
        let c = build_contraction_matrix(&m, &Theta::new(2.0, 0.95, 0.1).unwrap()).unwrap();
        let mut v = DVector::from_element(6, 1.0);
        for _ in 0..37 {
            v = c.mat() * v;
        }
        let a = evolve_second_moment(&c, 37).unwrap();
        for (x, y) in a.a.iter().zip(v.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
        assert_eq!(evolve_second_moment(&c, 0).unwrap().a, vec![1.0; 6]);
    }

    #[test]
    fn evolve_reports_divergence() {
        let m = MomentSpec::gaussian(&[1.0]).unwrap();
        let c = build_contraction_matrix(&m, &Theta::sgd(5.0).unwrap()).unwrap();
        assert!(matches!(
            evolve_second_moment(&c, 100_000),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn gram_convention_at_zero_is_identity() {
        let m = MomentSpec::gaussian_two_scale(0.3)
            .unwrap()
            .with_basis(rotation(0.7))
            .unwrap();
        let c = build_contraction_matrix(&m, &Theta::new(1.0, 0.5, 0.2).unwrap()).unwrap();
        let m0 = reconstruct_mn(&m, &evolve_gram(&c, 0).unwrap()).unwrap();
        assert!((m0 - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    /// One step in closed form: `E[A^T A]` for scalar SGD with Gaussian input.
    #[test]
    fn one_step_gram_closed_form() {
        let (g, s) = (0.3, 0.8);
        let m = MomentSpec::gaussian(&[s]).unwrap();
        let c = build_contraction_matrix(&m, &Theta::sgd(g).unwrap()).unwrap();
        let m1 = reconstruct_mn(&m, &evolve_gram(&c, 1).unwrap()).unwrap();
        // A = [[1 - g x^2, 0], [1, 0]]; E(1 - g x^2)^2 = 1 - 2 g s + 3 g^2 s^2.
        let top = 1.0 - 2.0 * g * s + 3.0 * g * g * s * s + 1.0;
        assert!((m1[(0, 0)] - top).abs() < 1e-14);
        assert!(m1[(0, 1)].abs() < 1e-15 && m1[(1, 1)].abs() < 1e-15);
    }

    /// Golden test pinning the conventions: `(1, 0, 1)` start and `U diag U^T` blocks.
    #[test]
    fn golden_gram_matches_monte_carlo_in_rotated_basis() {
        let m = MomentSpec::uniform_rademacher(0.3)
            .unwrap()
            .with_basis(rotation(0.6))
            .unwrap();
        let t = Theta::new(1.5, 0.6, 0.3).unwrap();
        let c = build_contraction_matrix(&m, &t).unwrap();
        for n in [1, 3] {
            let exact = reconstruct_mn(&m, &evolve_gram(&c, n).unwrap()).unwrap();
            let mc = mc_estimate_mn(&m, &t, n, 100_000, 17).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let z = (mc.mean[(i, j)] - exact[(i, j)]).abs() / mc.stderr[(i, j)].max(1e-12);
                    assert!(z < 5.0, "n={n} ({i},{j}): {} vs {}", mc.mean[(i, j)], exact[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn all_ones_start_is_the_j_weighted_moment() {
        let m = MomentSpec::gaussian_two_scale(0.4).unwrap();
        let t = Theta::new(1.0, 0.5, 0.2).unwrap();
        let c = build_contraction_matrix(&m, &t).unwrap();
        let exact = reconstruct_mn(&m, &evolve_second_moment(&c, 2).unwrap()).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        let mut j = DMatrix::zeros(4, 4);
        for (r, cc) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            j.view_mut((r, cc), (2, 2)).copy_from(&id);
        }
        let mc = mc_estimate_weighted(&m, &t, &j, 2, 100_000, 3).unwrap();
        for i in 0..4 {
            for k in 0..4 {
                let z = (mc.mean[(i, k)] - exact[(i, k)]).abs() / mc.stderr[(i, k)].max(1e-12);
                assert!(z < 5.0, "({i},{k})");
            }
        }
    }

    #[test]
    fn zero_step_size_has_no_variance() {
        let m = MomentSpec::gaussian_two_scale(0.5).unwrap();
        let t = Theta {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.0,
        };
        let mc = mc_estimate_mn(&m, &t, 5, 1000, 1).unwrap();
        assert!(mc.stderr.amax() < 1e-12);
    }

    #[test]
    fn decoupled_spectrum_is_union_of_blocks() {
        let m = MomentSpec::gaussian(&[0.1, 0.4, 1.0]).unwrap();
        let t = Theta::new(2.0, 0.9, 0.1).unwrap();
        let c = build_contraction_matrix(&m, &t).unwrap().decoupled().unwrap();
        let rho = c.spectral_radius().unwrap();
        let blocks = spectral::j_block_radii(&m, &t).unwrap();
        let max_block = blocks.iter().copied().fold(0.0, f64::max);
        assert!((rho - max_block).abs() < 1e-10);
    }

    #[test]
    fn w2_bound_basics() {
        let m = MomentSpec::gaussian_two_scale(0.05).unwrap();
        let c = build_contraction_matrix(&m, &Theta::new(2.0, 0.95, 0.1).unwrap()).unwrap();
        assert!(w2_upper_bound(&c, 0.0, 1, 1.0).is_err());
        let b0 = w2_bound_from_radius(2, 0.9, 0.01, 0, 1.0).unwrap();
        assert!((b0 - 18.0 * 2f64.powf(1.5) * 0.9 / 0.01).abs() < 1e-9);
        let b1 = w2_bound_from_radius(2, 0.9, 0.01, 10, 1.0).unwrap();
        assert!(b1 < b0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gram_is_symmetric_psd_with_nonnegative_diagonals(
            s0 in 0.05f64..1.0, ds in 0.0f64..1.0,
            alpha in 0.0f64..3.0, beta in 0.0f64..0.95, gscale in 0.01f64..0.3,
            angle in 0.0f64..std::f64::consts::PI, n in 0usize..40,
        ) {
            let m = MomentSpec::gaussian(&[s0, s0 + ds]).unwrap().with_basis(rotation(angle)).unwrap();
            let t = Theta::new(alpha, beta, gscale / (s0 + ds)).unwrap();
            let c = build_contraction_matrix(&m, &t).unwrap();
            let st = match evolve_gram(&c, n) {
                Ok(st) => st,
                Err(Error::Divergence { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            };
            prop_assert!(st.lambda1().iter().chain(st.lambda3()).all(|&v| v >= 0.0));
            let mn = reconstruct_mn(&m, &st).unwrap();
            let scale = mn.amax().max(1.0);
            prop_assert!((&mn - mn.transpose()).amax() <= 1e-10 * scale);
            prop_assert!(min_symmetric_eigenvalue(&mn) >= -1e-9 * scale);
        }

        #[test]
        fn quadratic_form_upper_bound(
            alpha in 0.0f64..3.0, beta in 0.0f64..0.95, g in 0.01f64..0.5,
            v in prop::array::uniform2(-1.0f64..1.0), n in 0usize..30,
        ) {
            let m = MomentSpec::uniform_rademacher(0.2).unwrap();
            let t = Theta::new(alpha, beta, g / m.l()).unwrap();
            let c = build_contraction_matrix(&m, &t).unwrap();
            if let Ok(st) = evolve_second_moment(&c, n) {
                let q = quadratic_form_check(&m, &st, &v).unwrap();
                prop_assert!(q.upper_holds(), "{q:?}");
            }
        }
    }
}
