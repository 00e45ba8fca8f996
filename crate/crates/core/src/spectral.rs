//! Spectra, pseudospectra and the per-eigendirection 3x3 blocks.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::Theta;
use crate::error::{Error, Result};
use crate::moments::MomentSpec;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    Ok(())
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    check_square(m)?;
    let schur = nalgebra::Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numeric("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Spectral radius of a 3x3 block.
pub fn spectral_radius3(m: &Matrix3<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("block has non-finite entries".into()));
    }
    let schur = nalgebra::Schur::try_new(*m, SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numeric("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn shifted(mc: &DMatrix<Complex64>, z: Complex64) -> DMatrix<Complex64> {
    let mut s = mc.clone();
    for i in 0..s.nrows() {
        s[(i, i)] -= z;
    }
    s
}

fn min_singular(m: DMatrix<Complex64>) -> f64 {
    m.singular_values_unordered()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest singular value of `M - z I`.
pub fn sigma_min_shifted(m: &DMatrix<f64>, z: Complex64) -> f64 {
    min_singular(shifted(&complexify(m), z))
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values_unordered().iter().copied().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudospectrumOptions {
    /// Number of equally spaced rays from the origin.
    pub angles: usize,
    /// Absolute tolerance on `sigma_min - eps` at the located boundary.
    pub tol: f64,
    /// Bisection levels of angular refinement around the best ray.
    pub refine_levels: usize,
    pub max_steps_per_ray: usize,
}

impl Default for PseudospectrumOptions {
    fn default() -> Self {
        PseudospectrumOptions {
            angles: 256,
            tol: 1e-10,
            refine_levels: 12,
            max_steps_per_ray: 20_000,
        }
    }
}

/// Outermost radius along the ray at angle `theta` where `sigma_min(M - zI) <= eps`.
///
/// `sigma_min(M - zI)` is 1-Lipschitz in `z`, so stepping inwards by
/// `sigma_min - eps` never jumps over the boundary. The returned radius is an
/// upper bound for the boundary on this ray, within `tol` of it on exit.
fn ray_radius(mc: &DMatrix<Complex64>, start: f64, theta: f64, eps: f64, opts: &PseudospectrumOptions) -> f64 {
    let dir = Complex64::from_polar(1.0, theta);
    let mut r = start;
    for _ in 0..opts.max_steps_per_ray {
        let gap = min_singular(shifted(mc, dir * r)) - eps;
        if gap <= opts.tol {
            return r;
        }
        r -= gap;
        if r <= 0.0 {
            return 0.0;
        }
    }
    r
}

/// `eps`-pseudospectral radius `max{|z| : sigma_min(M - zI) <= eps}`.
pub fn pseudospectral_radius(m: &DMatrix<f64>, eps: f64) -> Result<f64> {
    pseudospectral_radius_with(m, eps, &PseudospectrumOptions::default())
}

pub fn pseudospectral_radius_with(m: &DMatrix<f64>, eps: f64, opts: &PseudospectrumOptions) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if opts.angles == 0 {
        return Err(Error::InvalidParameter("need at least one angle".into()));
    }
    let eig = eigenvalues(m)?;
    let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mc = complexify(m);
    // The pseudospectrum lies in the disc of radius ||M|| + eps.
    let start = operator_norm(m) + eps + opts.tol;
    let mut thetas: Vec<f64> = (0..opts.angles)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / opts.angles as f64)
        .collect();
    thetas.extend(eig.iter().filter(|z| z.norm() > 0.0).map(|z| z.arg()));
    let radii: Vec<f64> = thetas
        .par_iter()
        .map(|&t| ray_radius(&mc, start, t, eps, opts))
        .collect();
    let (mut best_t, mut best_r) = (0.0, f64::NEG_INFINITY);
    for (&t, &r) in thetas.iter().zip(&radii) {
        if r > best_r {
            best_t = t;
            best_r = r;
        }
    }
    let mut h = std::f64::consts::PI / opts.angles as f64;
    for _ in 0..opts.refine_levels {
        for t in [best_t - h, best_t + h] {
            let r = ray_radius(&mc, start, t, eps, opts);
            if r > best_r {
                best_t = t;
                best_r = r;
            }
        }
        h *= 0.5;
    }
    Ok(best_r.max(rho))
}

/// One sample of `sigma_min(M - zI)` on a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub re: f64,
    pub im: f64,
    pub sigma_min: f64,
}

/// `sigma_min(M - zI)` on an `nx x ny` grid over `re_range x im_range`, row by row in `im`.
pub fn pseudospectrum_grid(
    m: &DMatrix<f64>,
    re_range: (f64, f64),
    im_range: (f64, f64),
    nx: usize,
    ny: usize,
) -> Result<Vec<GridPoint>> {
    check_square(m)?;
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter("grid needs at least 2 points per axis".into()));
    }
    let mc = complexify(m);
    let lerp = |(a, b): (f64, f64), k: usize, n: usize| a + (b - a) * k as f64 / (n - 1) as f64;
    Ok((0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let (j, i) = (idx / nx, idx % nx);
            let re = lerp(re_range, i, nx);
            let im = lerp(im_range, j, ny);
            GridPoint {
                re,
                im,
                sigma_min: min_singular(shifted(&mc, Complex64::new(re, im))),
            }
        })
        .collect())
}

/// Pseudospectral radius by brute force over a grid covering the disc of
/// radius `||M|| + eps`. Slow; useful as an independent check.
pub fn pseudospectral_radius_grid(m: &DMatrix<f64>, eps: f64, n: usize) -> Result<f64> {
    let r = operator_norm(m) + eps;
    let pts = pseudospectrum_grid(m, (-r, r), (-r, r), n, n)?;
    Ok(pts
        .iter()
        .filter(|p| p.sigma_min <= eps)
        .map(|p| p.re.hypot(p.im))
        .fold(spectral_radius(m)?, f64::max))
}

/// Condition number of a unit-column eigenvector matrix.
///
/// Eigenvectors are taken as the right singular vectors of `A - lambda I` for
/// the smallest singular value. Defective matrices give very large values.
pub fn eigenvector_condition_number(a: &DMatrix<f64>) -> Result<f64> {
    let eig = eigenvalues(a)?;
    let n = a.nrows();
    let ac = complexify(a);
    let mut v = DMatrix::<Complex64>::zeros(n, n);
    for (j, &lam) in eig.iter().enumerate() {
        let svd = shifted(&ac, lam).svd(false, true);
        let vt = svd
            .v_t
            .ok_or_else(|| Error::Numeric("singular vectors unavailable".into()))?;
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let col = vt.row(k).transpose().map(|c| c.conj());
        let nrm = col.norm();
        for i in 0..n {
            v[(i, j)] = col[i] / nrm;
        }
    }
    let s = v.singular_values_unordered();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if smin > 0.0 { smax / smin } else { f64::INFINITY })
}

/// Outcome of comparing `||M^n||` with `rho_eps^(n+1) / eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerNormCheck {
    pub n: usize,
    pub eps: f64,
    pub power_norm: f64,
    pub rho_eps: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `||M^n||_2 <= rho_eps(M)^(n+1) / eps`.
pub fn power_norm_bound_check(m: &DMatrix<f64>, eps: f64, n: usize) -> Result<PowerNormCheck> {
    let rho_eps = pseudospectral_radius(m, eps)?;
    let power_norm = operator_norm(&matrix_power(m, n)?);
    let bound = rho_eps.powi(n as i32 + 1) / eps;
    Ok(PowerNormCheck {
        n,
        eps,
        power_norm,
        rho_eps,
        bound,
        holds: power_norm <= bound * (1.0 + 1e-9),
    })
}

pub fn matrix_power(m: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    Ok(result)
}

/// Outcome of the perturbation checks for `A + E` with `||E|| <= eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    pub eps: f64,
    pub perturbation_norm: f64,
    /// `rho(A + E)`.
    pub rho_perturbed: f64,
    pub rho: f64,
    pub rho_eps: f64,
    /// Condition number of the eigenvector matrix of `A`.
    pub kappa: f64,
    /// Largest distance from an eigenvalue of `A + E` to the spectrum of `A`.
    pub eigen_shift: f64,
    /// `rho(A + E) <= rho_eps(A)`.
    pub robust_holds: bool,
    /// `eigen_shift <= kappa ||E||` and `rho_eps(A) <= rho(A) + kappa eps`.
    pub bauer_fike_holds: bool,
}

impl PerturbationCheck {
    pub fn holds(&self) -> bool {
        self.robust_holds && self.bauer_fike_holds
    }
}

pub fn perturbation_bound_check(a: &DMatrix<f64>, e: &DMatrix<f64>, eps: f64) -> Result<PerturbationCheck> {
    check_square(a)?;
    if e.shape() != a.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: e.nrows(),
        });
    }
    let perturbation_norm = operator_norm(e);
    if perturbation_norm > eps * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "perturbation norm {perturbation_norm} exceeds eps {eps}"
        )));
    }
    let eig_a = eigenvalues(a)?;
    let eig_p = eigenvalues(&(a + e))?;
    let rho = eig_a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rho_perturbed = eig_p.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rho_eps = pseudospectral_radius(a, eps)?;
    let kappa = eigenvector_condition_number(a)?;
    let eigen_shift = eig_p
        .iter()
        .map(|p| eig_a.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let slack = 1e-9 * (1.0 + rho_eps);
    Ok(PerturbationCheck {
        eps,
        perturbation_norm,
        rho_perturbed,
        rho,
        rho_eps,
        kappa,
        eigen_shift,
        robust_holds: rho_perturbed <= rho_eps + slack,
        bauer_fike_holds: eigen_shift <= kappa * perturbation_norm + slack && rho_eps <= rho + kappa * eps + slack,
    })
}

/// The 3x3 block for eigendirection `i`, acting on `(lambda1, lambda2, lambda3)_i`
/// when the rank-one coupling across directions is dropped.
pub fn build_j_blocks(model: &MomentSpec, theta: &Theta) -> Vec<Matrix3<f64>> {
    let Theta { alpha, beta, gamma } = *theta;
    model
        .sigma()
        .iter()
        .zip(model.kurt())
        .map(|(&s, &k)| {
            let d1 = (1.0 + beta) - gamma * (1.0 + alpha) * s;
            let d2 = alpha * gamma * s - beta;
            let q = gamma * gamma * (k - s * s);
            Matrix3::new(
                d1 * d1 + (1.0 + alpha).powi(2) * q,
                2.0 * d1,
                1.0,
                d1 * d2 - alpha * (1.0 + alpha) * q,
                d2,
                0.0,
                d2 * d2 + alpha * alpha * q,
                0.0,
                0.0,
            )
        })
        .collect()
}

pub fn j_block_radii(model: &MomentSpec, theta: &Theta) -> Result<Vec<f64>> {
    build_j_blocks(model, theta).iter().map(spectral_radius3).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Grid,
    JblockBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Spectral radius. For the block bound this is `max_i rho(J_i)`.
    pub rho: f64,
    /// Pseudospectral radius, or its claimed upper bound for the block method.
    pub rho_eps: f64,
    pub eps: f64,
    pub method: Method,
    #[serde(default)]
    pub j_radii: Vec<f64>,
    #[serde(default)]
    pub perturbation_term: f64,
}

/// `3 (1 + alpha)^2 gamma^2 ||diag(sigma)^2 - sigma sigma^T||_2`.
pub fn rank_one_perturbation_term(model: &MomentSpec, theta: &Theta) -> f64 {
    let s = model.sigma();
    let d = s.len();
    let m = DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { -s[i] * s[j] });
    let nrm = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    3.0 * (1.0 + theta.alpha).powi(2) * theta.gamma.powi(2) * nrm
}

/// `max_i rho(J_i) + eps + 3 (1 + alpha)^2 gamma^2 ||diag(sigma)^2 - sigma sigma^T||_2`.
pub fn jblock_mixing_bound(model: &MomentSpec, theta: &Theta, eps: f64) -> Result<SpectralReport> {
    theta.validate()?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let j_radii = j_block_radii(model, theta)?;
    let rho = j_radii.iter().copied().fold(0.0, f64::max);
    let perturbation_term = rank_one_perturbation_term(model, theta);
    Ok(SpectralReport {
        rho,
        rho_eps: rho + eps + perturbation_term,
        eps,
        method: Method::JblockBound,
        j_radii,
        perturbation_term,
    })
}

/// Exact spectral radius and ray-traced pseudospectral radius of `m`.
pub fn spectral_report(m: &DMatrix<f64>, eps: f64) -> Result<SpectralReport> {
    Ok(SpectralReport {
        rho: spectral_radius(m)?,
        rho_eps: pseudospectral_radius(m, eps)?,
        eps,
        method: Method::Exact,
        j_radii: Vec::new(),
        perturbation_term: 0.0,
    })
}
