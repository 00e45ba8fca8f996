//! Input distributions described by their second and fourth moments.
//!
//! An input is `x = U v` where `U` is orthogonal and the coordinates of `v`
//! are independent, symmetric, with `E v_i^2 = sigma_i` and `E v_i^4 = k_i`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const ORTHOGONALITY_TOL: f64 = 1e-10;
const DECLARED_MOMENT_RTOL: f64 = 1e-9;

/// Law of one coordinate of `v`. All laws are symmetric about zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ScalarLaw {
    Gaussian {
        variance: f64,
    },
    Uniform {
        half_width: f64,
    },
    TwoPoint {
        magnitude: f64,
    },
    /// `+-magnitude` each with probability `mass / 2`, zero otherwise.
    ThreePoint {
        magnitude: f64,
        mass: f64,
    },
}

impl ScalarLaw {
    pub fn second_moment(&self) -> f64 {
        match *self {
            ScalarLaw::Gaussian { variance } => variance,
            ScalarLaw::Uniform { half_width } => half_width * half_width / 3.0,
            ScalarLaw::TwoPoint { magnitude } => magnitude * magnitude,
            ScalarLaw::ThreePoint { magnitude, mass } => mass * magnitude * magnitude,
        }
    }

    pub fn fourth_moment(&self) -> f64 {
        match *self {
            ScalarLaw::Gaussian { variance } => 3.0 * variance * variance,
            ScalarLaw::Uniform { half_width } => half_width.powi(4) / 5.0,
            ScalarLaw::TwoPoint { magnitude } => magnitude.powi(4),
            ScalarLaw::ThreePoint { magnitude, mass } => mass * magnitude.powi(4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalarLaw::Gaussian { variance } => variance.is_finite() && variance > 0.0,
            ScalarLaw::Uniform { half_width } => half_width.is_finite() && half_width > 0.0,
            ScalarLaw::TwoPoint { magnitude } => magnitude.is_finite() && magnitude > 0.0,
            ScalarLaw::ThreePoint { magnitude, mass } => {
                magnitude.is_finite() && magnitude > 0.0 && mass > 0.0 && mass <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad sampler parameters: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalarLaw::Gaussian { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                variance.sqrt() * z
            }
            ScalarLaw::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
            ScalarLaw::TwoPoint { magnitude } => {
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            ScalarLaw::ThreePoint { magnitude, mass } => {
                let u: f64 = rng.random();
                if u < 0.5 * mass {
                    magnitude
                } else if u < mass {
                    -magnitude
                } else {
                    0.0
                }
            }
        }
    }
}

/// Second/fourth-moment description of an input distribution, with a sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSpec {
    name: String,
    basis: DMatrix<f64>,
    identity_basis: bool,
    sigma: Vec<f64>,
    kurt: Vec<f64>,
    samplers: Vec<ScalarLaw>,
}

impl MomentSpec {
    /// Builds a model from per-coordinate laws in the eigenbasis `basis`.
    /// The second moments must be positive and sorted ascending.
    pub fn from_laws(name: impl Into<String>, basis: DMatrix<f64>, laws: Vec<ScalarLaw>) -> Result<Self> {
        let d = laws.len();
        if d == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::InvalidModel(format!(
                "basis is {}x{}, expected {d}x{d}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        for law in &laws {
            law.validate()?;
        }
        let sigma: Vec<f64> = laws.iter().map(ScalarLaw::second_moment).collect();
        let kurt: Vec<f64> = laws.iter().map(ScalarLaw::fourth_moment).collect();
        validate_moments(&sigma, &kurt)?;
        validate_orthogonal(&basis)?;
        let identity_basis = basis == DMatrix::identity(d, d);
        Ok(MomentSpec {
            name: name.into(),
            basis,
            identity_basis,
            sigma,
            kurt,
            samplers: laws,
        })
    }

    /// Axis-aligned Gaussian with variances `sigma` (ascending).
    pub fn gaussian(sigma: &[f64]) -> Result<Self> {
        let laws = sigma.iter().map(|&s| ScalarLaw::Gaussian { variance: s }).collect();
        let d = sigma.len();
        Self::from_laws(format!("gaussian{sigma:?}"), DMatrix::identity(d, d), laws)
    }

    /// Two-dimensional Gaussian with covariance `diag(mu, 1)`.
    pub fn gaussian_two_scale(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::InvalidParameter(format!("mu must lie in (0, 1], got {mu}")));
        }
        let mut m = Self::gaussian(&[mu, 1.0])?;
        m.name = format!("gaussian(mu={mu})");
        Ok(m)
    }

    /// Two-dimensional model with a uniform coordinate on
    /// `[-kappa^{-1/2}, kappa^{-1/2}]` and a Rademacher coordinate scaled to
    /// `+-1/sqrt(2)`, so `sigma = (1/2, 1/(3 kappa))` for `kappa < 2/3`.
    pub fn uniform_rademacher(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        let uniform = ScalarLaw::Uniform {
            half_width: kappa.sqrt().recip(),
        };
        let rademacher = ScalarLaw::TwoPoint {
            magnitude: std::f64::consts::FRAC_1_SQRT_2,
        };
        let mut laws = vec![uniform, rademacher];
        laws.sort_by(|a, b| a.second_moment().total_cmp(&b.second_moment()));
        Self::from_laws(
            format!("uniform-rademacher(kappa={kappa})"),
            DMatrix::identity(2, 2),
            laws,
        )
    }

    /// Same coordinate laws in a different orthogonal eigenbasis.
    pub fn with_basis(&self, basis: DMatrix<f64>) -> Result<Self> {
        let mut m = Self::from_laws(self.name.clone(), basis, self.samplers.clone())?;
        m.name = format!("{}+rotated", self.name);
        Ok(m)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn kurt(&self) -> &[f64] {
        &self.kurt
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn has_identity_basis(&self) -> bool {
        self.identity_basis
    }

    pub fn samplers(&self) -> &[ScalarLaw] {
        &self.samplers
    }

    /// Smallest eigenvalue of the covariance.
    pub fn mu(&self) -> f64 {
        self.sigma[0]
    }

    /// Largest eigenvalue of the covariance.
    pub fn l(&self) -> f64 {
        self.sigma[self.dim() - 1]
    }

    pub fn trace(&self) -> f64 {
        self.sigma.iter().sum()
    }

    /// Draws eigen-coordinates `v`.
    pub fn sample_coords<R: Rng + ?Sized>(&self, rng: &mut R, v: &mut [f64]) {
        for (vi, law) in v.iter_mut().zip(&self.samplers) {
            *vi = law.sample(rng);
        }
    }

    /// Draws `x = U v`. `scratch` must have length `dim`; it is unused when the basis is the identity.
    pub fn sample_input_with<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut [f64], x: &mut [f64]) {
        if self.identity_basis {
            self.sample_coords(rng, x);
            return;
        }
        self.sample_coords(rng, scratch);
        let d = self.dim();
        for (i, xi) in x.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, vj) in scratch.iter().enumerate().take(d) {
                acc += self.basis[(i, j)] * vj;
            }
            *xi = acc;
        }
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut scratch = vec![0.0; d];
        let mut x = vec![0.0; d];
        self.sample_input_with(rng, &mut scratch, &mut x);
        x
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.into_model()
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(bytes)?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_model(self))?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }
}

fn validate_moments(sigma: &[f64], kurt: &[f64]) -> Result<()> {
    for (i, (&s, &k)) in sigma.iter().zip(kurt).enumerate() {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidModel(format!("sigma[{i}] = {s} is not positive")));
        }
        if !(k.is_finite() && k >= s * s * (1.0 - 1e-12)) {
            return Err(Error::InvalidModel(format!(
                "kurt[{i}] = {k} is below sigma[{i}]^2 = {}",
                s * s
            )));
        }
    }
    if sigma.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidModel(format!(
            "sigma must be sorted ascending: {sigma:?}"
        )));
    }
    Ok(())
}

fn validate_orthogonal(u: &DMatrix<f64>) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("basis has non-finite entries".into()));
    }
    let d = u.nrows();
    let gram = u.transpose() * u;
    let err = (gram - DMatrix::<f64>::identity(d, d)).amax();
    if err > ORTHOGONALITY_TOL {
        return Err(Error::InvalidModel(format!(
            "basis is not orthogonal (max |U^T U - I| = {err:.3e})"
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    dim: usize,
    /// Row-major; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    basis: Option<Vec<f64>>,
    sigma: Vec<f64>,
    kurt: Vec<f64>,
    samplers: Vec<ScalarLaw>,
}

impl ModelFile {
    fn from_model(m: &MomentSpec) -> Self {
        let d = m.dim();
        let basis = if m.identity_basis {
            None
        } else {
            Some((0..d * d).map(|k| m.basis[(k / d, k % d)]).collect())
        };
        ModelFile {
            name: Some(m.name.clone()),
            dim: d,
            basis,
            sigma: m.sigma.clone(),
            kurt: m.kurt.clone(),
            samplers: m.samplers.clone(),
        }
    }

    fn into_model(self) -> Result<MomentSpec> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        for (what, len) in [
            ("sigma", self.sigma.len()),
            ("kurt", self.kurt.len()),
            ("samplers", self.samplers.len()),
        ] {
            if len != d {
                return Err(Error::InvalidModel(format!("{what} has length {len}, expected {d}")));
            }
        }
        validate_moments(&self.sigma, &self.kurt)?;
        let basis = match self.basis {
            None => DMatrix::identity(d, d),
            Some(b) => {
                if d.checked_mul(d) != Some(b.len()) {
                    return Err(Error::InvalidModel(format!(
                        "basis has {} entries, expected {}",
                        b.len(),
                        d.saturating_mul(d)
                    )));
                }
                DMatrix::from_row_slice(d, d, &b)
            }
        };
        for (i, law) in self.samplers.iter().enumerate() {
            law.validate()?;
            let (s, k) = (law.second_moment(), law.fourth_moment());
            if !close(s, self.sigma[i]) || !close(k, self.kurt[i]) {
                return Err(Error::InvalidModel(format!(
                    "coordinate {i}: sampler moments ({s}, {k}) differ from declared ({}, {})",
                    self.sigma[i], self.kurt[i]
                )));
            }
        }
        let name = self.name.unwrap_or_else(|| format!("custom(d={d})"));
        MomentSpec::from_laws(name, basis, self.samplers)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= DECLARED_MOMENT_RTOL * a.abs().max(b.abs())
}

fn check_len(model: &MomentSpec, v: &[f64]) -> Result<()> {
    if v.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Eigen-coordinates of `E[x x^T M x x^T]` for `M = U diag(lambda) U^T`:
/// `(k_p - sigma_p^2) lambda_p + sigma_p <sigma, lambda>`.
pub fn fourth_moment_transform(model: &MomentSpec, lambda: &[f64]) -> Result<Vec<f64>> {
    check_len(model, lambda)?;
    let s = model.sigma();
    let dot: f64 = s.iter().zip(lambda).map(|(a, b)| a * b).sum();
    Ok(s.iter()
        .zip(model.kurt())
        .zip(lambda)
        .map(|((&sp, &kp), &lp)| (kp - sp * sp) * lp + sp * dot)
        .collect())
}

/// Eigen-coordinates of the gradient-noise covariance
/// `E[(x x^T - Sigma) M (x x^T - Sigma)]`.
pub fn noise_second_moment(model: &MomentSpec, lambda: &[f64]) -> Result<Vec<f64>> {
    let mut t = fourth_moment_transform(model, lambda)?;
    for ((tp, &sp), &lp) in t.iter_mut().zip(model.sigma()).zip(lambda) {
        *tp -= sp * sp * lp;
    }
    Ok(t)
}

/// `E||grad f_z(w)||^2 / ||grad f(w)||^2` at `w - w* = U e_1`, the direction of
/// the smallest eigenvalue. Any strong-growth constant must be at least this.
pub fn strong_growth_lower_bound(model: &MomentSpec) -> f64 {
    let s1 = model.sigma()[0];
    let k1 = model.kurt()[0];
    (k1 + s1 * (model.trace() - s1)) / (s1 * s1)
}

/// Monte Carlo mean and standard error of the ratio estimated by
/// [`strong_growth_lower_bound`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrongGrowthEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

pub fn strong_growth_monte_carlo(model: &MomentSpec, trials: usize, seed: u64) -> Result<StrongGrowthEstimate> {
    if trials < 2 {
        return Err(Error::InvalidParameter("need at least two trials".into()));
    }
    const CHUNK: usize = 4096;
    let d = model.dim();
    let w0: Vec<f64> = (0..d).map(|i| model.basis()[(i, 0)]).collect();
    let s1 = model.sigma()[0];
    let chunks = trials.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, c as u64);
            let mut scratch = vec![0.0; d];
            let mut x = vec![0.0; d];
            let count = CHUNK.min(trials - c * CHUNK);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..count {
                model.sample_input_with(&mut r, &mut scratch, &mut x);
                let proj: f64 = x.iter().zip(&w0).map(|(a, b)| a * b).sum();
                let nrm: f64 = x.iter().map(|a| a * a).sum();
                let g = proj * proj * nrm / (s1 * s1);
                s += g;
                ss += g * g;
            }
            (s, ss)
        })
        .collect();
    let (s, ss) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = s / n;
    let var = ((ss - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(StrongGrowthEstimate {
        mean,
        stderr: (var / n).sqrt(),
        trials,
    })
}
