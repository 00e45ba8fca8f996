use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chains::{SampleSource, Theta};
use crate::contraction::ContractionMatrix;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Standardised real dataset, usable as a sample source by uniform row resampling.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModel {
    name: String,
    features: Vec<String>,
    dropped: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
    ridge: f64,
    scale: f64,
    sigma: Vec<f64>,
    kurt: Vec<f64>,
    basis: DMatrix<f64>,
}

/// Moment summary written by `ingest`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub name: String,
    pub rows: usize,
    pub features: Vec<String>,
    pub dropped: Vec<String>,
    pub ridge: f64,
    /// Global factor applied after standardisation.
    pub scale: f64,
    pub sigma: Vec<f64>,
    pub sigma_effective: Vec<f64>,
    pub kurt: Vec<f64>,
}

impl EmpiricalModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    /// Covariance eigenvalues, ascending, without the ridge.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Covariance eigenvalues plus the ridge.
    pub fn sigma_effective(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s + self.ridge).collect()
    }

    /// Fourth moments of the decorrelated coordinates.
    pub fn kurt(&self) -> &[f64] {
        &self.kurt
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Smallest effective eigenvalue, used as `mu` for presets.
    pub fn mu(&self) -> f64 {
        if self.ridge > 0.0 {
            self.ridge
        } else {
            self.sigma[0]
        }
    }

    /// Contraction matrix built from the empirical moments. The coordinates
    /// are only decorrelated, not independent, so this is a diagnostic.
    pub fn contraction(&self, theta: &Theta) -> Result<ContractionMatrix> {
        let noise_diag: Vec<f64> = self
            .sigma
            .iter()
            .zip(&self.kurt)
            .map(|(s, k)| k - 2.0 * s * s)
            .collect();
        ContractionMatrix::from_parts(
            format!("{}+ridge{}", self.name, self.ridge),
            &self.sigma_effective(),
            &noise_diag,
            &self.sigma,
            *theta,
        )
    }

    pub fn summary(&self) -> EmpiricalSummary {
        EmpiricalSummary {
            name: self.name.clone(),
            rows: self.rows.len(),
            features: self.features.clone(),
            dropped: self.dropped.clone(),
            ridge: self.ridge,
            scale: self.scale,
            sigma: self.sigma.clone(),
            sigma_effective: self.sigma_effective(),
            kurt: self.kurt.clone(),
        }
    }
}

impl SampleSource for EmpiricalModel {
    fn dim(&self) -> usize {
        self.features.len()
    }

    fn draw(&self, inputs: &mut StreamRng, _labels: &mut StreamRng, x: &mut [f64]) -> f64 {
        let i = inputs.random_range(0..self.rows.len());
        x.copy_from_slice(&self.rows[i]);
        self.labels[i]
    }

    fn ridge(&self) -> f64 {
        self.ridge
    }
}

pub fn ingest_dataset(path: impl AsRef<Path>, target: &str, ridge: f64) -> Result<EmpiricalModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    ingest_reader(file, &name, target, ridge)
}

/// Reads a headed numeric CSV. Features are standardised to zero mean and unit
/// variance, constant columns dropped, and all features scaled by one common
/// factor so the largest covariance eigenvalue is at most 1.
pub fn ingest_reader<R: Read>(reader: R, name: &str, target: &str, ridge: f64) -> Result<EmpiricalModel> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let t = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Dataset(format!("target column '{target}' not found")))?;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Dataset(format!(
                "row {} has {} fields, expected {}",
                r + 1,
                rec.len(),
                headers.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::Dataset(format!(
                    "row {}, column '{}': not a number: '{field}'",
                    r + 1,
                    headers[c]
                ))
            })?;
            cols[c].push(v);
        }
    }
    let n = cols[t].len();
    let labels = cols[t].clone();
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    let mut standardized: Vec<Vec<f64>> = Vec::new();
    for (c, col) in cols.iter().enumerate() {
        if c == t {
            continue;
        }
        let nf = n as f64;
        let mean = col.iter().sum::<f64>() / nf;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
        if sd.is_nan() || sd <= 1e-12 * (1.0 + mean.abs()) {
            log::warn!("dropping constant column '{}'", headers[c]);
            dropped.push(headers[c].clone());
            continue;
        }
        features.push(headers[c].clone());
        standardized.push(col.iter().map(|v| (v - mean) / sd).collect());
    }
    let d = features.len();
    if d == 0 {
        return Err(Error::Dataset("no non-constant feature columns".into()));
    }
    if n < d.max(2) {
        return Err(Error::Dataset(format!("{n} rows is fewer than the {d} features")));
    }
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| standardized.iter().map(|c| c[i]).collect()).collect();
    let cov = covariance(&rows, d);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let top = eig.eigenvalues[order[d - 1]];
    let scale = if top > 1.0 { top.sqrt().recip() } else { 1.0 };
    if scale != 1.0 {
        for row in &mut rows {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    let basis = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    let sigma: Vec<f64> = order
        .iter()
        .map(|&j| (eig.eigenvalues[j] * scale * scale).max(0.0))
        .collect();
    let mut kurt = vec![0.0; d];
    for row in &rows {
        for (j, kj) in kurt.iter_mut().enumerate() {
            let v: f64 = (0..d).map(|i| basis[(i, j)] * row[i]).sum();
            *kj += v.powi(4);
        }
    }
    for k in &mut kurt {
        *k /= n as f64;
    }
    Ok(EmpiricalModel {
        name: name.to_string(),
        features,
        dropped,
        rows,
        labels,
        ridge,
        scale,
        sigma,
        kurt,
        basis,
    })
}

fn covariance(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += r[i] * r[j];
            }
        }
    }
    c / rows.len() as f64
}
