use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::emit::Format;
use super::fit::DEFAULT_BURN_IN;
use crate::chains::{LabelModel, Theta};
use crate::error::{Error, Result};
use crate::moments::MomentSpec;
use crate::tuner::{self, Preset, TuneConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelChoice {
    /// Covariance `diag(mu, 1)`.
    Gaussian {
        mu: f64,
    },
    UniformRademacher {
        kappa: f64,
    },
    /// Model JSON file.
    File {
        path: PathBuf,
    },
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<MomentSpec> {
        match self {
            ModelChoice::Gaussian { mu } => MomentSpec::gaussian_two_scale(*mu),
            ModelChoice::UniformRademacher { kappa } => MomentSpec::uniform_rademacher(*kappa),
            ModelChoice::File { path } => MomentSpec::read_json(path),
        }
    }

    /// Closed-form hyper-parameters matching this model family.
    pub fn preset(&self) -> Result<Preset> {
        match self {
            ModelChoice::Gaussian { mu } => Ok(Preset::Gaussian { mu: *mu }),
            ModelChoice::UniformRademacher { kappa } => Ok(Preset::UniformRademacher { kappa: *kappa }),
            ModelChoice::File { .. } => Err(Error::InvalidParameter(
                "presets need a gaussian or uniform-rademacher model".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetChoice {
    pub path: PathBuf,
    pub target: String,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_ridge() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaChoice {
    Explicit {
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
    Preset {
        preset: Preset,
    },
    Tuned {
        #[serde(default)]
        config: Option<TuneConfig>,
    },
}

impl ThetaChoice {
    pub fn resolve(&self, model: &MomentSpec) -> Result<Theta> {
        match self {
            ThetaChoice::Explicit { alpha, beta, gamma } => Theta::new(*alpha, *beta, *gamma),
            ThetaChoice::Preset { preset } => tuner::preset_theta(*preset),
            ThetaChoice::Tuned { config } => {
                let cfg = config.clone().unwrap_or_else(|| TuneConfig::for_model(model));
                let r = tuner::tune(model, &cfg)?;
                if !r.feasible {
                    log::warn!("tuner found no feasible point; using the least violating one");
                }
                Ok(r.theta)
            }
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Option<ModelChoice>,
    #[serde(default)]
    pub dataset: Option<DatasetChoice>,
    #[serde(default = "default_labels")]
    pub labels: LabelModel,
    #[serde(default)]
    pub theta: Option<ThetaChoice>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

fn default_labels() -> LabelModel {
    LabelModel::Zero
}

fn default_n() -> usize {
    1000
}

fn default_runs() -> usize {
    10
}

fn default_seed() -> u64 {
    42
}

fn default_burn_in() -> f64 {
    DEFAULT_BURN_IN
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            dataset: None,
            labels: default_labels(),
            theta: None,
            n: default_n(),
            runs: default_runs(),
            seed: default_seed(),
            eps: None,
            burn_in: default_burn_in(),
            w0: None,
            out: None,
            format: Format::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        if self.n < 10 {
            return Err(Error::InvalidParameter("n must be at least 10".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidParameter("burn_in must lie in [0, 1)".into()));
        }
        if let Some(e) = self.eps {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidParameter("eps must be positive".into()));
            }
        }
        if self.model.is_some() && self.dataset.is_some() {
            return Err(Error::InvalidParameter(
                "give either a model or a dataset, not both".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve_model(&self) -> Result<MomentSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no model given".into()))?
            .resolve()
    }

    /// Explicit, preset or tuned theta; defaults to the preset for the model family.
    pub fn resolve_theta(&self, model: &MomentSpec) -> Result<Theta> {
        match &self.theta {
            Some(t) => t.resolve(model),
            None => match &self.model {
                Some(m) => tuner::preset_theta(m.preset()?),
                None => Err(Error::InvalidParameter("no theta given".into())),
            },
        }
    }

    /// `eps` or `0.05 sqrt(mu)`.
    pub fn eps_for(&self, mu: f64) -> f64 {
        self.eps.unwrap_or(0.05 * mu.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = ExperimentConfig::from_json_str(r#"{"model":{"kind":"gaussian","mu":0.05}}"#).unwrap();
        assert_eq!(c.runs, 10);
        assert_eq!(c.seed, 42);
        assert_eq!(c.n, 1000);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&s).unwrap(), c);
        let m = c.resolve_model().unwrap();
        let t = c.resolve_theta(&m).unwrap();
        assert_eq!(t.alpha, 2.0);
    }

    #[test]
    fn theta_choices() {
        let m = MomentSpec::gaussian_two_scale(0.05).unwrap();
        let e: ThetaChoice = serde_json::from_str(r#"{"kind":"explicit","alpha":1,"beta":0.5,"gamma":0.1}"#).unwrap();
        assert_eq!(e.resolve(&m).unwrap(), Theta::new(1.0, 0.5, 0.1).unwrap());
        let p: ThetaChoice =
            serde_json::from_str(r#"{"kind":"preset","preset":{"kind":"gaussian","mu":0.01}}"#).unwrap();
        assert_eq!(p.resolve(&m).unwrap().gamma, 0.1);
        let t: ThetaChoice = serde_json::from_str(r#"{"kind":"tuned"}"#).unwrap();
        assert!(t.resolve(&m).is_ok());
    }

    #[test]
    fn invalid_configs() {
        assert!(ExperimentConfig::from_json_str(r#"{"runs":0}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"n":5}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json_str(
            r#"{"model":{"kind":"gaussian","mu":0.1},"dataset":{"path":"x.csv","target":"y"}}"#
        )
        .is_err());
    }
}
