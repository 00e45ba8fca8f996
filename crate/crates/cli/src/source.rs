use sagd_mixing::chains::{LabelModel, SampleSource, Synthetic, Theta};
use sagd_mixing::contraction::{build_contraction_matrix, ContractionMatrix};
use sagd_mixing::harness::{ingest_dataset, EmpiricalModel, ExperimentConfig, ModelChoice, ThetaChoice};
use sagd_mixing::tuner::{self, Preset};
use sagd_mixing::MomentSpec;

use crate::args::{Common, PresetName};
use crate::CliError;

/// Synthetic model or ingested dataset.
pub enum Source {
    Model(MomentSpec),
    Data(EmpiricalModel),
}

impl Source {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        match (&cfg.model, &cfg.dataset) {
            (_, Some(d)) => Ok(Source::Data(ingest_dataset(&d.path, &d.target, d.ridge)?)),
            (Some(_), None) => Ok(Source::Model(cfg.resolve_model()?)),
            (None, None) => Err(CliError::Usage(
                "no model given: use --model, --mu, --kappa, --dataset or --config".into(),
            )),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Source::Model(m) => m.name(),
            Source::Data(d) => d.name(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Source::Model(m) => m.dim(),
            Source::Data(d) => d.features().len(),
        }
    }

    /// Smallest eigenvalue used for default `eps` and presets.
    pub fn mu(&self) -> f64 {
        match self {
            Source::Model(m) => m.mu(),
            Source::Data(d) => d.mu(),
        }
    }

    pub fn model(&self) -> Result<&MomentSpec, CliError> {
        match self {
            Source::Model(m) => Ok(m),
            Source::Data(_) => Err(CliError::Usage("this needs a synthetic model, not a dataset".into())),
        }
    }

    pub fn contraction(&self, theta: &Theta) -> Result<ContractionMatrix, CliError> {
        Ok(match self {
            Source::Model(m) => build_contraction_matrix(m, theta)?,
            Source::Data(d) => d.contraction(theta)?,
        })
    }

    /// Sample source; `labels` only applies to synthetic models.
    pub fn sampler<'a>(&'a self, labels: &LabelModel) -> Result<Box<dyn SampleSource + 'a>, CliError> {
        Ok(match self {
            Source::Model(m) => Box::new(Synthetic::new(m, labels.clone())?),
            Source::Data(d) => Box::new(d.clone()),
        })
    }

    /// Label model from flags and config. Datasets bring their own labels.
    pub fn labels(&self, common: &Common, cfg: &ExperimentConfig) -> Result<LabelModel, CliError> {
        match self {
            Source::Model(m) => common.labels(cfg, m.dim()),
            Source::Data(_) => {
                if common.labels.is_some() {
                    log::warn!("--labels is ignored for datasets");
                }
                Ok(LabelModel::Zero)
            }
        }
    }

    /// Resolves `theta` from flags, config and model family, in that order.
    /// Datasets default to the Gaussian preset at `mu = ridge`.
    pub fn theta(&self, common: &Common, cfg: &ExperimentConfig) -> Result<Theta, CliError> {
        if let Some(p) = common.preset {
            let preset = match p {
                PresetName::Example8 => Preset::Gaussian {
                    mu: common.mu.unwrap_or_else(|| match cfg.model {
                        Some(ModelChoice::Gaussian { mu }) => mu,
                        _ => self.mu(),
                    }),
                },
                PresetName::Example11 => Preset::UniformRademacher {
                    kappa: common
                        .kappa
                        .or(match cfg.model {
                            Some(ModelChoice::UniformRademacher { kappa }) => Some(kappa),
                            _ => None,
                        })
                        .ok_or_else(|| CliError::Usage("--preset example11 needs --kappa".into()))?,
                },
            };
            return Ok(tuner::preset_theta(preset)?);
        }
        match (self, &cfg.theta) {
            (Source::Model(m), _) => Ok(cfg.resolve_theta(m)?),
            (Source::Data(d), None) => Ok(tuner::preset_theta(Preset::Gaussian { mu: d.mu() })?),
            (Source::Data(_), Some(ThetaChoice::Explicit { alpha, beta, gamma })) => {
                Ok(Theta::new(*alpha, *beta, *gamma)?)
            }
            (Source::Data(_), Some(ThetaChoice::Preset { preset })) => Ok(tuner::preset_theta(*preset)?),
            (Source::Data(_), Some(ThetaChoice::Tuned { .. })) => {
                Err(CliError::Usage("tuning needs a synthetic model".into()))
            }
        }
    }
}
