use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use sagd_mixing::chains::LabelModel;
use sagd_mixing::harness::emit::Sidecar;
use sagd_mixing::harness::{DatasetChoice, ExperimentConfig, Format, ModelChoice, ThetaChoice};
use sagd_mixing::moments::ScalarLaw;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    /// Gaussian model, needs `mu`.
    Example8,
    /// Uniform-Rademacher model, needs `kappa`.
    Example11,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LabelKind {
    Zero,
    Realizable,
    Noisy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

/// Flags shared by every subcommand. Flags override values from `--config`.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Experiment config JSON, or a `.meta.json` sidecar from an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// `gaussian`, `uniform-rademacher`, or a path to a model JSON file.
    #[arg(long, value_name = "PATH|PRESET")]
    pub model: Option<String>,

    /// Smallest eigenvalue of the Gaussian model `diag(mu, 1)`.
    #[arg(long)]
    pub mu: Option<f64>,

    /// Scale of the uniform-Rademacher model.
    #[arg(long)]
    pub kappa: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,

    /// Closed-form hyper-parameters.
    #[arg(long, value_enum, conflicts_with_all = ["alpha", "beta", "gamma", "tuned"])]
    pub preset: Option<PresetName>,

    /// Pick hyper-parameters with the default tuner grid.
    #[arg(long, conflicts_with_all = ["alpha", "beta", "gamma"])]
    pub tuned: bool,

    /// Number of steps.
    #[arg(long)]
    pub n: Option<usize>,

    /// Number of independent runs.
    #[arg(long)]
    pub runs: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Pseudospectrum level; defaults to `0.05 sqrt(mu)`.
    #[arg(long)]
    pub eps: Option<f64>,

    /// Fraction of the trajectory skipped by rate fits.
    #[arg(long)]
    pub burn_in: Option<f64>,

    /// Starting point; the chain starts at `(w0, w0)`. Defaults to all ones.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub w0: Option<Vec<f64>>,

    #[arg(long, value_enum)]
    pub labels: Option<LabelKind>,

    /// Ground truth for realizable and noisy labels. Defaults to all ones.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub w_star: Option<Vec<f64>>,

    /// Variance of Gaussian label noise.
    #[arg(long)]
    pub noise_variance: Option<f64>,

    /// Output file; a `<out>.meta.json` sidecar is written next to it.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    /// Numeric CSV with a header row.
    #[arg(long, value_name = "CSV", conflicts_with = "model")]
    pub dataset: Option<PathBuf>,

    /// Label column of the dataset.
    #[arg(long)]
    pub target: Option<String>,

    /// L2 penalty for dataset runs.
    #[arg(long)]
    pub ridge: Option<f64>,
}

const DEFAULT_SCALE: f64 = 0.05;

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let cfg = if value.get("library").is_some() && value.get("config").is_some() {
        let sc: Sidecar =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_value(sc.config)
    } else {
        serde_json::from_value(value)
    };
    let cfg: ExperimentConfig = cfg.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl Common {
    /// Config file (or defaults) with every flag applied on top.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        self.apply_model(&mut cfg)?;
        self.apply_dataset(&mut cfg)?;
        self.apply_theta(&mut cfg)?;
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.eps {
            cfg.eps = Some(e);
        }
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
        }
        if let Some(w) = &self.w0 {
            cfg.w0 = Some(w.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(f) = self.format {
            cfg.format = match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_model(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        let existing_mu = match cfg.model {
            Some(ModelChoice::Gaussian { mu }) => Some(mu),
            _ => None,
        };
        let existing_kappa = match cfg.model {
            Some(ModelChoice::UniformRademacher { kappa }) => Some(kappa),
            _ => None,
        };
        let model = match self.model.as_deref() {
            Some("gaussian") => {
                if self.kappa.is_some() {
                    return Err(CliError::Usage("--kappa does not apply to the gaussian model".into()));
                }
                Some(ModelChoice::Gaussian {
                    mu: self.mu.or(existing_mu).unwrap_or(DEFAULT_SCALE),
                })
            }
            Some("uniform-rademacher") => {
                if self.mu.is_some() {
                    return Err(CliError::Usage(
                        "--mu does not apply to the uniform-rademacher model".into(),
                    ));
                }
                Some(ModelChoice::UniformRademacher {
                    kappa: self.kappa.or(existing_kappa).unwrap_or(DEFAULT_SCALE),
                })
            }
            Some(path) => {
                if self.mu.is_some() || self.kappa.is_some() {
                    return Err(CliError::Usage("--mu and --kappa only apply to built-in models".into()));
                }
                Some(ModelChoice::File { path: path.into() })
            }
            None => match (self.mu, self.kappa) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage("give --mu or --kappa, not both".into()));
                }
                (Some(mu), None) if existing_kappa.is_none() => Some(ModelChoice::Gaussian { mu }),
                (None, Some(kappa)) if existing_mu.is_none() => Some(ModelChoice::UniformRademacher { kappa }),
                (None, None) => None,
                _ => return Err(CliError::Usage("--mu/--kappa do not match the configured model".into())),
            },
        };
        if let Some(m) = model {
            cfg.model = Some(m);
            cfg.dataset = None;
        }
        Ok(())
    }

    fn apply_dataset(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(path) = &self.dataset {
            let prev = cfg.dataset.take();
            let target = self
                .target
                .clone()
                .or_else(|| prev.as_ref().map(|d| d.target.clone()))
                .ok_or_else(|| CliError::Usage("--dataset needs --target".into()))?;
            let ridge = self.ridge.or(prev.as_ref().map(|d| d.ridge)).unwrap_or(1e-3);
            cfg.dataset = Some(DatasetChoice {
                path: path.clone(),
                target,
                ridge,
            });
            cfg.model = None;
        } else if let Some(d) = &mut cfg.dataset {
            if let Some(t) = &self.target {
                d.target = t.clone();
            }
            if let Some(r) = self.ridge {
                d.ridge = r;
            }
        } else if self.target.is_some() || self.ridge.is_some() {
            return Err(CliError::Usage("--target and --ridge need --dataset".into()));
        }
        Ok(())
    }

    fn apply_theta(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        match (self.alpha, self.beta, self.gamma) {
            (Some(alpha), Some(beta), Some(gamma)) => cfg.theta = Some(ThetaChoice::Explicit { alpha, beta, gamma }),
            (None, None, None) => {}
            _ => return Err(CliError::Usage("give all of --alpha, --beta and --gamma".into())),
        }
        if self.tuned {
            cfg.theta = Some(ThetaChoice::Tuned { config: None });
        }
        Ok(())
    }

    /// Label model for synthetic runs of dimension `d`.
    pub fn labels(&self, cfg: &ExperimentConfig, d: usize) -> Result<LabelModel, CliError> {
        let w_star = self.w_star.clone().unwrap_or_else(|| vec![1.0; d]);
        let noise = ScalarLaw::Gaussian {
            variance: self.noise_variance.unwrap_or(1.0),
        };
        Ok(match self.labels {
            Some(LabelKind::Zero) => LabelModel::Zero,
            Some(LabelKind::Realizable) => LabelModel::Realizable { w_star },
            Some(LabelKind::Noisy) => LabelModel::Noisy { w_star, noise },
            None => {
                if self.w_star.is_some() || self.noise_variance.is_some() {
                    return Err(CliError::Usage("--w-star and --noise-variance need --labels".into()));
                }
                cfg.labels.clone()
            }
        })
    }
}

/// `lin:START:STOP:STEP`, `log:START:STOP:POINTS` or a comma-separated list.
pub fn parse_axis(s: &str) -> Result<sagd_mixing::tuner::Axis, String> {
    use sagd_mixing::tuner::Axis;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["lin", a, b, c] => Ok(Axis::Linear {
            start: num(a)?,
            stop: num(b)?,
            step: num(c)?,
            extra: Vec::new(),
        }),
        ["log", a, b, c] => Ok(Axis::Log {
            start: num(a)?,
            stop: num(b)?,
            points: c.trim().parse().map_err(|e| format!("'{c}': {e}"))?,
        }),
        [list] => Ok(Axis::Values {
            values: list.split(',').map(num).collect::<Result<_, _>>()?,
        }),
        _ => Err(format!(
            "bad grid '{s}': use lin:START:STOP:STEP, log:START:STOP:POINTS or a list"
        )),
    }
}
