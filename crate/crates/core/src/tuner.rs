//! Constrained grid search over `(alpha, beta, gamma)` and the closed-form presets.
//!
//! The program minimises the spectral radius of the block for the smallest
//! eigenvalue subject to `rho(J_d) <= 1 - c sqrt(mu / L)` on the block for the
//! largest. `swap_indices` exchanges the two roles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::Theta;
use crate::contraction::build_contraction_matrix;
use crate::error::{Error, Result};
use crate::moments::MomentSpec;
use crate::spectral;

const FEASIBILITY_SLACK: f64 = 1e-12;
const REFINE_HALF_WIDTH: i32 = 4;
const REFINE_SHRINK: f64 = 4.0;
/// Range of `mu` (or `kappa`) for which the presets carry a guarantee.
pub const PRESET_GUARANTEE_MAX: f64 = 0.02;

/// One axis of the search grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axis {
    /// `start, start + step, ...` up to `stop`, plus any `extra` values.
    Linear {
        start: f64,
        stop: f64,
        step: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        extra: Vec<f64>,
    },
    /// `points` values log-spaced from `start` to `stop` inclusive.
    Log {
        start: f64,
        stop: f64,
        points: usize,
    },
    Values {
        values: Vec<f64>,
    },
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        let mut v = match self {
            Axis::Linear {
                start,
                stop,
                step,
                extra,
            } => {
                let mut v = Vec::new();
                if *step > 0.0 && stop >= start {
                    let n = ((stop - start) / step + 1e-9).floor() as usize;
                    v.extend((0..=n).map(|k| start + k as f64 * step));
                }
                v.extend(extra.iter().copied());
                v
            }
            Axis::Log { start, stop, points } => {
                let (a, b) = (start.log10(), stop.log10());
                match points {
                    0 => Vec::new(),
                    1 => vec![*start],
                    p => (0..*p)
                        .map(|k| pow10(a + (b - a) * k as f64 / (*p - 1) as f64))
                        .collect(),
                }
            }
            Axis::Values { values } => values.clone(),
        };
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Initial refinement step around a grid value: linear spacing, or the
    /// log10 spacing for log axes.
    fn spacing(&self, around: f64) -> Option<(f64, bool)> {
        match self {
            Axis::Linear { step, .. } => Some((*step, false)),
            Axis::Log { start, stop, points } if *points > 1 => {
                Some(((stop.log10() - start.log10()) / (*points - 1) as f64, true))
            }
            Axis::Log { .. } => None,
            Axis::Values { .. } => {
                let v = self.values();
                v.iter()
                    .filter(|&&x| x != around)
                    .map(|x| (x - around).abs())
                    .min_by(f64::total_cmp)
                    .map(|h| (h, false))
            }
        }
    }
}

/// `10^e`, exact at integer exponents.
fn pow10(e: f64) -> f64 {
    let r = e.round();
    if (e - r).abs() < 1e-12 {
        10f64.powi(r as i32)
    } else {
        10f64.powf(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Spectral radius of the block for the smallest eigenvalue.
    RhoJ1,
    /// `max_i rho(J_i) + eps + rank-one perturbation term`.
    JblockBound,
    /// Spectral radius of the full contraction matrix.
    RhoC,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub alpha: Axis,
    pub beta: Axis,
    pub gamma: Axis,
    #[serde(default = "default_c")]
    pub constraint_c: f64,
    #[serde(default = "default_refine")]
    pub refine_rounds: usize,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    /// For [`Objective::JblockBound`]; defaults to `0.05 sqrt(mu)`.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub swap_indices: bool,
}

fn default_c() -> f64 {
    0.2
}

fn default_refine() -> usize {
    2
}

fn default_objective() -> Objective {
    Objective::RhoJ1
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            alpha: Axis::Linear {
                start: 0.0,
                stop: 4.0,
                step: 0.25,
                extra: Vec::new(),
            },
            beta: Axis::Linear {
                start: 0.0,
                stop: 0.999,
                step: 0.005,
                extra: Vec::new(),
            },
            gamma: Axis::Log {
                start: 1e-4,
                stop: 1.0,
                points: 33,
            },
            constraint_c: default_c(),
            refine_rounds: default_refine(),
            objective: default_objective(),
            eps: None,
            swap_indices: false,
        }
    }
}

impl TuneConfig {
    /// Default grids with the preset momentum `1 - 10^{-1/2} sqrt(mu)` added to the beta axis.
    pub fn for_model(model: &MomentSpec) -> Self {
        let mut c = Self::default();
        if let Axis::Linear { extra, .. } = &mut c.beta {
            extra.push(1.0 - 0.1f64.sqrt() * model.mu().sqrt());
        }
        c
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: TuneConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, g) = (self.alpha.values(), self.beta.values(), self.gamma.values());
        if a.is_empty() || b.is_empty() || g.is_empty() {
            return Err(Error::InvalidParameter("tuning grids must be non-empty".into()));
        }
        if a.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::InvalidParameter("alpha grid must be non-negative".into()));
        }
        if b.iter().any(|&x| !(0.0..1.0).contains(&x)) {
            return Err(Error::InvalidParameter("beta grid must lie in [0, 1)".into()));
        }
        if g.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::InvalidParameter("gamma grid must be positive".into()));
        }
        if !(self.constraint_c.is_finite() && self.constraint_c > 0.0) {
            return Err(Error::InvalidParameter("constraint constant must be positive".into()));
        }
        if let Some(e) = self.eps {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidParameter("eps must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub theta: Theta,
    pub objective: Objective,
    pub objective_value: f64,
    /// Spectral radius of the constrained block.
    pub constraint_value: f64,
    /// `1 - c sqrt(mu / L)`.
    pub constraint_bound: f64,
    pub feasible: bool,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    theta: Theta,
    objective: f64,
    constraint: f64,
}

impl Candidate {
    /// Lexicographic `(primary, gamma, beta, alpha)`.
    fn key(&self, primary: f64) -> [f64; 4] {
        [primary, self.theta.gamma, self.theta.beta, self.theta.alpha]
    }
}

fn lex_less(a: [f64; 4], b: [f64; 4]) -> bool {
    for (x, y) in a.iter().zip(&b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

#[derive(Clone, Copy, Debug, Default)]
struct Best {
    feasible: Option<Candidate>,
    least_violating: Option<Candidate>,
}

impl Best {
    fn push(&mut self, c: Candidate, bound: f64) {
        if c.constraint <= bound + FEASIBILITY_SLACK && c.objective.is_finite() {
            if self
                .feasible
                .is_none_or(|b| lex_less(c.key(c.objective), b.key(b.objective)))
            {
                self.feasible = Some(c);
            }
        } else if self
            .least_violating
            .is_none_or(|b| lex_less(c.key(c.constraint), b.key(b.constraint)))
        {
            self.least_violating = Some(c);
        }
    }

    fn merge(mut self, other: Best, bound: f64) -> Best {
        for c in [other.feasible, other.least_violating].into_iter().flatten() {
            self.push(c, bound);
        }
        self
    }

    fn incumbent(&self) -> Option<Candidate> {
        self.feasible.or(self.least_violating)
    }
}

struct Evaluator<'a> {
    model: &'a MomentSpec,
    objective: Objective,
    eps: f64,
    obj_index: usize,
    con_index: usize,
}

impl Evaluator<'_> {
    fn eval(&self, theta: Theta) -> Candidate {
        let blocks = spectral::build_j_blocks(self.model, &theta);
        let radius = |i: usize| spectral::spectral_radius3(&blocks[i]).unwrap_or(f64::INFINITY);
        let constraint = radius(self.con_index);
        let objective = match self.objective {
            Objective::RhoJ1 => radius(self.obj_index),
            Objective::JblockBound => {
                let max = (0..blocks.len()).map(radius).fold(0.0, f64::max);
                max + self.eps + spectral::rank_one_perturbation_term(self.model, &theta)
            }
            Objective::RhoC => build_contraction_matrix(self.model, &theta)
                .and_then(|c| c.spectral_radius())
                .unwrap_or(f64::INFINITY),
        };
        Candidate {
            theta,
            objective,
            constraint,
        }
    }

    fn search(&self, alphas: &[f64], betas: &[f64], gammas: &[f64], bound: f64) -> (Best, usize) {
        let (na, nb) = (alphas.len(), betas.len());
        let total = na * nb * gammas.len();
        let best = (0..total)
            .into_par_iter()
            .fold(Best::default, |mut acc, idx| {
                let theta = Theta {
                    alpha: alphas[idx % na],
                    beta: betas[(idx / na) % nb],
                    gamma: gammas[idx / (na * nb)],
                };
                acc.push(self.eval(theta), bound);
                acc
            })
            .reduce(Best::default, |a, b| a.merge(b, bound));
        (best, total)
    }
}

fn local_axis(center: f64, step: f64, log: bool, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (-REFINE_HALF_WIDTH..=REFINE_HALF_WIDTH)
        .map(|k| {
            if log {
                center * 10f64.powf(k as f64 * step)
            } else {
                center + k as f64 * step
            }
        })
        .filter(|x| x.is_finite() && *x >= lo && *x < hi)
        .collect();
    v.push(center);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Grid search followed by `refine_rounds` rounds of local 4x refinement.
pub fn tune(model: &MomentSpec, config: &TuneConfig) -> Result<TuneResult> {
    config.validate()?;
    let d = model.dim();
    let (obj_index, con_index) = if config.swap_indices { (d - 1, 0) } else { (0, d - 1) };
    let eval = Evaluator {
        model,
        objective: config.objective,
        eps: config.eps.unwrap_or(0.05 * model.mu().sqrt()),
        obj_index,
        con_index,
    };
    let bound = 1.0 - config.constraint_c * (model.mu() / model.l()).sqrt();
    let (mut best, mut evaluations) = eval.search(
        &config.alpha.values(),
        &config.beta.values(),
        &config.gamma.values(),
        bound,
    );
    let inc = best
        .incumbent()
        .ok_or_else(|| Error::Numeric("no grid point could be evaluated".into()))?;
    let mut steps = [
        config.alpha.spacing(inc.theta.alpha),
        config.beta.spacing(inc.theta.beta),
        config.gamma.spacing(inc.theta.gamma),
    ];
    for _ in 0..config.refine_rounds {
        let inc = best.incumbent().expect("incumbent exists after the first pass");
        for s in steps.iter_mut().flatten() {
            s.0 /= REFINE_SHRINK;
        }
        let axis = |i: usize, c: f64, lo: f64, hi: f64| match steps[i] {
            Some((h, log)) => local_axis(c, h, log, lo, hi),
            None => vec![c],
        };
        let alphas = axis(0, inc.theta.alpha, 0.0, f64::INFINITY);
        let betas = axis(1, inc.theta.beta, 0.0, 1.0);
        let gammas = axis(2, inc.theta.gamma, f64::MIN_POSITIVE, f64::INFINITY);
        let (b, n) = eval.search(&alphas, &betas, &gammas, bound);
        best = best.merge(b, bound);
        evaluations += n;
    }
    let (winner, feasible) = match best.feasible {
        Some(c) => (c, true),
        None => (best.least_violating.expect("some candidate exists"), false),
    };
    Ok(TuneResult {
        theta: winner.theta,
        objective: config.objective,
        objective_value: winner.objective,
        constraint_value: winner.constraint,
        constraint_bound: bound,
        feasible,
        evaluations,
    })
}

/// Closed-form hyper-parameters for the two reference models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    /// `alpha = 2, beta = 1 - 10^{-1/2} sqrt(mu), gamma = 0.1`.
    Gaussian { mu: f64 },
    /// `alpha = 2, beta = 1 - 10^{-1/2} sqrt(kappa), gamma = kappa / 10`.
    UniformRademacher { kappa: f64 },
}

pub fn preset_theta(preset: Preset) -> Result<Theta> {
    let (scale, gamma, name) = match preset {
        Preset::Gaussian { mu } => (mu, 0.1, "mu"),
        Preset::UniformRademacher { kappa } => (kappa, kappa / 10.0, "kappa"),
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!("{name} must be positive, got {scale}")));
    }
    if scale > PRESET_GUARANTEE_MAX {
        log::warn!("{name} = {scale} exceeds {PRESET_GUARANTEE_MAX}; the preset carries no rate guarantee here");
    }
    Theta::new(2.0, 1.0 - 0.1f64.sqrt() * scale.sqrt(), gamma)
}

/// Best plain-SGD step size on `gammas` by spectral radius of the contraction matrix.
pub fn best_sgd(model: &MomentSpec, gammas: &Axis) -> Result<(Theta, f64)> {
    let mut best: Option<(Theta, f64)> = None;
    for g in gammas.values() {
        let t = Theta::sgd(g)?;
        let rho = build_contraction_matrix(model, &t)?.spectral_radius()?;
        if best.is_none_or(|(_, r)| rho < r) {
            best = Some((t, rho));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("empty gamma grid".into()))
}
