use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values below this are treated as underflow and trimmed from the tail.
pub const UNDERFLOW_FLOOR: f64 = 1e-280;
pub const MIN_FIT_POINTS: usize = 10;
pub const DEFAULT_BURN_IN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `r` in `exp(-r k)`.
    pub rate: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `ln sq_dist[k]` against `k` after dropping the first
/// `burn_in` fraction of the trajectory.
pub fn fit_exponential_rate(sq_dist: &[f64], burn_in: f64) -> Result<RateFit> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidParameter(format!(
            "burn-in fraction must lie in [0, 1), got {burn_in}"
        )));
    }
    let start = (burn_in * sq_dist.len() as f64).ceil() as usize;
    let window = &sq_dist[start.min(sq_dist.len())..];
    let end = window.iter().rposition(|&v| v >= UNDERFLOW_FLOOR).map_or(0, |i| i + 1);
    let mut xs = Vec::with_capacity(end);
    let mut ys = Vec::with_capacity(end);
    for (i, &v) in window[..end].iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Fit(format!("non-finite value at step {}", start + i)));
        }
        if v >= UNDERFLOW_FLOOR {
            xs.push((start + i) as f64);
            ys.push(v.ln());
        }
    }
    let n = xs.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::Fit(format!("only {n} usable points, need {MIN_FIT_POINTS}")));
    }
    // Centre on the first value so a constant sequence fits exactly.
    let y0 = ys[0];
    for y in &mut ys {
        *y -= y0;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let sse = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RateFit {
        rate: -slope,
        stderr: (sse / (nf - 2.0) / sxx).sqrt(),
        r_squared,
        points: n,
    })
}
