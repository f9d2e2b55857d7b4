use crate::error::{Error, Result};
use crate::model::StepProfile;
use crate::numeric::floor_tolerant;

/// Per-step threshold for counting "low" steps along a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BudgetThreshold {
    /// Steps whose realized token has rank >= R (so probability <= 1/R).
    Rank(usize),
    /// Steps whose realized token has probability <= α.
    Prob(f64),
}

impl BudgetThreshold {
    fn alpha(self) -> Result<f64> {
        match self {
            BudgetThreshold::Rank(r) if r >= 2 => Ok(1.0 / r as f64),
            BudgetThreshold::Rank(r) => Err(Error::invalid(format!("rank threshold must be >= 2, got {r}"))),
            BudgetThreshold::Prob(a) if a > 0.0 && a < 1.0 => Ok(a),
            BudgetThreshold::Prob(a) => Err(Error::invalid(format!("alpha must be in (0, 1), got {a}"))),
        }
    }
}

/// Maximum number of low steps on any length-`len` path with probability >= `tau`:
/// `min(len, floor(ln τ / ln α))`.
pub fn rank_budget(tau: f64, threshold: BudgetThreshold, len: usize) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau must be in (0, 1], got {tau}")));
    }
    let alpha = threshold.alpha()?;
    let c = floor_tolerant(tau.ln() / alpha.ln()).max(0.0) as usize;
    Ok(c.min(len))
}

/// Counts low steps of a realized path and compares them with the budget.
/// Paths below `tau` are not constrained and always pass.
pub fn check_rank_budget(profile: &[StepProfile], tau: f64, threshold: BudgetThreshold) -> Result<bool> {
    let path_prob: f64 = profile.iter().map(|s| s.prob).product();
    if path_prob < tau {
        return Ok(true);
    }
    let budget = rank_budget(tau, threshold, profile.len())?;
    let low = profile
        .iter()
        .filter(|s| match threshold {
            BudgetThreshold::Rank(r) => s.rank.is_none_or(|rank| rank >= r),
            BudgetThreshold::Prob(a) => s.prob <= a,
        })
        .count();
    Ok(low <= budget)
}

/// Cumulative probability above which a path always survives a width-B prune.
pub fn heavy_mass_floor(beam_width: usize) -> f64 {
    1.0 / (beam_width as f64 + 1.0)
}

/// Minimum geometric-mean per-token probability of a length-`len` path with mass >= `tau`.
pub fn geometric_mean_floor(tau: f64, len: usize) -> f64 {
    tau.powf(1.0 / len as f64)
}
