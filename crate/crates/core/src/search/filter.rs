use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::numeric::CompensatedSum;

use super::Final;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    pub lower_bound: f64,
    /// Distance of every final to the target, in input order.
    pub distances: Vec<usize>,
    /// Indices of finals inside the ball.
    pub matched: Vec<usize>,
}

/// Sums the probability of finals within `epsilon` of `target`.
pub fn postprocess_filter(
    finals: &[Final],
    target: &[TokenId],
    dist: DistanceKind,
    epsilon: usize,
) -> Result<FilterResult> {
    let mut distances = Vec::with_capacity(finals.len());
    let mut matched = Vec::new();
    let mut lb = CompensatedSum::new();
    for (i, f) in finals.iter().enumerate() {
        if f.continuation.len() != target.len() {
            return Err(Error::invalid(format!(
                "final {i} has length {}, target has {}",
                f.continuation.len(),
                target.len()
            )));
        }
        let d = dist.distance(&f.continuation, target)?;
        if d <= epsilon {
            matched.push(i);
            lb.add(f.prob());
        }
        distances.push(d);
    }
    Ok(FilterResult {
        lower_bound: lb.value(),
        distances,
        matched,
    })
}
