//! Token-level distances, ε-ball sizes, and streaming viability oracles.

mod viability;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

pub use viability::{
    HammingOracle, HammingState, LevBandState, LevenshteinOracle, Viability, ViabilityOracle, ViabilityState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Hamming,
    Levenshtein,
}

impl DistanceKind {
    pub fn distance(self, a: &[TokenId], b: &[TokenId]) -> Result<usize> {
        match self {
            DistanceKind::Hamming => hamming(a, b),
            DistanceKind::Levenshtein => Ok(levenshtein(a, b)),
        }
    }
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceKind::Hamming => "hamming",
            DistanceKind::Levenshtein => "levenshtein",
        })
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hamming" | "ham" => Ok(DistanceKind::Hamming),
            "levenshtein" | "lev" => Ok(DistanceKind::Levenshtein),
            other => Err(Error::invalid(format!("unknown distance '{other}'"))),
        }
    }
}

pub fn hamming(a: &[TokenId], b: &[TokenId]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "hamming distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Unit-cost edit distance via the full Wagner-Fischer table (two rows).
pub fn levenshtein(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Last Wagner-Fischer row `D[|a|, 0..=|b|]`.
pub fn levenshtein_last_row(a: &[TokenId], b: &[TokenId]) -> Vec<usize> {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev
}

fn binomial(n: u64, r: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Number of length-`len` sequences within Hamming distance `epsilon` of a fixed one:
/// `sum_{r=0..eps} C(len, r) (|V| - 1)^r`.
pub fn hamming_ball_size(vocab_size: u64, len: u64, epsilon: u64) -> Result<BigUint> {
    if epsilon > len {
        return Err(Error::invalid(format!("epsilon {epsilon} exceeds length {len}")));
    }
    if vocab_size == 0 {
        return Err(Error::invalid("vocabulary size must be positive"));
    }
    let base = BigUint::from(vocab_size - 1);
    let mut total = BigUint::zero();
    for r in 0..=epsilon {
        total += binomial(len, r) * num_traits::pow(base.clone(), r as usize);
    }
    Ok(total)
}

/// Counts the ε-ball around `center` by enumerating all of `V^len`.
///
/// Only for tiny instances; refuses above `limit` sequences.
pub fn ball_size_enumerated(
    kind: DistanceKind,
    vocab_size: usize,
    center: &[TokenId],
    epsilon: usize,
    limit: u64,
) -> Result<u64> {
    let total = (vocab_size as f64).powi(center.len() as i32);
    if total > limit as f64 {
        return Err(Error::GuardExceeded {
            estimated_leaves: total,
            limit: limit as f64,
        });
    }
    let mut seq = vec![0 as TokenId; center.len()];
    let mut count = 0u64;
    loop {
        if kind.distance(&seq, center)? <= epsilon {
            count += 1;
        }
        // odometer increment
        let mut i = seq.len();
        loop {
            if i == 0 {
                return Ok(count);
            }
            i -= 1;
            seq[i] += 1;
            if (seq[i] as usize) < vocab_size {
                break;
            }
            seq[i] = 0;
        }
    }
}
