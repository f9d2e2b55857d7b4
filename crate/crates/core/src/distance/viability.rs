//! Streaming per-path viability state for ε-pruned search.
//!
//! An oracle is built for one (target, ε) pair. `update` appends one
//! generated token and returns the new state together with a lower bound on
//! the final distance reachable by any completion of the partial path.

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::model::TokenId;

use super::DistanceKind;

pub trait ViabilityOracle {
    type State: Clone + Debug + Send + Sync;

    fn target(&self) -> &[TokenId];

    fn epsilon(&self) -> usize;

    fn init(&self) -> Self::State;

    /// Appends `token` at depth `state.depth() + 1`. Errors past the target length.
    fn update(&self, state: &Self::State, token: TokenId) -> Result<(Self::State, usize)>;

    /// Acceptance test at full depth.
    fn is_final(&self, state: &Self::State) -> bool;

    /// Distance of a completed path (exact whenever it is within ε).
    fn final_distance(&self, state: &Self::State) -> usize;
}

fn past_end(depth: usize, len: usize) -> Error {
    Error::Contract(format!("viability update at depth {} past target length {len}", depth + 1))
}

#[derive(Clone, Debug)]
pub struct HammingOracle {
    target: Vec<TokenId>,
    epsilon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HammingState {
    pub mismatches: usize,
    pub depth: usize,
}

impl HammingOracle {
    pub fn new(target: Vec<TokenId>, epsilon: usize) -> Self {
        Self { target, epsilon }
    }
}

impl ViabilityOracle for HammingOracle {
    type State = HammingState;

    fn target(&self) -> &[TokenId] {
        &self.target
    }

    fn epsilon(&self) -> usize {
        self.epsilon
    }

    fn init(&self) -> HammingState {
        HammingState {
            mismatches: 0,
            depth: 0,
        }
    }

    fn update(&self, state: &HammingState, token: TokenId) -> Result<(HammingState, usize)> {
        let expected = *self
            .target
            .get(state.depth)
            .ok_or_else(|| past_end(state.depth, self.target.len()))?;
        let next = HammingState {
            mismatches: state.mismatches + usize::from(token != expected),
            depth: state.depth + 1,
        };
        Ok((next, next.mismatches))
    }

    fn is_final(&self, state: &HammingState) -> bool {
        state.depth == self.target.len() && state.mismatches <= self.epsilon
    }

    fn final_distance(&self, state: &HammingState) -> usize {
        state.mismatches
    }
}

/// Cells outside the band, or provably above ε, saturate here.
const OUT_OF_BAND: u32 = u32::MAX / 4;

/// Banded Wagner-Fischer row `D[depth, lo..lo + row.len()]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevBandState {
    pub depth: usize,
    pub lo: usize,
    pub row: Vec<u32>,
}

impl LevBandState {
    pub fn hi(&self) -> usize {
        self.lo + self.row.len() - 1
    }

    /// `D[depth, j]`, or `None` outside the stored band.
    pub fn get(&self, j: usize) -> Option<u32> {
        if j < self.lo || j > self.hi() {
            None
        } else {
            Some(self.row[j - self.lo])
        }
    }

    pub fn min(&self) -> u32 {
        self.row.iter().copied().min().unwrap_or(OUT_OF_BAND)
    }
}

#[derive(Clone, Debug)]
pub struct LevenshteinOracle {
    target: Vec<TokenId>,
    epsilon: usize,
}

impl LevenshteinOracle {
    pub fn new(target: Vec<TokenId>, epsilon: usize) -> Self {
        Self { target, epsilon }
    }

    fn band(&self, depth: usize) -> (usize, usize) {
        (
            depth.saturating_sub(self.epsilon),
            (depth + self.epsilon).min(self.target.len()),
        )
    }

    /// Fills the next banded row into `out`, reusing its allocation.
    pub fn update_into(&self, prev: &LevBandState, token: TokenId, out: &mut LevBandState) -> Result<usize> {
        let depth = prev.depth + 1;
        if depth > self.target.len() {
            return Err(past_end(prev.depth, self.target.len()));
        }
        let (lo, hi) = self.band(depth);
        out.depth = depth;
        out.lo = lo;
        out.row.clear();
        let mut left = OUT_OF_BAND;
        for j in lo..=hi {
            let del = prev.get(j).map_or(OUT_OF_BAND, |d| d.saturating_add(1));
            let sub = if j == 0 {
                OUT_OF_BAND
            } else {
                prev.get(j - 1).map_or(OUT_OF_BAND, |d| {
                    d.saturating_add(u32::from(token != self.target[j - 1]))
                })
            };
            let ins = left.saturating_add(1);
            let cell = del.min(sub).min(ins).min(OUT_OF_BAND);
            out.row.push(cell);
            left = cell;
        }
        Ok(out.min() as usize)
    }
}

impl ViabilityOracle for LevenshteinOracle {
    type State = LevBandState;

    fn target(&self) -> &[TokenId] {
        &self.target
    }

    fn epsilon(&self) -> usize {
        self.epsilon
    }

    fn init(&self) -> LevBandState {
        let hi = self.epsilon.min(self.target.len());
        LevBandState {
            depth: 0,
            lo: 0,
            row: (0..=hi as u32).collect(),
        }
    }

    fn update(&self, state: &LevBandState, token: TokenId) -> Result<(LevBandState, usize)> {
        let mut out = LevBandState {
            depth: 0,
            lo: 0,
            row: Vec::with_capacity(2 * self.epsilon + 1),
        };
        let star = self.update_into(state, token, &mut out)?;
        Ok((out, star))
    }

    fn is_final(&self, state: &LevBandState) -> bool {
        state.depth == self.target.len() && self.final_distance(state) <= self.epsilon
    }

    fn final_distance(&self, state: &LevBandState) -> usize {
        state.get(self.target.len()).unwrap_or(OUT_OF_BAND) as usize
    }
}

/// Runtime-selected oracle.
#[derive(Clone, Debug)]
pub enum Viability {
    Hamming(HammingOracle),
    Levenshtein(LevenshteinOracle),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViabilityState {
    Hamming(HammingState),
    Levenshtein(LevBandState),
}

impl Viability {
    pub fn new(kind: DistanceKind, target: Vec<TokenId>, epsilon: usize) -> Self {
        match kind {
            DistanceKind::Hamming => Viability::Hamming(HammingOracle::new(target, epsilon)),
            DistanceKind::Levenshtein => Viability::Levenshtein(LevenshteinOracle::new(target, epsilon)),
        }
    }

    pub fn kind(&self) -> DistanceKind {
        match self {
            Viability::Hamming(_) => DistanceKind::Hamming,
            Viability::Levenshtein(_) => DistanceKind::Levenshtein,
        }
    }
}

impl ViabilityOracle for Viability {
    type State = ViabilityState;

    fn target(&self) -> &[TokenId] {
        match self {
            Viability::Hamming(o) => o.target(),
            Viability::Levenshtein(o) => o.target(),
        }
    }

    fn epsilon(&self) -> usize {
        match self {
            Viability::Hamming(o) => o.epsilon(),
            Viability::Levenshtein(o) => o.epsilon(),
        }
    }

    fn init(&self) -> ViabilityState {
        match self {
            Viability::Hamming(o) => ViabilityState::Hamming(o.init()),
            Viability::Levenshtein(o) => ViabilityState::Levenshtein(o.init()),
        }
    }

    fn update(&self, state: &ViabilityState, token: TokenId) -> Result<(ViabilityState, usize)> {
        match (self, state) {
            (Viability::Hamming(o), ViabilityState::Hamming(s)) => {
                o.update(s, token).map(|(s, e)| (ViabilityState::Hamming(s), e))
            }
            (Viability::Levenshtein(o), ViabilityState::Levenshtein(s)) => {
                o.update(s, token).map(|(s, e)| (ViabilityState::Levenshtein(s), e))
            }
            _ => Err(Error::Contract("viability state does not match oracle kind".into())),
        }
    }

    fn is_final(&self, state: &ViabilityState) -> bool {
        match (self, state) {
            (Viability::Hamming(o), ViabilityState::Hamming(s)) => o.is_final(s),
            (Viability::Levenshtein(o), ViabilityState::Levenshtein(s)) => o.is_final(s),
            _ => false,
        }
    }

    fn final_distance(&self, state: &ViabilityState) -> usize {
        match (self, state) {
            (Viability::Hamming(o), ViabilityState::Hamming(s)) => o.final_distance(s),
            (Viability::Levenshtein(o), ViabilityState::Levenshtein(s)) => o.final_distance(s),
            _ => usize::MAX,
        }
    }
}
