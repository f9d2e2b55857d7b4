//! Top-k constrained beam search.
//!
//! The baseline variant returns every depth-T candidate of the last
//! expansion together with its exact top-k path probability; near-verbatim
//! filtering is a separate post-step. The pruned variants discard children
//! that a [`ViabilityOracle`] proves cannot finish within ε of the target,
//! and bank the mass of viable children lost to the across-beam prune so the
//! run also yields an upper bound.

mod audit;
mod filter;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::distance::{DistanceKind, Viability, ViabilityOracle, ViabilityState};
use crate::error::{Error, Result};
use crate::model::{topk_step, validate_sequences, DecodingPolicy, LogitRow, TokenDistributionProvider, TokenId};
use crate::numeric::CompensatedSum;

pub use audit::{mass_audit, MassAudit};
pub use filter::{postprocess_filter, FilterResult};

/// Distance metric and budget defining an ε-ball around the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ball {
    pub dist: DistanceKind,
    pub epsilon: usize,
}

impl Ball {
    pub fn new(dist: DistanceKind, epsilon: usize) -> Self {
        Self { dist, epsilon }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// Unconstrained search. With a target, finals are filtered against
    /// `filter` to produce the lower bound.
    Baseline { filter: Option<Ball> },
    /// Viability-pruned search for the given ball.
    Pruned { ball: Ball },
}

impl Variant {
    pub fn ball(&self) -> Option<Ball> {
        match *self {
            Variant::Baseline { filter } => filter,
            Variant::Pruned { ball } => Some(ball),
        }
    }

    pub fn is_pruned(&self) -> bool {
        matches!(self, Variant::Pruned { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub policy: DecodingPolicy,
    pub suffix_len: usize,
    pub variant: Variant,
    #[serde(default)]
    pub tau_min: Option<f64>,
    /// Keep the individual EOS-terminated paths (their mass is always tallied).
    #[serde(default)]
    pub record_eos: bool,
    /// Tally mass discarded by viability pruning, for the full accounting identity.
    #[serde(default)]
    pub track_nonviable: bool,
}

impl SearchConfig {
    pub fn baseline(beam_width: usize, k: usize, suffix_len: usize) -> Self {
        Self {
            beam_width,
            policy: DecodingPolicy::top_k(k),
            suffix_len,
            variant: Variant::Baseline { filter: None },
            tau_min: None,
            record_eos: false,
            track_nonviable: false,
        }
    }

    pub fn pruned(beam_width: usize, k: usize, suffix_len: usize, ball: Ball) -> Self {
        Self {
            variant: Variant::Pruned { ball },
            ..Self::baseline(beam_width, k, suffix_len)
        }
    }

    pub fn with_filter(mut self, ball: Ball) -> Self {
        if let Variant::Baseline { filter } = &mut self.variant {
            *filter = Some(ball);
        }
        self
    }

    pub fn with_tau_min(mut self, tau: f64) -> Self {
        self.tau_min = Some(tau);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be >= 1"));
        }
        if self.suffix_len == 0 {
            return Err(Error::invalid("suffix length must be >= 1"));
        }
        if let Some(b) = self.variant.ball() {
            if b.epsilon > self.suffix_len {
                return Err(Error::invalid(format!(
                    "epsilon {} exceeds suffix length {}",
                    b.epsilon, self.suffix_len
                )));
            }
        }
        if let Some(tau) = self.tau_min {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::invalid(format!("tau_min must be in (0, 1], got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BeamItem {
    pub continuation: Vec<TokenId>,
    pub logp: f64,
    pub aux: Option<ViabilityState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Final {
    pub continuation: Vec<TokenId>,
    pub logp: f64,
    /// Distance to the target, when a target and ball are known.
    pub distance: Option<usize>,
}

impl Final {
    pub fn prob(&self) -> f64 {
        self.logp.exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EosRecord {
    pub continuation: Vec<TokenId>,
    pub logp: f64,
    pub depth: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "depth", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    EmptyViableSet(usize),
    TauMinCutoff(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub prefill_tokens: u64,
    pub decode_tokens: u64,
}

impl CostLedger {
    pub fn total(&self) -> u64 {
        self.prefill_tokens + self.decode_tokens
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub variant: Variant,
    pub finals: Vec<Final>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Mass of ε-viable partial paths lost to the across-beam prune (pruned variants).
    pub bank: f64,
    /// Mass of all depth-T candidates reaching the final step.
    pub covered_mass: f64,
    /// Mass lost to the across-beam prune, viable or not.
    pub pruned_mass: f64,
    pub eos_mass: f64,
    /// Mass discarded by viability tests; only tallied when requested.
    pub nonviable_mass: Option<f64>,
    /// Mass of live beam items abandoned by a τ_min cutoff.
    pub abandoned_mass: f64,
    pub eos_records: Vec<EosRecord>,
    pub termination: Termination,
    pub token_evals: u64,
    pub cost: CostLedger,
    pub warnings: Vec<String>,
}

impl SearchOutcome {
    /// The upper bound carries information only when the lower bound is positive.
    pub fn upper_bound_informative(&self) -> bool {
        self.lower_bound > 0.0
    }
}

fn rank_candidates(a: &BeamItem, b: &BeamItem) -> Ordering {
    b.logp
        .total_cmp(&a.logp)
        .then_with(|| a.continuation.cmp(&b.continuation))
}

struct Ledgers {
    pruned: CompensatedSum,
    bank: CompensatedSum,
    eos: CompensatedSum,
    nonviable: CompensatedSum,
}

/// Runs top-k constrained beam search from `prefix`.
///
/// `target` is required for the pruned variants and optional for the
/// baseline, where it only feeds the post-search filter.
pub fn kcbs<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    target: Option<&[TokenId]>,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let vocab = validate_sequences(provider, prefix, target)?;
    config.policy.validate(&vocab)?;
    if let Some(t) = target {
        if t.len() != config.suffix_len {
            return Err(Error::invalid(format!(
                "target length {} differs from suffix length {}",
                t.len(),
                config.suffix_len
            )));
        }
    }
    let oracle = match config.variant {
        Variant::Pruned { ball } => {
            let t = target.ok_or_else(|| Error::invalid("pruned search needs a target"))?;
            Some(Viability::new(ball.dist, t.to_vec(), ball.epsilon))
        }
        Variant::Baseline { .. } => None,
    };

    let b = config.beam_width;
    let k = config.policy.k;
    let t_len = config.suffix_len;
    let mut warnings = Vec::new();
    if b > k * k {
        warnings.push(format!("beam width {b} exceeds k^2 = {}", k * k));
    }
    let tau_beam = config.tau_min.map(|tau| tau / (b * k) as f64);

    let mut cost = CostLedger {
        prefill_tokens: prefix.len() as u64,
        decode_tokens: 0,
    };
    let mut rows = fetch_rows(provider, prefix, &[Vec::new()], 0, vocab.size)?;
    let mut beam = vec![BeamItem {
        continuation: Vec::new(),
        logp: 0.0,
        aux: oracle.as_ref().map(|o| o.init()),
    }];
    let mut ledgers = Ledgers {
        pruned: CompensatedSum::new(),
        bank: CompensatedSum::new(),
        eos: CompensatedSum::new(),
        nonviable: CompensatedSum::new(),
    };
    let mut eos_records = Vec::new();

    let finish = |finals: Vec<Final>,
                  covered: f64,
                  abandoned: f64,
                  termination: Termination,
                  ledgers: &Ledgers,
                  eos_records: Vec<EosRecord>,
                  cost: CostLedger,
                  warnings: Vec<String>|
     -> Result<SearchOutcome> {
        let bank = ledgers.bank.value();
        let (finals, lower_bound) = match (config.variant, target) {
            (Variant::Pruned { .. }, _) => {
                let lb: f64 = finals.iter().map(Final::prob).collect::<CompensatedSum>().value();
                (finals, lb)
            }
            (Variant::Baseline { filter: Some(ball) }, Some(t)) => {
                let res = postprocess_filter(&finals, t, ball.dist, ball.epsilon)?;
                let mut finals = finals;
                for (f, d) in finals.iter_mut().zip(res.distances) {
                    f.distance = Some(d);
                }
                (finals, res.lower_bound)
            }
            (Variant::Baseline { .. }, _) => (finals, 0.0),
        };
        let upper_bound = match config.variant {
            Variant::Baseline { .. } => lower_bound + (1.0 - covered),
            // live beam mass abandoned by a τ_min cutoff may still be viable
            Variant::Pruned { .. } => lower_bound + bank + abandoned,
        };
        Ok(SearchOutcome {
            variant: config.variant,
            finals,
            lower_bound: lower_bound.clamp(0.0, 1.0),
            upper_bound: upper_bound.clamp(0.0, 1.0).max(lower_bound.clamp(0.0, 1.0)),
            bank,
            covered_mass: covered,
            pruned_mass: ledgers.pruned.value(),
            eos_mass: ledgers.eos.value(),
            nonviable_mass: config.track_nonviable.then(|| ledgers.nonviable.value()),
            abandoned_mass: abandoned,
            eos_records,
            termination,
            token_evals: cost.total(),
            cost,
            warnings,
        })
    };

    for depth in 1..=t_len {
        let mut candidates: Vec<BeamItem> = Vec::with_capacity(beam.len() * k);
        for (item, row) in beam.iter().zip(&rows) {
            let step = topk_step(row, &config.policy)?;
            for (tok, lp) in step.iter() {
                let logp = item.logp + lp;
                let aux = match (&oracle, &item.aux) {
                    (Some(o), Some(state)) => {
                        let (next, star) = o.update(state, tok)?;
                        if star > o.epsilon() {
                            if config.track_nonviable {
                                ledgers.nonviable.add(logp.exp());
                            }
                            continue;
                        }
                        Some(next)
                    }
                    _ => None,
                };
                let mut continuation = Vec::with_capacity(depth);
                continuation.extend_from_slice(&item.continuation);
                continuation.push(tok);
                candidates.push(BeamItem { continuation, logp, aux });
            }
        }

        if depth == t_len {
            let covered: f64 = candidates.iter().map(|c| c.logp.exp()).collect::<CompensatedSum>().value();
            let mut finals = Vec::with_capacity(candidates.len());
            for c in candidates {
                let distance = match (&oracle, &c.aux) {
                    (Some(o), Some(state)) => {
                        if !o.is_final(state) {
                            continue;
                        }
                        Some(o.final_distance(state))
                    }
                    _ => None,
                };
                finals.push(Final {
                    continuation: c.continuation,
                    logp: c.logp,
                    distance,
                });
            }
            let termination = if oracle.is_some() && finals.is_empty() {
                Termination::EmptyViableSet(depth)
            } else {
                Termination::Completed
            };
            return finish(finals, covered, 0.0, termination, &ledgers, eos_records, cost, warnings);
        }

        if let Some(eos) = vocab.eos {
            candidates.retain(|c| {
                if c.continuation.last() == Some(&eos) {
                    ledgers.eos.add(c.logp.exp());
                    if config.record_eos {
                        eos_records.push(EosRecord {
                            continuation: c.continuation.clone(),
                            logp: c.logp,
                            depth,
                        });
                    }
                    false
                } else {
                    true
                }
            });
        }
        if candidates.is_empty() {
            return finish(
                Vec::new(),
                0.0,
                0.0,
                Termination::EmptyViableSet(depth),
                &ledgers,
                eos_records,
                cost,
                warnings,
            );
        }

        candidates.sort_by(rank_candidates);
        if candidates.len() > b {
            for c in &candidates[b..] {
                let p = c.logp.exp();
                ledgers.pruned.add(p);
                if oracle.is_some() {
                    ledgers.bank.add(p);
                }
            }
            candidates.truncate(b);
        }
        beam = candidates;

        if let Some(tau_beam) = tau_beam {
            // beam is sorted, so the head holds the maximum
            if beam[0].logp.exp() < tau_beam {
                let abandoned: f64 = beam.iter().map(|c| c.logp.exp()).collect::<CompensatedSum>().value();
                return finish(
                    Vec::new(),
                    0.0,
                    abandoned,
                    Termination::TauMinCutoff(depth),
                    &ledgers,
                    eos_records,
                    cost,
                    warnings,
                );
            }
        }

        let continuations: Vec<Vec<TokenId>> = beam.iter().map(|c| c.continuation.clone()).collect();
        rows = fetch_rows(provider, prefix, &continuations, depth, vocab.size)?;
        cost.decode_tokens += beam.len() as u64;
    }
    unreachable!("loop returns at depth == suffix_len")
}

fn fetch_rows<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    continuations: &[Vec<TokenId>],
    depth: usize,
    vocab_size: usize,
) -> Result<Vec<LogitRow>> {
    let histories: Vec<Vec<TokenId>> = continuations
        .iter()
        .map(|c| {
            let mut h = Vec::with_capacity(prefix.len() + c.len());
            h.extend_from_slice(prefix);
            h.extend_from_slice(c);
            h
        })
        .collect();
    let refs: Vec<&[TokenId]> = histories.iter().map(Vec::as_slice).collect();
    let wrap = |e: Error| Error::ProviderAtDepth {
        depth,
        source: Box::new(e),
    };
    let rows = provider.next_logits_batch(&refs).map_err(wrap)?;
    if rows.len() != refs.len() {
        return Err(wrap(Error::Protocol(format!(
            "requested {} rows, received {}",
            refs.len(),
            rows.len()
        ))));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != vocab_size) {
        return Err(wrap(Error::VocabMismatch {
            expected: vocab_size,
            got: r.len(),
        }));
    }
    Ok(rows)
}
