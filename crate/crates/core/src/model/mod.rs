//! Token distribution providers and the top-k decoding policy.

mod ngram;
mod remote;
mod table;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{logsumexp, LogProb};

pub use ngram::{NGramModel, NGramSpec};
pub use remote::{RemoteProvider, MAX_BATCH, PROTOCOL_VERSION};
pub use table::{TableModel, TableSpec};

pub type TokenId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub eos: Option<TokenId>,
}

impl Vocabulary {
    pub fn new(size: usize, eos: Option<TokenId>) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid(format!("vocabulary size must be >= 2, got {size}")));
        }
        if let Some(e) = eos {
            if e as usize >= size {
                return Err(Error::invalid(format!("eos id {e} outside vocabulary of size {size}")));
            }
        }
        Ok(Self { size, eos })
    }

    pub fn contains(&self, token: TokenId) -> bool {
        (token as usize) < self.size
    }

    pub fn is_eos(&self, token: TokenId) -> bool {
        self.eos == Some(token)
    }
}

/// Unnormalized next-token scores over the whole vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitRow(Vec<f64>);

impl LogitRow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit {} at index {i}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for LogitRow {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LogitRow::new(v)
    }
}

impl From<LogitRow> for Vec<f64> {
    fn from(r: LogitRow) -> Self {
        r.0
    }
}

/// Top-k truncation with temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodingPolicy {
    pub k: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl DecodingPolicy {
    pub fn top_k(k: usize) -> Self {
        Self { k, beta: 1.0 }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.k == 0 || self.k > vocab.size {
            return Err(Error::invalid(format!(
                "top-k must be in [1, {}], got {}",
                vocab.size, self.k
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Renormalized top-k next-token distribution.
///
/// `support` is ordered by rank: highest logit first, lower token id first on ties.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    pub support: Vec<TokenId>,
    pub logprobs: Vec<f64>,
}

impl StepDistribution {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.support.iter().copied().zip(self.logprobs.iter().copied())
    }

    /// 1-based rank of `token`, or `None` when it is outside the support.
    pub fn rank_of(&self, token: TokenId) -> Option<usize> {
        self.support.iter().position(|&t| t == token).map(|i| i + 1)
    }

    pub fn logprob_of(&self, token: TokenId) -> LogProb {
        match self.rank_of(token) {
            Some(r) => LogProb::new(self.logprobs[r - 1]).unwrap_or(LogProb::ZERO),
            None => LogProb::ZERO,
        }
    }
}

/// Next-token logits for a token history.
///
/// Implementations must be deterministic: the same history always yields the
/// same row. Any caching is internal and never changes results.
pub trait TokenDistributionProvider: Send + Sync {
    fn vocabulary(&self) -> Vocabulary;

    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow>;

    fn next_logits_batch(&self, histories: &[&[TokenId]]) -> Result<Vec<LogitRow>> {
        histories.iter().map(|h| self.next_logits(h)).collect()
    }
}

impl<P: TokenDistributionProvider + ?Sized> TokenDistributionProvider for &P {
    fn vocabulary(&self) -> Vocabulary {
        (**self).vocabulary()
    }
    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow> {
        (**self).next_logits(history)
    }
    fn next_logits_batch(&self, histories: &[&[TokenId]]) -> Result<Vec<LogitRow>> {
        (**self).next_logits_batch(histories)
    }
}

impl<P: TokenDistributionProvider + ?Sized> TokenDistributionProvider for Box<P> {
    fn vocabulary(&self) -> Vocabulary {
        (**self).vocabulary()
    }
    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow> {
        (**self).next_logits(history)
    }
    fn next_logits_batch(&self, histories: &[&[TokenId]]) -> Result<Vec<LogitRow>> {
        (**self).next_logits_batch(histories)
    }
}

impl<P: TokenDistributionProvider + ?Sized> TokenDistributionProvider for Arc<P> {
    fn vocabulary(&self) -> Vocabulary {
        (**self).vocabulary()
    }
    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow> {
        (**self).next_logits(history)
    }
    fn next_logits_batch(&self, histories: &[&[TokenId]]) -> Result<Vec<LogitRow>> {
        (**self).next_logits_batch(histories)
    }
}

/// Serialized description of an in-process synthetic model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    Table(TableSpec),
    Ngram(NGramSpec),
}

impl SyntheticSpec {
    pub fn build(&self) -> Result<Box<dyn TokenDistributionProvider>> {
        Ok(match self {
            SyntheticSpec::Table(s) => Box::new(TableModel::from_spec(s)?),
            SyntheticSpec::Ngram(s) => Box::new(NGramModel::from_spec(s)?),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Numerically stable log-softmax over the full row.
pub fn log_softmax(row: &LogitRow) -> Result<Vec<f64>> {
    let v = row.values();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let lse = logsumexp(v);
    Ok(v.iter().map(|x| x - lse).collect())
}

pub fn apply_temperature(row: &LogitRow, beta: f64) -> Result<LogitRow> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {beta}")));
    }
    if beta == 1.0 {
        return Ok(row.clone());
    }
    LogitRow::new(row.values().iter().map(|x| x / beta).collect())
}

/// Indices of the `k` largest entries, ordered by value descending then index ascending.
pub(crate) fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let rank = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k, rank);
        idx.truncate(k);
    }
    idx.sort_unstable_by(rank);
    idx
}

/// Top-k renormalized distribution for one decoding step.
pub fn topk_step(row: &LogitRow, policy: &DecodingPolicy) -> Result<StepDistribution> {
    if policy.k == 0 || policy.k > row.len() {
        return Err(Error::invalid(format!(
            "top-k must be in [1, {}], got {}",
            row.len(),
            policy.k
        )));
    }
    let scaled = apply_temperature(row, policy.beta)?;
    let full = log_softmax(&scaled)?;
    let support_idx = top_k_indices(scaled.values(), policy.k);
    let selected: Vec<f64> = support_idx.iter().map(|&i| full[i]).collect();
    let z = logsumexp(&selected);
    let logprobs = selected.iter().map(|r| r - z).collect();
    Ok(StepDistribution {
        support: support_idx.into_iter().map(|i| i as TokenId).collect(),
        logprobs,
    })
}

fn check_tokens(vocab: &Vocabulary, tokens: &[TokenId], what: &str) -> Result<()> {
    if let Some(t) = tokens.iter().find(|&&t| !vocab.contains(t)) {
        return Err(Error::invalid(format!(
            "{what} token {t} outside vocabulary of size {}",
            vocab.size
        )));
    }
    Ok(())
}

pub(crate) fn validate_sequences<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    target: Option<&[TokenId]>,
) -> Result<Vocabulary> {
    let vocab = provider.vocabulary();
    if prefix.is_empty() {
        return Err(Error::invalid("prefix must be non-empty"));
    }
    check_tokens(&vocab, prefix, "prefix")?;
    if let Some(t) = target {
        check_tokens(&vocab, t, "target")?;
    }
    Ok(vocab)
}

fn forced_rows<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    suffix: &[TokenId],
) -> Result<Vec<LogitRow>> {
    let mut full = Vec::with_capacity(prefix.len() + suffix.len());
    full.extend_from_slice(prefix);
    full.extend_from_slice(suffix);
    let histories: Vec<&[TokenId]> = (0..suffix.len()).map(|t| &full[..prefix.len() + t]).collect();
    let mut rows = Vec::with_capacity(histories.len());
    for chunk in histories.chunks(MAX_BATCH) {
        rows.extend(provider.next_logits_batch(chunk)?);
    }
    let size = provider.vocabulary().size;
    if let Some(r) = rows.iter().find(|r| r.len() != size) {
        return Err(Error::VocabMismatch { expected: size, got: r.len() });
    }
    Ok(rows)
}

/// Teacher-forced log-probability of `suffix` after `prefix` under the policy.
///
/// Returns [`LogProb::ZERO`] when any suffix token falls outside its step's
/// top-k support.
pub fn teacher_force_verbatim<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    suffix: &[TokenId],
    policy: &DecodingPolicy,
) -> Result<LogProb> {
    if suffix.is_empty() {
        return Err(Error::invalid("suffix must be non-empty"));
    }
    let vocab = validate_sequences(provider, prefix, Some(suffix))?;
    policy.validate(&vocab)?;
    let rows = forced_rows(provider, prefix, suffix)?;
    let mut acc = LogProb::ONE;
    for (row, &tok) in rows.iter().zip(suffix) {
        let step = topk_step(row, policy)?;
        acc = acc + step.logprob_of(tok);
        if acc.is_zero() {
            break;
        }
    }
    Ok(acc)
}

/// Per-step rank and probability of a fixed continuation under the policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepProfile {
    /// 1-based rank; `None` if the token was outside the top-k support.
    pub rank: Option<usize>,
    pub prob: f64,
}

pub fn step_profile<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    continuation: &[TokenId],
    policy: &DecodingPolicy,
) -> Result<Vec<StepProfile>> {
    let vocab = validate_sequences(provider, prefix, Some(continuation))?;
    policy.validate(&vocab)?;
    let rows = forced_rows(provider, prefix, continuation)?;
    rows.iter()
        .zip(continuation)
        .map(|(row, &tok)| {
            let step = topk_step(row, policy)?;
            Ok(StepProfile {
                rank: step.rank_of(tok),
                prob: step.logprob_of(tok).prob(),
            })
        })
        .collect()
}

/// Greedy (argmax) continuation of length `len`.
pub fn greedy_decode<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    len: usize,
) -> Result<Vec<TokenId>> {
    validate_sequences(provider, prefix, None)?;
    let mut history = prefix.to_vec();
    for _ in 0..len {
        let row = provider.next_logits(&history)?;
        let best = top_k_indices(row.values(), 1)[0];
        history.push(best as TokenId);
    }
    Ok(history.split_off(prefix.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> LogitRow {
        LogitRow::new(v.to_vec()).unwrap()
    }

    fn total(step: &StepDistribution) -> f64 {
        step.logprobs.iter().map(|l| l.exp()).sum()
    }

    #[test]
    fn vocabulary_validation() {
        assert!(Vocabulary::new(1, None).is_err());
        assert!(Vocabulary::new(4, Some(4)).is_err());
        assert!(Vocabulary::new(4, Some(3)).is_ok());
    }

    #[test]
    fn log_softmax_uniform() {
        let out = log_softmax(&row(&[0.0; 4])).unwrap();
        for v in out {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_point_mass() {
        let out = log_softmax(&row(&[10.0, -1e4, -1e4, -1e4])).unwrap();
        assert!(out[0].abs() < 1e-12);
        assert!(out[1] < -1e3);
    }

    #[test]
    fn logit_row_rejects_non_finite() {
        assert!(LogitRow::new(vec![0.0, f64::NAN]).is_err());
        assert!(LogitRow::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(serde_json::from_str::<LogitRow>("[1.0, 2.0]").is_ok());
    }

    // Reference values computed with mpmath at 50 significant digits.
    #[test]
    fn log_softmax_matches_high_precision() {
        let r = row(&[0.3, -1.2, 2.5, 0.0, -0.7, 1.1, 3.4, -2.2]);
        let expected = [
            -3.5796899095724165, -5.079689909572417, -1.3796899095724165, -3.8796899095724165,
            -4.579689909572417, -2.7796899095724165, -0.4796899095724165, -6.079689909572417,
        ];
        let out = log_softmax(&r).unwrap();
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn topk_matches_high_precision() {
        let r = row(&[0.4, 1.7, -0.3, 2.2, 1.7, -1.0]);
        let step = topk_step(&r, &DecodingPolicy::top_k(3)).unwrap();
        // Tie between tokens 1 and 4 at 1.7: both in, lower id first.
        assert_eq!(step.support, vec![3, 1, 4]);
        let expected = [-0.7943767694176432, -1.2943767694176432, -1.2943767694176432];
        for (a, b) in step.logprobs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn temperature_arithmetic() {
        let r = row(&[2.0, 1.0, 0.0]);
        assert_eq!(apply_temperature(&r, 1.0).unwrap(), r);
        assert_eq!(apply_temperature(&r, 2.0).unwrap().values(), &[1.0, 0.5, 0.0]);
        assert!(apply_temperature(&r, 0.0).is_err());
        assert!(apply_temperature(&r, -1.0).is_err());
    }

    #[test]
    fn topk_full_vocab_is_softmax() {
        let r = row(&[0.5, -0.25, 1.5, 0.0]);
        let step = topk_step(&r, &DecodingPolicy::top_k(4)).unwrap();
        let full = log_softmax(&r).unwrap();
        for (tok, lp) in step.iter() {
            assert!((lp - full[tok as usize]).abs() < 1e-14);
        }
    }

    #[test]
    fn topk_one_is_point_mass() {
        let step = topk_step(&row(&[0.1, 0.9, 0.3]), &DecodingPolicy::top_k(1)).unwrap();
        assert_eq!(step.support, vec![1]);
        assert_eq!(step.logprobs, vec![0.0]);
    }

    #[test]
    fn topk_tie_break_prefers_lower_id() {
        let step = topk_step(&row(&[1.0, 1.0, 1.0, 1.0]), &DecodingPolicy::top_k(2)).unwrap();
        assert_eq!(step.support, vec![0, 1]);
    }

    #[test]
    fn topk_rejects_bad_k() {
        assert!(topk_step(&row(&[0.0, 1.0]), &DecodingPolicy::top_k(0)).is_err());
        assert!(topk_step(&row(&[0.0, 1.0]), &DecodingPolicy::top_k(3)).is_err());
    }

    fn arb_row(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-20.0f64..20.0, len)
    }

    proptest! {
        #[test]
        fn step_distribution_normalized(v in arb_row(12), k in 1usize..=12, beta in 0.1f64..5.0) {
            let step = topk_step(&row(&v), &DecodingPolicy { k, beta }).unwrap();
            prop_assert_eq!(step.len(), k);
            prop_assert!((total(&step) - 1.0).abs() < 1e-12);
            let mut s = step.support.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), k);
        }

        #[test]
        fn temperature_preserves_support(v in arb_row(10), k in 1usize..=10, beta in prop::sample::select(vec![0.5, 2.0])) {
            let a = topk_step(&row(&v), &DecodingPolicy { k, beta: 1.0 }).unwrap();
            let b = topk_step(&row(&v), &DecodingPolicy { k, beta }).unwrap();
            prop_assert_eq!(a.support, b.support);
        }

        #[test]
        fn support_is_largest_logits(v in arb_row(9), k in 1usize..=9) {
            let step = topk_step(&row(&v), &DecodingPolicy::top_k(k)).unwrap();
            let min_in = step.support.iter().map(|&t| v[t as usize]).fold(f64::INFINITY, f64::min);
            for t in 0..9u32 {
                if !step.support.contains(&t) {
                    prop_assert!(v[t as usize] <= min_in);
                }
            }
        }
    }
}
