use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LogitRow, TokenDistributionProvider, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Order-`m` conditional frequency model with add-one smoothing.
///
/// Contexts are the last `m - 1` tokens of the history (fewer at the start
/// of a history). A context never seen in training backs off by dropping
/// its oldest token. Planted sequences are added to the counts with a
/// multiplicative weight so they become high-probability paths.
#[derive(Clone, Debug)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    counts: HashMap<Vec<TokenId>, Vec<u64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NGramSpec {
    pub order: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub eos_id: Option<TokenId>,
    pub corpus: Vec<Vec<TokenId>>,
    #[serde(default)]
    pub planted: Vec<Vec<TokenId>>,
    #[serde(default = "default_weight")]
    pub planted_weight: u64,
}

fn default_weight() -> u64 {
    1
}

impl NGramSpec {
    /// A random training corpus drawn from a sticky Markov chain over the
    /// vocabulary, so the resulting counts are skewed rather than flat.
    pub fn random(vocab_size: usize, order: usize, corpus_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let favored: Vec<TokenId> = (0..vocab_size)
            .map(|_| rng.gen_range(0..vocab_size) as TokenId)
            .collect();
        let stickiness = rng.gen_range(0.3..0.8);
        let mut seq = Vec::with_capacity(corpus_len);
        let mut prev = rng.gen_range(0..vocab_size) as TokenId;
        for _ in 0..corpus_len {
            let next = if rng.gen_bool(stickiness) {
                favored[prev as usize]
            } else {
                rng.gen_range(0..vocab_size) as TokenId
            };
            seq.push(next);
            prev = next;
        }
        NGramSpec {
            order,
            vocab_size,
            eos_id: None,
            corpus: vec![seq],
            planted: Vec::new(),
            planted_weight: 1,
        }
    }
}

impl NGramModel {
    pub fn train(
        vocab: Vocabulary,
        order: usize,
        corpus: &[Vec<TokenId>],
        planted: &[Vec<TokenId>],
        planted_weight: u64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be >= 1"));
        }
        let mut model = Self {
            vocab,
            order,
            counts: HashMap::new(),
        };
        for seq in corpus {
            model.add_sequence(seq, 1)?;
        }
        for seq in planted {
            model.add_sequence(seq, planted_weight)?;
        }
        Ok(model)
    }

    pub fn from_spec(spec: &NGramSpec) -> Result<Self> {
        let vocab = Vocabulary::new(spec.vocab_size, spec.eos_id)?;
        Self::train(vocab, spec.order, &spec.corpus, &spec.planted, spec.planted_weight)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn add_sequence(&mut self, seq: &[TokenId], weight: u64) -> Result<()> {
        if let Some(t) = seq.iter().find(|&&t| !self.vocab.contains(t)) {
            return Err(Error::invalid(format!("training token {t} outside vocabulary")));
        }
        for i in 0..seq.len() {
            let next = seq[i] as usize;
            for ctx_len in 0..self.order.min(i + 1) {
                let ctx = seq[i - ctx_len..i].to_vec();
                let row = self
                    .counts
                    .entry(ctx)
                    .or_insert_with(|| vec![0; self.vocab.size]);
                row[next] += weight;
            }
        }
        Ok(())
    }

    /// Smoothed conditional probabilities for the history.
    pub fn probabilities(&self, history: &[TokenId]) -> Vec<f64> {
        let n = self.vocab.size as f64;
        let max_ctx = (self.order - 1).min(history.len());
        for ctx_len in (0..=max_ctx).rev() {
            let ctx = &history[history.len() - ctx_len..];
            if let Some(c) = self.counts.get(ctx) {
                let total: u64 = c.iter().sum();
                let denom = total as f64 + n;
                return c.iter().map(|&x| (x as f64 + 1.0) / denom).collect();
            }
        }
        vec![1.0 / n; self.vocab.size]
    }
}

impl TokenDistributionProvider for NGramModel {
    fn vocabulary(&self) -> Vocabulary {
        self.vocab
    }

    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow> {
        LogitRow::new(self.probabilities(history).into_iter().map(f64::ln).collect())
    }
}
