use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{topk_step, validate_sequences, DecodingPolicy, StepDistribution, TokenDistributionProvider, TokenId};
use crate::search::Ball;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub ball: Ball,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub hits: u64,
    pub samples: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl McEstimate {
    fn from_hits(hits: u64, samples: u64, level: f64) -> Result<Self> {
        let (ci_low, ci_high) = wilson_interval(hits, samples, level)?;
        Ok(Self {
            p_hat: hits as f64 / samples as f64,
            hits,
            samples,
            ci_low,
            ci_high,
        })
    }
}

/// Wilson score interval for `hits` successes in `n` Bernoulli trials.
pub fn wilson_interval(hits: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 || hits > n {
        return Err(Error::invalid(format!("invalid binomial counts {hits}/{n}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must be in (0, 1), got {level}")));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    Ok(((center - half).max(0.0).min(p), (center + half).min(1.0).max(p)))
}

type Cache = HashMap<Vec<TokenId>, Arc<StepDistribution>>;

/// Samples the continuation for `index`. The draw at each step depends only
/// on (seed, index, step), so results do not depend on scheduling.
#[allow(clippy::too_many_arguments)]
fn draw_sample<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    len: usize,
    policy: &DecodingPolicy,
    base: &ChaCha8Rng,
    index: u64,
    eos: Option<TokenId>,
    cache: &mut Cache,
) -> Result<Option<Vec<TokenId>>> {
    let mut rng = base.clone();
    rng.set_stream(index);
    let mut history = prefix.to_vec();
    for step in 0..len {
        rng.set_word_pos(2 * step as u128);
        let u: f64 = rng.gen();
        let dist = match cache.get(&history) {
            Some(d) => d.clone(),
            None => {
                let d = Arc::new(topk_step(&provider.next_logits(&history)?, policy)?);
                cache.insert(history.clone(), d.clone());
                d
            }
        };
        let mut acc = 0.0;
        let mut chosen = *dist.support.last().expect("non-empty support");
        for (tok, lp) in dist.iter() {
            acc += lp.exp();
            if u < acc {
                chosen = tok;
                break;
            }
        }
        history.push(chosen);
        if step + 1 < len && eos == Some(chosen) {
            return Ok(None);
        }
    }
    Ok(Some(history.split_off(prefix.len())))
}

/// Fraction of `samples` ancestral top-k samples within the ball around `target`.
pub fn mc_estimate<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    target: &[TokenId],
    policy: &DecodingPolicy,
    config: &McConfig,
) -> Result<McEstimate> {
    let vocab = validate_sequences(provider, prefix, Some(target))?;
    policy.validate(&vocab)?;
    if config.samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if target.is_empty() {
        return Err(Error::invalid("target must be non-empty"));
    }
    let base = ChaCha8Rng::seed_from_u64(config.seed);
    const CHUNK: u64 = 256;
    let n_chunks = config.samples.div_ceil(CHUNK);
    let hits: u64 = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<u64> {
            let mut cache = Cache::new();
            let mut hits = 0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(config.samples) {
                let sample = draw_sample(provider, prefix, target.len(), policy, &base, i, vocab.eos, &mut cache)?;
                if let Some(s) = sample {
                    if config.ball.dist.distance(&s, target)? <= config.ball.epsilon {
                        hits += 1;
                    }
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    McEstimate::from_hits(hits, config.samples, config.confidence_level)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReplicates {
    pub per_replicate: Vec<McEstimate>,
    /// All replicates concatenated into one sample.
    pub pooled: McEstimate,
}

/// Independent replicates; replicate `r` uses seed `config.seed + r`.
pub fn mc_replicates<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    target: &[TokenId],
    policy: &DecodingPolicy,
    config: &McConfig,
    replicates: usize,
) -> Result<McReplicates> {
    if replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let per_replicate = (0..replicates)
        .map(|r| {
            let cfg = McConfig {
                seed: config.seed.wrapping_add(r as u64),
                ..*config
            };
            mc_estimate(provider, prefix, target, policy, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = per_replicate.iter().map(|e| e.hits).sum();
    let samples = per_replicate.iter().map(|e| e.samples).sum();
    Ok(McReplicates {
        pooled: McEstimate::from_hits(hits, samples, config.confidence_level)?,
        per_replicate,
    })
}
