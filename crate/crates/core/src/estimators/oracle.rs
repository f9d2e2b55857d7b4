use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::model::{topk_step, validate_sequences, DecodingPolicy, TokenDistributionProvider, TokenId};
use crate::numeric::CompensatedSum;

pub const DEFAULT_MAX_LEAVES: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleGuard {
    pub max_leaves: f64,
}

impl Default for OracleGuard {
    fn default() -> Self {
        Self {
            max_leaves: DEFAULT_MAX_LEAVES,
        }
    }
}

impl OracleGuard {
    pub fn check(&self, k: usize, depth: usize) -> Result<()> {
        let leaves = (k as f64).powi(depth as i32);
        if leaves > self.max_leaves {
            return Err(Error::GuardExceeded {
                estimated_leaves: leaves,
                limit: self.max_leaves,
            });
        }
        Ok(())
    }
}

/// Children with their log-probs, next child index, parent logp.
type Frame = (Vec<(TokenId, f64)>, usize, f64);

/// Exact near-verbatim mass for every budget `0..=eps_max` by depth-first
/// enumeration of the complete top-k tree.
///
/// Paths ending in EOS before full depth contribute nothing.
pub fn oracle_exact_masses<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    target: &[TokenId],
    policy: &DecodingPolicy,
    dist: DistanceKind,
    eps_max: usize,
    guard: OracleGuard,
) -> Result<Vec<f64>> {
    let vocab = validate_sequences(provider, prefix, Some(target))?;
    policy.validate(&vocab)?;
    if target.is_empty() {
        return Err(Error::invalid("target must be non-empty"));
    }
    guard.check(policy.k, target.len())?;

    let t_len = target.len();
    let mut sums = vec![CompensatedSum::new(); eps_max + 1];
    let mut history = prefix.to_vec();
    let mut stack: Vec<Frame> = Vec::new();
    let root = topk_step(&provider.next_logits(&history)?, policy)?;
    stack.push((root.iter().collect(), 0, 0.0));

    while let Some((children, idx, parent_logp)) = stack.last_mut() {
        if *idx == children.len() {
            stack.pop();
            if !stack.is_empty() {
                history.pop();
            }
            continue;
        }
        let (tok, lp) = children[*idx];
        *idx += 1;
        let logp = *parent_logp + lp;
        let depth = stack.len();
        if depth == t_len {
            history.push(tok);
            let d = dist.distance(&history[prefix.len()..], target)?;
            history.pop();
            if d <= eps_max {
                let p = logp.exp();
                for s in &mut sums[d..] {
                    s.add(p);
                }
            }
            continue;
        }
        if vocab.is_eos(tok) {
            continue;
        }
        history.push(tok);
        let step = topk_step(&provider.next_logits(&history)?, policy)?;
        stack.push((step.iter().collect(), 0, logp));
    }
    Ok(sums.iter().map(CompensatedSum::value).collect())
}

pub fn oracle_exact_mass<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[TokenId],
    target: &[TokenId],
    policy: &DecodingPolicy,
    dist: DistanceKind,
    epsilon: usize,
    guard: OracleGuard,
) -> Result<f64> {
    Ok(*oracle_exact_masses(provider, prefix, target, policy, dist, epsilon, guard)?
        .last()
        .expect("eps_max + 1 entries"))
}
