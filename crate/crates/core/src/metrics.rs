//! Corpus-level extraction statistics.

use serde::{Deserialize, Serialize};

use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::numeric::CompensatedSum;

/// Shell masses more negative than this indicate a non-monotone mass vector.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub id: String,
    /// Teacher-forced probability of the exact suffix.
    pub verbatim_mass: f64,
    /// Lower bound on near-verbatim mass for ε = 0..=ε_max.
    pub nearverbatim_mass: Vec<f64>,
    /// Upper bound for ε = 0..=ε_max.
    #[serde(default)]
    pub upper_bound: Vec<f64>,
    pub greedy_distance: Option<usize>,
    pub token_evals: u64,
    #[serde(default)]
    pub char_span: Option<(usize, usize)>,
}

impl SequenceResult {
    pub fn eps_max(&self) -> usize {
        self.nearverbatim_mass.len().saturating_sub(1)
    }

    pub fn mass_at(&self, epsilon: usize) -> f64 {
        let i = epsilon.min(self.eps_max());
        self.nearverbatim_mass.get(i).copied().unwrap_or(0.0)
    }
}

pub fn success_greedy(greedy: &[TokenId], target: &[TokenId], dist: DistanceKind, epsilon: usize) -> Result<bool> {
    Ok(dist.distance(greedy, target)? <= epsilon)
}

pub fn success_probabilistic(mass: f64, tau_min: f64) -> bool {
    mass >= tau_min
}

/// Fraction of results satisfying `predicate`.
pub fn extraction_rate<F>(results: &[SequenceResult], predicate: F) -> Result<f64>
where
    F: Fn(&SequenceResult) -> bool,
{
    if results.is_empty() {
        return Err(Error::invalid("extraction rate over an empty result set"));
    }
    let hits = results.iter().filter(|r| predicate(r)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Near-verbatim mass at ε_max minus the verbatim mass.
pub fn mass_gain(result: &SequenceResult) -> f64 {
    result.mass_at(result.eps_max()) - result.mass_at(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellDecomposition {
    pub shell_mass: Vec<f64>,
    pub shell_share: Vec<f64>,
    pub verbatim_share: f64,
}

/// Splits the cumulative mass vector into per-ε increments.
pub fn shells(result: &SequenceResult) -> Result<ShellDecomposition> {
    let m = &result.nearverbatim_mass;
    if m.is_empty() {
        return Err(Error::invalid(format!("sequence {} has no mass vector", result.id)));
    }
    let mut shell_mass = Vec::with_capacity(m.len());
    for (i, &v) in m.iter().enumerate() {
        let d = if i == 0 { v } else { v - m[i - 1] };
        if d < -CLAMP_TOLERANCE {
            return Err(Error::invalid(format!(
                "sequence {}: mass decreases by {:.3e} at epsilon {i}",
                result.id, -d
            )));
        }
        shell_mass.push(d.max(0.0));
    }
    let total = *m.last().expect("non-empty");
    let (shell_share, verbatim_share) = if total > 0.0 {
        (shell_mass.iter().map(|s| s / total).collect(), m[0] / total)
    } else {
        (vec![0.0; m.len()], 0.0)
    };
    Ok(ShellDecomposition {
        shell_mass,
        shell_share,
        verbatim_share,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    pub x: f64,
    pub y: f64,
}

/// Fraction of `points` that are >= each threshold.
pub fn ccdf(points: &[f64], thresholds: &[f64]) -> Vec<CcdfPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&x| {
            let below = sorted.partition_point(|&p| p < x);
            CcdfPoint {
                x,
                y: (sorted.len() - below) as f64 / n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Maximum covering mass per byte position (0 where nothing covers).
    pub values: Vec<f64>,
    /// Whether the position's maximum reaches τ_min.
    pub extractable: Vec<bool>,
}

/// Per-position maximum mass over all suffix spans covering the position.
pub fn heatmap_coverage(spans: &[((usize, usize), f64)], text_length: usize, tau_min: f64) -> Result<Heatmap> {
    let mut values = vec![0.0f64; text_length];
    for &((start, end), mass) in spans {
        if start > end || end > text_length {
            return Err(Error::invalid(format!(
                "span [{start}, {end}) outside text of length {text_length}"
            )));
        }
        for v in &mut values[start..end] {
            *v = v.max(mass);
        }
    }
    let extractable = values.iter().map(|&v| v >= tau_min).collect();
    Ok(Heatmap { values, extractable })
}

/// Token evaluations of one prefix/suffix pair for each method.
pub mod cost {
    pub fn greedy(prefix_len: u64, suffix_len: u64) -> u64 {
        prefix_len + suffix_len - 1
    }

    pub fn teacher_forcing(prefix_len: u64, suffix_len: u64) -> u64 {
        prefix_len + suffix_len
    }

    pub fn kcbs(prefix_len: u64, suffix_len: u64, beam_width: u64) -> u64 {
        prefix_len + (suffix_len - 1) * beam_width
    }

    pub fn monte_carlo(prefix_len: u64, suffix_len: u64, samples: u64) -> u64 {
        prefix_len + (suffix_len - 1) * samples
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: String,
    pub per_sequence: u64,
    pub total: u64,
    pub vs_greedy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub sequences: usize,
    /// Token evaluations actually recorded by the searches.
    pub observed_total: u64,
    pub rows: Vec<CostRow>,
}

/// Modelled costs per method next to the observed search cost.
pub fn cost_summary(
    results: &[SequenceResult],
    prefix_len: u64,
    suffix_len: u64,
    beam_width: u64,
    mc_samples: &[u64],
) -> CostSummary {
    let n = results.len() as u64;
    let greedy = cost::greedy(prefix_len, suffix_len);
    let mut methods = vec![
        ("greedy".to_string(), greedy),
        ("teacher_forcing".to_string(), cost::teacher_forcing(prefix_len, suffix_len)),
        (format!("kcbs_b{beam_width}"), cost::kcbs(prefix_len, suffix_len, beam_width)),
    ];
    for &m in mc_samples {
        methods.push((format!("mc_m{m}"), cost::monte_carlo(prefix_len, suffix_len, m)));
    }
    let rows = methods
        .into_iter()
        .map(|(method, per)| CostRow {
            method,
            per_sequence: per,
            total: per * n,
            vs_greedy: per as f64 / greedy as f64,
        })
        .collect();
    CostSummary {
        sequences: results.len(),
        observed_total: results.iter().map(|r| r.token_evals).sum(),
        rows,
    }
}

/// Mean of values in sequence-id order, with compensated summation.
pub fn ordered_mean(results: &[SequenceResult], f: impl Fn(&SequenceResult) -> f64) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..results.len()).collect();
    idx.sort_by(|&a, &b| results[a].id.cmp(&results[b].id));
    let s: CompensatedSum = idx.iter().map(|&i| f(&results[i])).collect();
    s.value() / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, masses: Vec<f64>) -> SequenceResult {
        SequenceResult {
            id: id.into(),
            verbatim_mass: masses[0],
            upper_bound: masses.clone(),
            nearverbatim_mass: masses,
            greedy_distance: None,
            token_evals: 0,
            char_span: None,
        }
    }

    #[test]
    fn greedy_success() {
        assert!(success_greedy(&[1, 2, 3], &[1, 2, 3], DistanceKind::Hamming, 0).unwrap());
        assert!(!success_greedy(&[1, 0, 3], &[1, 2, 3], DistanceKind::Hamming, 0).unwrap());
        assert!(success_greedy(&[1, 0, 3], &[1, 2, 3], DistanceKind::Hamming, 1).unwrap());
        assert!(success_greedy(&[1], &[1, 2], DistanceKind::Hamming, 1).is_err());
    }

    #[test]
    fn probabilistic_success() {
        assert!(success_probabilistic(0.001, 0.001));
        assert!(!success_probabilistic(0.0, 0.001));
        assert!(success_probabilistic(0.1431, 0.001));
    }

    #[test]
    fn rates() {
        let rs: Vec<_> = (0..8).map(|i| result(&i.to_string(), vec![i as f64 / 10.0])).collect();
        assert_eq!(extraction_rate(&rs, |_| true).unwrap(), 1.0);
        assert_eq!(extraction_rate(&rs, |_| false).unwrap(), 0.0);
        assert_eq!(extraction_rate(&rs, |r| r.verbatim_mass >= 0.5).unwrap(), 0.375);
        assert!(extraction_rate(&[], |_| true).is_err());
    }

    #[test]
    fn all_verbatim_shells() {
        let s = shells(&result("a", vec![0.4, 0.4, 0.4])).unwrap();
        assert_eq!(s.verbatim_share, 1.0);
        assert_eq!(s.shell_mass, vec![0.4, 0.0, 0.0]);
    }

    #[test]
    fn figure_example_gain() {
        // verbatim 0.1431 plus two near-verbatim continuations
        let near = 0.1477 + 0.1431 + 0.0671;
        assert!((near - 0.3579f64).abs() < 1e-12);
        let r = result("gatsby", vec![0.1431, near]);
        assert!((mass_gain(&r) - 0.2148).abs() < 1e-12);
        let s = shells(&r).unwrap();
        let total: f64 = s.shell_share.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_share_is_zero() {
        let s = shells(&result("z", vec![0.0, 0.0])).unwrap();
        assert_eq!(s.verbatim_share, 0.0);
    }

    #[test]
    fn decreasing_mass_is_data_error() {
        assert!(shells(&result("bad", vec![0.5, 0.4])).is_err());
        // tiny rounding dips are clamped
        let s = shells(&result("ok", vec![0.5, 0.5 - 1e-12])).unwrap();
        assert_eq!(s.shell_mass[1], 0.0);
    }

    #[test]
    fn ccdf_counts() {
        let gains = [0.0, 0.0, 0.1, 0.2, 0.2, 0.5];
        let pts = ccdf(&gains, &[0.0, 1e-12, 0.2, 0.6]);
        let ys: Vec<f64> = pts.iter().map(|p| p.y).collect();
        assert_eq!(ys, vec![1.0, 4.0 / 6.0, 3.0 / 6.0, 0.0]);
    }

    #[test]
    fn heatmap_overlap() {
        let h = heatmap_coverage(&[((0, 4), 0.2), ((2, 6), 0.5)], 8, 0.3).unwrap();
        assert_eq!(h.values, vec![0.2, 0.2, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0]);
        assert!(!h.extractable[1]);
        assert!(h.extractable[2]);
        assert!(heatmap_coverage(&[((0, 9), 0.2)], 8, 0.3).is_err());
    }

    #[test]
    fn cost_table() {
        assert_eq!(cost::greedy(50, 50), 99);
        assert_eq!(cost::teacher_forcing(50, 50), 100);
        assert_eq!(cost::kcbs(50, 50, 20), 1030);
        assert_eq!(cost::monte_carlo(50, 50, 20), 1030);
        assert_eq!(cost::monte_carlo(50, 50, 3000), 147_050);
        assert_eq!(cost::monte_carlo(50, 50, 100_000), 4_900_050);
        let s = cost_summary(&[result("a", vec![0.0])], 50, 50, 20, &[3000]);
        assert_eq!(s.rows[2].per_sequence, 1030);
        assert!((s.rows[2].vs_greedy - 1030.0 / 99.0).abs() < 1e-12);
    }
}
