//! Summary JSON and CSV plot data derived from per-sequence results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use extraction_audit::metrics::{
    ccdf, cost_summary, extraction_rate, heatmap_coverage, mass_gain, ordered_mean, shells, success_probabilistic,
    CcdfPoint, CostSummary, SequenceResult,
};
use serde::Serialize;

/// Thresholds for the mass-gain CCDF; the first one stands in for 0⁺.
pub const CCDF_THRESHOLDS: [f64; 11] = [f64::MIN_POSITIVE, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub epsilon: usize,
    /// Fraction with near-verbatim mass >= τ_min.
    pub probabilistic: f64,
    /// Fraction whose greedy continuation lies within ε.
    pub greedy: f64,
    pub mean_mass: f64,
    pub mean_upper_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShareSummary {
    /// Sequences with positive total mass; only these enter share statistics.
    pub sequences_with_mass: usize,
    pub mean_verbatim_share: f64,
    pub mean_shell_share: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditSummary {
    pub sequences: usize,
    pub tau_min: f64,
    pub epsilon_max: usize,
    /// Fraction with teacher-forced verbatim mass >= τ_min.
    pub verbatim_rate: f64,
    pub rates: Vec<RateRow>,
    pub mass_gain_ccdf: Vec<CcdfPoint>,
    pub shares: ShareSummary,
    pub cost: CostSummary,
}

pub fn summarize(
    results: &[SequenceResult],
    tau_min: f64,
    prefix_len: usize,
    suffix_len: usize,
    beam_width: usize,
) -> Result<AuditSummary> {
    let eps_max = results.iter().map(SequenceResult::eps_max).max().unwrap_or(0);
    let rate = |f: &dyn Fn(&SequenceResult) -> bool| -> Result<f64> {
        if results.is_empty() {
            Ok(0.0)
        } else {
            Ok(extraction_rate(results, f)?)
        }
    };
    let mut rates = Vec::with_capacity(eps_max + 1);
    for eps in 0..=eps_max {
        rates.push(RateRow {
            epsilon: eps,
            probabilistic: rate(&|r| success_probabilistic(r.mass_at(eps), tau_min))?,
            greedy: rate(&|r| r.greedy_distance.is_some_and(|d| d <= eps))?,
            mean_mass: ordered_mean(results, |r| r.mass_at(eps)),
            mean_upper_bound: ordered_mean(results, |r| {
                r.upper_bound.get(eps.min(r.upper_bound.len().saturating_sub(1))).copied().unwrap_or(1.0)
            }),
        });
    }
    let gains: Vec<f64> = results.iter().map(mass_gain).collect();

    let mut with_mass = Vec::new();
    for r in results {
        let s = shells(r)?;
        if r.mass_at(r.eps_max()) > 0.0 {
            with_mass.push(s);
        }
    }
    let n = with_mass.len().max(1) as f64;
    let mut mean_shell_share = vec![0.0; eps_max + 1];
    for s in &with_mass {
        for (acc, v) in mean_shell_share.iter_mut().zip(&s.shell_share) {
            *acc += v / n;
        }
    }
    let shares = ShareSummary {
        sequences_with_mass: with_mass.len(),
        mean_verbatim_share: with_mass.iter().map(|s| s.verbatim_share).sum::<f64>() / n,
        mean_shell_share,
    };

    Ok(AuditSummary {
        sequences: results.len(),
        tau_min,
        epsilon_max: eps_max,
        verbatim_rate: rate(&|r| success_probabilistic(r.verbatim_mass, tau_min))?,
        rates,
        mass_gain_ccdf: ccdf(&gains, &CCDF_THRESHOLDS),
        shares,
        cost: cost_summary(results, prefix_len as u64, suffix_len as u64, beam_width as u64, &[]),
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// CSV with a leading `# input_hash=...` comment tying it to its summary.
pub fn write_csv<R: Serialize>(path: &Path, hash: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(file, "# input_hash={hash}")?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Like [`write_csv`] for rows of varying width, with an explicit header.
pub fn write_csv_records(path: &Path, hash: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(file, "# input_hash={hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ccdf(path: &Path, hash: &str, points: &[CcdfPoint]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        gain_threshold: f64,
        fraction: f64,
    }
    write_csv(path, hash, points.iter().map(|p| Row { gain_threshold: p.x, fraction: p.y }))
}

/// One row per sequence with positive mass: verbatim share and shell shares.
pub fn write_shares(path: &Path, hash: &str, results: &[SequenceResult]) -> Result<()> {
    let eps_max = results.iter().map(SequenceResult::eps_max).max().unwrap_or(0);
    let mut header = vec!["id".to_string(), "total_mass".to_string(), "verbatim_share".to_string()];
    header.extend((0..=eps_max).map(|e| format!("shell_{e}")));
    let mut rows = Vec::new();
    for r in results {
        let total = r.mass_at(r.eps_max());
        if total <= 0.0 {
            continue;
        }
        let s = shells(r)?;
        let mut row = vec![r.id.clone(), total.to_string(), s.verbatim_share.to_string()];
        row.extend((0..=eps_max).map(|e| s.shell_share.get(e).copied().unwrap_or(0.0).to_string()));
        rows.push(row);
    }
    write_csv_records(path, hash, &header, &rows)
}

/// Per-byte maximum covering mass, verbatim and at ε_max.
pub fn write_heatmap(path: &Path, hash: &str, results: &[SequenceResult], text_len: usize, tau_min: f64) -> Result<()> {
    let spans = |f: &dyn Fn(&SequenceResult) -> f64| -> Vec<((usize, usize), f64)> {
        results.iter().filter_map(|r| r.char_span.map(|s| (s, f(r)))).collect()
    };
    let verbatim = heatmap_coverage(&spans(&|r| r.mass_at(0)), text_len, tau_min)?;
    let near = heatmap_coverage(&spans(&|r| r.mass_at(r.eps_max())), text_len, tau_min)?;
    #[derive(Serialize)]
    struct Row {
        position: usize,
        verbatim: f64,
        nearverbatim: f64,
        verbatim_extractable: bool,
        nearverbatim_extractable: bool,
    }
    write_csv(
        path,
        hash,
        (0..text_len).map(|i| Row {
            position: i,
            verbatim: verbatim.values[i],
            nearverbatim: near.values[i],
            verbatim_extractable: verbatim.extractable[i],
            nearverbatim_extractable: near.extractable[i],
        }),
    )
}
