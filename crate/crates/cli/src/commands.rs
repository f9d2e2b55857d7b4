use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use extraction_audit::corpus::{chunk_text, save_records, save_results_with_meta, ByteTokenizer, ChunkParams, WhitespaceTokenizer};
use extraction_audit::distance::DistanceKind;
use extraction_audit::estimators::{
    mc_detection_sample_size, mc_estimate, mc_relse_sample_size, mc_replicates, oracle_exact_masses, McConfig,
    McEstimate, OracleGuard,
};
use extraction_audit::metrics::{ordered_mean, SequenceResult};
use extraction_audit::model::teacher_force_verbatim;
use extraction_audit::search::Ball;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{ChunkArgs, Command, McArgs, OracleArgs, RunArgs, SampleSizeArgs, SweepArgs, TokenizerKind};
use crate::audit::{audit_all, Checkpoint};
use crate::config::{load_inputs, policy_from_args, source_label, thread_pool, AuditSettings, ExperimentConfig};
use crate::report::{summarize, write_ccdf, write_csv, write_heatmap, write_json, write_shares, AuditSummary};
use crate::ConfigError;

const SCHEMA_VERSION: u32 = 1;

pub fn dispatch(command: &Command) -> Result<String> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Samplesize(a) => cmd_samplesize(a),
        Command::Chunk(a) => cmd_chunk(a),
    }
}

fn check_epsilon(epsilon: usize, suffix_len: usize) -> Result<()> {
    if epsilon > suffix_len {
        return Err(ConfigError::new(format!("--epsilon {epsilon} exceeds --suffix-len {suffix_len}")).into());
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, S: Serialize> {
    schema: &'static str,
    version: u32,
    input_hash: String,
    config: &'a ExperimentConfig<C>,
    summary: S,
}

fn report<'a, C: Serialize, S: Serialize>(schema: &'static str, config: &'a ExperimentConfig<C>, summary: S) -> Report<'a, C, S> {
    Report {
        schema,
        version: SCHEMA_VERSION,
        input_hash: config.content_hash(),
        config,
        summary,
    }
}

/// JSONL with a header line carrying schema, version and provenance.
fn write_jsonl<C: Serialize, R: Serialize>(path: &Path, schema: &str, config: &ExperimentConfig<C>, rows: &[R]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer(
        &mut w,
        &serde_json::json!({ "schema": schema, "version": SCHEMA_VERSION, "meta": config.provenance() }),
    )?;
    writeln!(w)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_audit_outputs(
    out: &Path,
    config: &ExperimentConfig<AuditSettings>,
    results: &[SequenceResult],
    text_len: Option<usize>,
) -> Result<AuditSummary> {
    let hash = config.content_hash();
    let s = &config.settings;
    let summary = summarize(results, s.tau_min, config.prefix_len, config.suffix_len, s.beam_width)?;
    save_results_with_meta(&out.join("results.jsonl"), results, config.provenance())?;
    write_json(&out.join("summary.json"), &report("summary", config, &summary))?;
    write_ccdf(&out.join("ccdf.csv"), &hash, &summary.mass_gain_ccdf)?;
    write_shares(&out.join("shares.csv"), &hash, results)?;
    if let Some(len) = text_len {
        write_heatmap(&out.join("heatmap.csv"), &hash, results, len, s.tau_min)?;
    }
    Ok(summary)
}

pub fn cmd_run(a: &RunArgs) -> Result<String> {
    let settings = AuditSettings::from_args(&a.search)?;
    let policy = policy_from_args(&a.decode)?;
    check_epsilon(settings.epsilon_max, a.decode.suffix_len)?;
    let pool = thread_pool(a.common.workers)?;
    let inputs = load_inputs(&a.provider, &a.input, &a.decode)?;
    let config = ExperimentConfig {
        command: "run",
        provider: inputs.provider_config.clone(),
        input: inputs.input_config.clone(),
        prefix_len: a.decode.prefix_len,
        suffix_len: a.decode.suffix_len,
        policy,
        seed: a.common.seed,
        settings,
    };
    let out = &a.common.out;
    create_out(out)?;
    let checkpoint = Checkpoint::open(&out.join("checkpoint.jsonl"), &config.content_hash(), a.fresh)?;
    let resumed = checkpoint.done.len();
    let results = audit_all(&pool, inputs.provider.as_ref(), &inputs.records, &policy, &settings, Some(&checkpoint))?;
    let summary = write_audit_outputs(out, &config, &results, inputs.text_len)?;
    let last = summary.rates.last();
    Ok(format!(
        "audited {} records ({} resumed); rate at eps={} is {:.4}; outputs in {}",
        results.len(),
        resumed.min(results.len()),
        summary.epsilon_max,
        last.map_or(0.0, |r| r.probabilistic),
        out.display()
    ))
}

#[derive(Clone, Copy, Debug, Serialize)]
struct McSettings {
    samples: u64,
    ball: Ball,
    replicates: usize,
    confidence_level: f64,
}

#[derive(Serialize)]
struct McRow {
    id: String,
    verbatim_mass: f64,
    #[serde(flatten)]
    estimate: McEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_replicate: Option<Vec<McEstimate>>,
}

#[derive(Serialize)]
struct McCsvRow<'a> {
    id: &'a str,
    verbatim_mass: f64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    hits: u64,
    samples: u64,
}

/// Per-record seed, independent of processing order.
fn record_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

pub fn cmd_mc(a: &McArgs) -> Result<String> {
    let policy = policy_from_args(&a.decode)?;
    check_epsilon(a.epsilon, a.decode.suffix_len)?;
    if a.samples == 0 || a.replicates == 0 {
        return Err(ConfigError::new("--samples and --replicates must be >= 1").into());
    }
    if !(a.confidence > 0.0 && a.confidence < 1.0) {
        return Err(ConfigError::new(format!("--confidence must be in (0, 1), got {}", a.confidence)).into());
    }
    let pool = thread_pool(a.common.workers)?;
    let inputs = load_inputs(&a.provider, &a.input, &a.decode)?;
    let settings = McSettings {
        samples: a.samples,
        ball: Ball::new(a.dist, a.epsilon),
        replicates: a.replicates,
        confidence_level: a.confidence,
    };
    let config = ExperimentConfig {
        command: "mc",
        provider: inputs.provider_config.clone(),
        input: inputs.input_config.clone(),
        prefix_len: a.decode.prefix_len,
        suffix_len: a.decode.suffix_len,
        policy,
        seed: a.common.seed,
        settings,
    };
    let provider = inputs.provider.as_ref();
    let mut rows: Vec<McRow> = pool.install(|| {
        inputs
            .records
            .par_iter()
            .map(|r| -> Result<McRow> {
                let cfg = McConfig {
                    samples: settings.samples,
                    seed: record_seed(a.common.seed, &r.id),
                    ball: settings.ball,
                    confidence_level: settings.confidence_level,
                };
                let p_z = teacher_force_verbatim(provider, &r.prefix, &r.suffix, &policy)?.prob();
                let (estimate, per_replicate) = if settings.replicates > 1 {
                    let reps = mc_replicates(provider, &r.prefix, &r.suffix, &policy, &cfg, settings.replicates)?;
                    (reps.pooled, Some(reps.per_replicate))
                } else {
                    (mc_estimate(provider, &r.prefix, &r.suffix, &policy, &cfg)?, None)
                };
                Ok(McRow {
                    id: r.id.clone(),
                    verbatim_mass: p_z,
                    estimate,
                    per_replicate,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by(|x, y| x.id.cmp(&y.id));

    #[derive(Serialize)]
    struct Summary {
        sequences: usize,
        mean_p_hat: f64,
        mean_verbatim_mass: f64,
        detected_fraction: f64,
        samples_per_sequence: u64,
    }
    let n = rows.len().max(1) as f64;
    let summary = Summary {
        sequences: rows.len(),
        mean_p_hat: rows.iter().map(|r| r.estimate.p_hat).sum::<f64>() / n,
        mean_verbatim_mass: rows.iter().map(|r| r.verbatim_mass).sum::<f64>() / n,
        detected_fraction: rows.iter().filter(|r| r.estimate.hits > 0).count() as f64 / n,
        samples_per_sequence: settings.samples * settings.replicates as u64,
    };
    let out = &a.common.out;
    create_out(out)?;
    write_jsonl(&out.join("mc.jsonl"), "mc", &config, &rows)?;
    write_csv(
        &out.join("mc.csv"),
        &config.content_hash(),
        rows.iter().map(|r| McCsvRow {
            id: &r.id,
            verbatim_mass: r.verbatim_mass,
            p_hat: r.estimate.p_hat,
            ci_low: r.estimate.ci_low,
            ci_high: r.estimate.ci_high,
            hits: r.estimate.hits,
            samples: r.estimate.samples,
        }),
    )?;
    let msg = format!(
        "estimated {} records with {} samples each; mean p_hat {:.4}; outputs in {}",
        summary.sequences,
        summary.samples_per_sequence,
        summary.mean_p_hat,
        out.display()
    );
    write_json(&out.join("mc_summary.json"), &report("mc_summary", &config, summary))?;
    Ok(msg)
}

#[derive(Clone, Copy, Debug, Serialize)]
struct OracleSettings {
    dist: DistanceKind,
    epsilon_max: usize,
    max_leaves: f64,
}

pub fn cmd_oracle(a: &OracleArgs) -> Result<String> {
    let policy = policy_from_args(&a.decode)?;
    check_epsilon(a.epsilon, a.decode.suffix_len)?;
    let guard = OracleGuard { max_leaves: a.max_leaves };
    // refuse before touching the model
    guard.check(policy.k, a.decode.suffix_len)?;
    let pool = thread_pool(a.common.workers)?;
    let inputs = load_inputs(&a.provider, &a.input, &a.decode)?;
    let settings = OracleSettings {
        dist: a.dist,
        epsilon_max: a.epsilon,
        max_leaves: a.max_leaves,
    };
    let config = ExperimentConfig {
        command: "oracle",
        provider: inputs.provider_config.clone(),
        input: inputs.input_config.clone(),
        prefix_len: a.decode.prefix_len,
        suffix_len: a.decode.suffix_len,
        policy,
        seed: a.common.seed,
        settings,
    };

    #[derive(Serialize)]
    struct Row {
        id: String,
        masses: Vec<f64>,
    }
    let provider = inputs.provider.as_ref();
    let mut rows: Vec<Row> = pool.install(|| {
        inputs
            .records
            .par_iter()
            .map(|r| -> Result<Row> {
                let masses = oracle_exact_masses(provider, &r.prefix, &r.suffix, &policy, a.dist, a.epsilon, guard)
                    .with_context(|| format!("record '{}'", r.id))?;
                Ok(Row { id: r.id.clone(), masses })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by(|x, y| x.id.cmp(&y.id));

    #[derive(Serialize)]
    struct Summary {
        sequences: usize,
        mean_mass: Vec<f64>,
    }
    let n = rows.len().max(1) as f64;
    let summary = Summary {
        sequences: rows.len(),
        mean_mass: (0..=a.epsilon).map(|e| rows.iter().map(|r| r.masses[e]).sum::<f64>() / n).collect(),
    };
    let out = &a.common.out;
    create_out(out)?;
    write_jsonl(&out.join("oracle.jsonl"), "oracle", &config, &rows)?;
    write_json(&out.join("oracle_summary.json"), &report("oracle_summary", &config, &summary))?;
    Ok(format!("enumerated {} records; outputs in {}", rows.len(), out.display()))
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum SweepAxis {
    BeamWidth,
    Epsilon,
}

#[derive(Clone, Debug, Serialize)]
struct SweepSettings {
    base: AuditSettings,
    axis: SweepAxis,
    values: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    axis: SweepAxis,
    value: usize,
    /// Budget the rates below refer to.
    epsilon: usize,
    verbatim_rate: f64,
    rate: f64,
    greedy_rate: f64,
    mean_mass: f64,
    mean_upper_bound: f64,
    token_evals: u64,
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<String> {
    let base = AuditSettings::from_args(&a.search)?;
    let policy = policy_from_args(&a.decode)?;
    let (axis, values) = if a.beam_widths.is_empty() {
        (SweepAxis::Epsilon, a.epsilons.clone())
    } else {
        (SweepAxis::BeamWidth, a.beam_widths.clone())
    };
    if values.is_empty() {
        return Err(ConfigError::new("nothing to sweep").into());
    }
    for &v in &values {
        match axis {
            SweepAxis::BeamWidth if v == 0 => return Err(ConfigError::new("beam widths must be >= 1").into()),
            SweepAxis::Epsilon => check_epsilon(v, a.decode.suffix_len)?,
            _ => {}
        }
    }
    if let SweepAxis::BeamWidth = axis {
        check_epsilon(base.epsilon_max, a.decode.suffix_len)?;
    }
    let pool = thread_pool(a.common.workers)?;
    let inputs = load_inputs(&a.provider, &a.input, &a.decode)?;
    let config = ExperimentConfig {
        command: "sweep",
        provider: inputs.provider_config.clone(),
        input: inputs.input_config.clone(),
        prefix_len: a.decode.prefix_len,
        suffix_len: a.decode.suffix_len,
        policy,
        seed: a.common.seed,
        settings: SweepSettings {
            base,
            axis,
            values: values.clone(),
        },
    };

    #[derive(Serialize)]
    struct Timing {
        value: usize,
        seconds: f64,
    }
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut summaries = Vec::new();
    for &v in &values {
        let settings = match axis {
            SweepAxis::BeamWidth => AuditSettings { beam_width: v, ..base },
            SweepAxis::Epsilon => AuditSettings { epsilon_max: v, ..base },
        };
        let start = Instant::now();
        let results = audit_all(&pool, inputs.provider.as_ref(), &inputs.records, &policy, &settings, None)?;
        timings.push(Timing {
            value: v,
            seconds: start.elapsed().as_secs_f64(),
        });
        let summary = summarize(&results, settings.tau_min, a.decode.prefix_len, a.decode.suffix_len, settings.beam_width)?;
        let eps = settings.epsilon_max.min(a.decode.suffix_len);
        let rate = summary.rates.get(eps).cloned();
        rows.push(SweepRow {
            axis,
            value: v,
            epsilon: eps,
            verbatim_rate: summary.verbatim_rate,
            rate: rate.as_ref().map_or(0.0, |r| r.probabilistic),
            greedy_rate: rate.as_ref().map_or(0.0, |r| r.greedy),
            mean_mass: ordered_mean(&results, |r| r.mass_at(eps)),
            mean_upper_bound: rate.as_ref().map_or(0.0, |r| r.mean_upper_bound),
            token_evals: results.iter().map(|r| r.token_evals).sum(),
        });
        summaries.push(summary);
    }

    let out = &a.common.out;
    create_out(out)?;
    let hash = config.content_hash();
    write_csv(&out.join("sweep.csv"), &hash, rows.iter().cloned())?;
    write_csv(&out.join("sweep_timing.csv"), &hash, timings)?;
    #[derive(Serialize)]
    struct Summary {
        rows: Vec<SweepRow>,
        per_value: Vec<AuditSummary>,
    }
    write_json(
        &out.join("sweep.json"),
        &report("sweep", &config, Summary { rows: rows.clone(), per_value: summaries }),
    )?;
    Ok(format!("swept {} values over {} records; outputs in {}", values.len(), inputs.records.len(), out.display()))
}

pub fn cmd_samplesize(a: &SampleSizeArgs) -> Result<String> {
    let value = match (a.delta, a.eta) {
        (Some(delta), _) => {
            let m = mc_detection_sample_size(a.p, delta).map_err(|e| ConfigError::new(e.to_string()))?;
            serde_json::json!({ "p": a.p, "delta": delta, "samples": m })
        }
        (None, Some(eta)) => {
            let m = mc_relse_sample_size(a.p, eta).map_err(|e| ConfigError::new(e.to_string()))?;
            serde_json::json!({ "p": a.p, "eta": eta, "samples": m })
        }
        (None, None) => return Err(ConfigError::new("one of --delta or --eta is required").into()),
    };
    Ok(value.to_string())
}

pub fn cmd_chunk(a: &ChunkArgs) -> Result<String> {
    let text = fs::read_to_string(&a.text).map_err(|e| ConfigError::new(format!("cannot read {}: {e}", a.text.display())))?;
    let params = ChunkParams {
        prefix_len: a.prefix_len,
        suffix_len: a.suffix_len,
        stride_chars: a.stride,
    };
    let source = a.source.clone().unwrap_or_else(|| source_label(&a.text));
    let records = match a.tokenizer {
        TokenizerKind::Whitespace => {
            if a.vocab_size < 2 {
                return Err(ConfigError::new("--vocab-size must be >= 2").into());
            }
            chunk_text(&text, &WhitespaceTokenizer::new(a.vocab_size), params, &source)?
        }
        TokenizerKind::Byte => chunk_text(&text, &ByteTokenizer, params, &source)?,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_out(dir)?;
    }
    save_records(&a.out, &records)?;
    Ok(format!("wrote {} records to {}", records.len(), a.out.display()))
}
