//! Per-record audit and the resumable checkpoint around it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use extraction_audit::corpus::SequenceRecord;
use extraction_audit::metrics::SequenceResult;
use extraction_audit::model::{greedy_decode, teacher_force_verbatim};
use extraction_audit::search::{kcbs, postprocess_filter, Ball, SearchConfig, Variant};
use extraction_audit::{DecodingPolicy, TokenDistributionProvider};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::VariantKind;
use crate::config::AuditSettings;
use crate::ConfigError;

/// Bounds on near-verbatim mass for ε = 0..=ε_max for one record.
///
/// Baseline runs one search and filters its finals at every ε. Pruned
/// variants run one search per ε. The reported lower bounds are made
/// monotone in ε and never fall below the teacher-forced verbatim mass;
/// upper bounds are tightened by every larger budget's bound.
pub fn audit_record(
    provider: &dyn TokenDistributionProvider,
    record: &SequenceRecord,
    policy: &DecodingPolicy,
    settings: &AuditSettings,
) -> extraction_audit::Result<SequenceResult> {
    let (prefix, target) = (&record.prefix[..], &record.suffix[..]);
    let t = target.len();
    let eps_max = settings.epsilon_max.min(t);
    let p_z = teacher_force_verbatim(provider, prefix, target, policy)?.prob();
    let greedy = greedy_decode(provider, prefix, t)?;
    let greedy_distance = settings.dist.distance(&greedy, target)?;

    let config = |variant| SearchConfig {
        beam_width: settings.beam_width,
        policy: *policy,
        suffix_len: t,
        variant,
        tau_min: settings.early_stop.then_some(settings.tau_min),
        record_eos: false,
        track_nonviable: false,
    };
    let mut lower = Vec::with_capacity(eps_max + 1);
    let mut upper = Vec::with_capacity(eps_max + 1);
    let mut token_evals = 0;
    match settings.variant {
        VariantKind::Baseline => {
            let out = kcbs(provider, prefix, Some(target), &config(Variant::Baseline { filter: None }))?;
            token_evals += out.token_evals;
            let uncovered = (1.0 - out.covered_mass).max(0.0);
            for eps in 0..=eps_max {
                let lb = postprocess_filter(&out.finals, target, settings.dist, eps)?.lower_bound;
                lower.push(lb);
                upper.push((lb + uncovered).min(1.0));
            }
        }
        VariantKind::Ham | VariantKind::Lev => {
            for eps in 0..=eps_max {
                let ball = Ball::new(settings.dist, eps);
                let out = kcbs(provider, prefix, Some(target), &config(Variant::Pruned { ball }))?;
                token_evals += out.token_evals;
                lower.push(out.lower_bound);
                upper.push(out.upper_bound);
            }
        }
    }

    let mut mass: Vec<f64> = Vec::with_capacity(lower.len());
    for (eps, &lb) in lower.iter().enumerate() {
        let prev = if eps == 0 { 0.0 } else { mass[eps - 1] };
        mass.push(lb.max(p_z).max(prev));
    }
    for eps in (0..upper.len()).rev() {
        if eps + 1 < upper.len() {
            upper[eps] = upper[eps].min(upper[eps + 1]);
        }
    }
    for (u, &m) in upper.iter_mut().zip(&mass) {
        *u = u.max(m);
    }

    Ok(SequenceResult {
        id: record.id.clone(),
        verbatim_mass: p_z,
        nearverbatim_mass: mass,
        upper_bound: upper,
        greedy_distance: Some(greedy_distance),
        token_evals,
        char_span: record.char_span,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    checkpoint: String,
}

/// Append-only per-record results, keyed by the run's content hash.
pub struct Checkpoint {
    path: PathBuf,
    writer: Mutex<File>,
    pub done: HashMap<String, SequenceResult>,
}

impl Checkpoint {
    /// Opens `path`, keeping prior results when they come from the same
    /// configuration. A torn final line from an interrupted write is dropped.
    pub fn open(path: &Path, hash: &str, fresh: bool) -> Result<Self> {
        let mut done = HashMap::new();
        if path.exists() && !fresh {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = reader.lines();
            if let Some(first) = lines.next() {
                let header: CheckpointHeader = serde_json::from_str(&first?)
                    .with_context(|| format!("{} is not a checkpoint file", path.display()))?;
                if header.checkpoint != hash {
                    return Err(ConfigError::new(format!(
                        "{} belongs to a different configuration; rerun with --fresh to discard it",
                        path.display()
                    ))
                    .into());
                }
                for line in lines {
                    match serde_json::from_str::<SequenceResult>(&line?) {
                        Ok(r) => {
                            done.insert(r.id.clone(), r);
                        }
                        Err(_) => break,
                    }
                }
            }
        }
        // rewrite so the file holds exactly the header and the valid entries
        let mut file = File::create(path)?;
        serde_json::to_writer(&mut file, &CheckpointHeader { checkpoint: hash.to_string() })?;
        writeln!(file)?;
        let mut kept: Vec<&SequenceResult> = done.values().collect();
        kept.sort_by(|a, b| a.id.cmp(&b.id));
        for r in kept {
            serde_json::to_writer(&mut file, r)?;
            writeln!(file)?;
        }
        file.sync_data()?;
        drop(file);
        let writer = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: Mutex::new(writer),
            done,
        })
    }

    pub fn append(&self, result: &SequenceResult) -> Result<()> {
        let mut line = serde_json::to_vec(result)?;
        line.push(b'\n');
        let mut w = self.writer.lock().expect("checkpoint lock");
        w.write_all(&line)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", self.path.display()))
    }
}

/// Audits every record not already in `checkpoint`, appending each result
/// as soon as it is ready. Returns all results sorted by id.
pub fn audit_all(
    pool: &rayon::ThreadPool,
    provider: &dyn TokenDistributionProvider,
    records: &[SequenceRecord],
    policy: &DecodingPolicy,
    settings: &AuditSettings,
    checkpoint: Option<&Checkpoint>,
) -> Result<Vec<SequenceResult>> {
    let pending: Vec<&SequenceRecord> = records
        .iter()
        .filter(|r| checkpoint.is_none_or(|c| !c.done.contains_key(&r.id)))
        .collect();
    let fresh: Vec<SequenceResult> = pool.install(|| {
        pending
            .par_iter()
            .map(|r| -> Result<SequenceResult> {
                let res = audit_record(provider, r, policy, settings).with_context(|| format!("record '{}'", r.id))?;
                if let Some(c) = checkpoint {
                    c.append(&res)?;
                }
                Ok(res)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut all = fresh;
    if let Some(c) = checkpoint {
        let wanted: std::collections::HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        all.extend(c.done.values().filter(|r| wanted.contains(r.id.as_str())).cloned());
    }
    all.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(all)
}
