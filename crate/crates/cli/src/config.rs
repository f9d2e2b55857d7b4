//! Resolved experiment configuration and the inputs it points at.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{Context, Result};
use extraction_audit::corpus::{chunk_text, load_records, ByteTokenizer, ChunkParams, SequenceRecord, WhitespaceTokenizer};
use extraction_audit::distance::DistanceKind;
use extraction_audit::model::{RemoteProvider, SyntheticSpec};
use extraction_audit::{DecodingPolicy, TokenDistributionProvider};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::{DecodeArgs, InputArgs, ProviderArgs, SearchArgs, TokenizerKind, VariantKind};
use crate::ConfigError;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Synthetic { path: String, sha256: String },
    Remote { endpoint: String, model_name: String, vocab_size: usize },
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputConfig {
    Records { path: String, sha256: String },
    Text { path: String, sha256: String, tokenizer: TokenizerKind, stride: usize },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AuditSettings {
    pub beam_width: usize,
    pub variant: VariantKind,
    pub dist: DistanceKind,
    pub epsilon_max: usize,
    pub tau_min: f64,
    pub early_stop: bool,
}

impl AuditSettings {
    pub fn from_args(a: &SearchArgs) -> Result<Self> {
        let dist = match a.variant {
            VariantKind::Baseline => a.dist,
            VariantKind::Ham => DistanceKind::Hamming,
            VariantKind::Lev => DistanceKind::Levenshtein,
        };
        if a.beam_width == 0 {
            return Err(ConfigError::new("--beam-width must be >= 1").into());
        }
        if !(a.tau_min > 0.0 && a.tau_min <= 1.0) {
            return Err(ConfigError::new(format!("--tau-min must be in (0, 1], got {}", a.tau_min)).into());
        }
        Ok(Self {
            beam_width: a.beam_width,
            variant: a.variant,
            dist,
            epsilon_max: a.epsilon,
            tau_min: a.tau_min,
            early_stop: a.early_stop,
        })
    }
}

/// Everything that determines the outputs. Worker count and output
/// directory are deliberately absent: they never change results.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig<T: Serialize> {
    pub command: &'static str,
    pub provider: ProviderConfig,
    pub input: InputConfig,
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub policy: DecodingPolicy,
    pub seed: u64,
    pub settings: T,
}

impl<T: Serialize> ExperimentConfig<T> {
    /// SHA-256 over the canonical JSON of the config, which itself carries
    /// the digests of every input file.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({ "input_hash": self.content_hash(), "config": self })
    }
}

pub struct Inputs {
    pub provider: Box<dyn TokenDistributionProvider>,
    pub provider_config: ProviderConfig,
    pub records: Vec<SequenceRecord>,
    pub input_config: InputConfig,
    /// Length of the source text, when chunked from raw text.
    pub text_len: Option<usize>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn policy_from_args(d: &DecodeArgs) -> Result<DecodingPolicy> {
    if d.prefix_len == 0 || d.suffix_len == 0 {
        return Err(ConfigError::new("--prefix-len and --suffix-len must be >= 1").into());
    }
    if !(d.temperature > 0.0 && d.temperature.is_finite()) {
        return Err(ConfigError::new(format!("--temperature must be positive, got {}", d.temperature)).into());
    }
    if d.top_k == 0 {
        return Err(ConfigError::new("--top-k must be >= 1").into());
    }
    Ok(DecodingPolicy {
        k: d.top_k,
        beta: d.temperature,
    })
}

pub fn open_provider(args: &ProviderArgs) -> Result<(Box<dyn TokenDistributionProvider>, ProviderConfig)> {
    if args.provider == "remote" {
        let endpoint = args
            .endpoint
            .clone()
            .ok_or_else(|| ConfigError::new("--provider remote needs --endpoint or EXTRACTION_AUDIT_ENDPOINT"))?;
        let remote = RemoteProvider::connect(&endpoint).with_context(|| format!("connecting to {endpoint}"))?;
        let cfg = ProviderConfig::Remote {
            endpoint,
            model_name: remote.model_name().to_string(),
            vocab_size: remote.vocabulary().size,
        };
        return Ok((Box::new(remote), cfg));
    }
    let path = Path::new(&args.provider);
    let spec = SyntheticSpec::load(path).with_context(|| format!("loading model spec {}", path.display()))?;
    let provider = spec.build().with_context(|| format!("building model from {}", path.display()))?;
    let cfg = ProviderConfig::Synthetic {
        path: args.provider.clone(),
        sha256: file_digest(path)?,
    };
    Ok((provider, cfg))
}

/// Opens the provider and loads (or chunks) the records, checking them
/// against the configured lengths and the provider vocabulary.
pub fn load_inputs(provider: &ProviderArgs, input: &InputArgs, decode: &DecodeArgs) -> Result<Inputs> {
    let policy = policy_from_args(decode)?;
    let (provider, provider_config) = open_provider(provider)?;
    let vocab = provider.vocabulary();
    policy.validate(&vocab).map_err(|e| ConfigError::new(e.to_string()))?;

    let (records, input_config, text_len) = match (&input.records, &input.text) {
        (Some(path), _) => {
            let records = load_records(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = InputConfig::Records {
                path: path.display().to_string(),
                sha256: file_digest(path)?,
            };
            (records, cfg, None)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let params = ChunkParams {
                prefix_len: decode.prefix_len,
                suffix_len: decode.suffix_len,
                stride_chars: input.stride,
            };
            let source = source_label(path);
            let records = match input.tokenizer {
                TokenizerKind::Whitespace => chunk_text(&text, &WhitespaceTokenizer::new(vocab.size), params, &source)?,
                TokenizerKind::Byte => {
                    if vocab.size < 256 {
                        return Err(ConfigError::new(format!(
                            "byte tokenizer needs a vocabulary of at least 256, provider has {}",
                            vocab.size
                        ))
                        .into());
                    }
                    chunk_text(&text, &ByteTokenizer, params, &source)?
                }
            };
            let cfg = InputConfig::Text {
                path: path.display().to_string(),
                sha256: file_digest(path)?,
                tokenizer: input.tokenizer,
                stride: input.stride,
            };
            (records, cfg, Some(text.len()))
        }
        (None, None) => return Err(ConfigError::new("either --records or --text is required").into()),
    };

    let mut ids = HashSet::new();
    for r in &records {
        if !ids.insert(r.id.as_str()) {
            return Err(ConfigError::new(format!("duplicate record id '{}'", r.id)).into());
        }
        if r.prefix.len() != decode.prefix_len || r.suffix.len() != decode.suffix_len {
            return Err(ConfigError::new(format!(
                "record '{}' has prefix/suffix lengths {}/{}, configured {}/{}",
                r.id,
                r.prefix.len(),
                r.suffix.len(),
                decode.prefix_len,
                decode.suffix_len
            ))
            .into());
        }
        if let Some(t) = r.prefix.iter().chain(&r.suffix).find(|&&t| !vocab.contains(t)) {
            return Err(ConfigError::new(format!(
                "record '{}' has token {t} outside the vocabulary of size {}",
                r.id, vocab.size
            ))
            .into());
        }
    }
    Ok(Inputs {
        provider,
        provider_config,
        records,
        input_config,
        text_len,
    })
}

pub fn source_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    if workers == Some(0) {
        return Err(ConfigError::new("--workers must be >= 1").into());
    }
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()?)
}
