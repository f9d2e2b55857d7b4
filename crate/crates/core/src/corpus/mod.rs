//! Prefix/suffix records and their sources.

mod io;
mod tokenizer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

pub use io::{load_records, load_results, save_records, save_results, save_results_with_meta, SCHEMA_VERSION};
pub use tokenizer::{ByteTokenizer, Token, Tokenizer, WhitespaceTokenizer};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub prefix: Vec<TokenId>,
    pub suffix: Vec<TokenId>,
    /// Byte offsets of the suffix in the source text.
    #[serde(default)]
    pub char_span: Option<(usize, usize)>,
    #[serde(default)]
    pub source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub stride_chars: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            prefix_len: 50,
            suffix_len: 50,
            stride_chars: 20,
        }
    }
}

/// Cuts `text` into windows starting every `stride_chars` bytes.
///
/// Each window is tokenized forward from its start and keeps the first
/// `prefix_len + suffix_len` tokens; windows that run out of text are
/// dropped. Starts inside a multi-byte character move to the next boundary.
pub fn chunk_text<T: Tokenizer + ?Sized>(
    text: &str,
    tokenizer: &T,
    params: ChunkParams,
    source: &str,
) -> Result<Vec<SequenceRecord>> {
    if params.stride_chars == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if params.prefix_len == 0 || params.suffix_len == 0 {
        return Err(Error::invalid("prefix and suffix lengths must be >= 1"));
    }
    let window = params.prefix_len + params.suffix_len;
    let mut records = Vec::new();
    let mut last_start = None;
    for raw in (0..text.len()).step_by(params.stride_chars) {
        let mut start = raw;
        while !text.is_char_boundary(start) {
            start += 1;
        }
        if last_start == Some(start) {
            continue;
        }
        last_start = Some(start);
        let tokens = tokenizer.encode_prefix(&text[start..], window);
        if tokens.len() < window {
            // later windows have even less text
            break;
        }
        let suffix = &tokens[params.prefix_len..];
        let span = (start + suffix[0].start, start + suffix[suffix.len() - 1].end);
        records.push(SequenceRecord {
            id: format!("{source}:{start:08}"),
            prefix: tokens[..params.prefix_len].iter().map(|t| t.id).collect(),
            suffix: suffix.iter().map(|t| t.id).collect(),
            char_span: Some(span),
            source: source.to_string(),
        });
    }
    Ok(records)
}
