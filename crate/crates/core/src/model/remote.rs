//! HTTP client for a logits server speaking the `/v1` JSON protocol.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LogitRow, TokenDistributionProvider, TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;
/// Maximum number of histories per `/v1/logits` request.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Deserialize)]
struct Meta {
    protocol: u64,
    vocab_size: usize,
    eos_id: Option<TokenId>,
    #[serde(default)]
    model_name: String,
}

#[derive(Serialize)]
struct LogitsRequest<'a> {
    histories: &'a [&'a [TokenId]],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct RemoteProvider {
    base: String,
    agent: ureq::Agent,
    vocab: Vocabulary,
    model_name: String,
}

impl RemoteProvider {
    /// Performs the metadata handshake against `endpoint` (e.g. `http://127.0.0.1:8000`).
    pub fn connect(endpoint: &str) -> Result<Self> {
        let base = endpoint.trim_end_matches('/').to_string();
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build();
        let meta = fetch_meta(&agent, &base)?;
        if meta.protocol != PROTOCOL_VERSION {
            return Err(Error::ProtocolVersion {
                server: meta.protocol,
                expected: PROTOCOL_VERSION,
            });
        }
        let vocab = Vocabulary::new(meta.vocab_size, meta.eos_id)
            .map_err(|e| Error::Protocol(format!("bad metadata: {e}")))?;
        Ok(Self {
            base,
            agent,
            vocab,
            model_name: meta.model_name,
        })
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn request(&self, histories: &[&[TokenId]]) -> Result<Vec<LogitRow>> {
        let resp = self
            .agent
            .post(&format!("{}/v1/logits", self.base))
            .send_json(LogitsRequest { histories })
            .map_err(map_ureq)?;
        let body: LogitsResponse = resp
            .into_json()
            .map_err(|e| Error::Protocol(format!("malformed logits response: {e}")))?;
        if body.logits.len() != histories.len() {
            return Err(Error::Protocol(format!(
                "requested {} rows, received {}",
                histories.len(),
                body.logits.len()
            )));
        }
        let mut rows = Vec::with_capacity(body.logits.len());
        for row in body.logits {
            if row.len() != self.vocab.size {
                return Err(self.diagnose_width(row.len()));
            }
            rows.push(LogitRow::new(row).map_err(|e| Error::Protocol(e.to_string()))?);
        }
        Ok(rows)
    }

    // A wrong-width row is a vocabulary change if the server now advertises
    // a different size, and a plain protocol violation otherwise.
    fn diagnose_width(&self, got: usize) -> Error {
        match fetch_meta(&self.agent, &self.base) {
            Ok(meta) if meta.vocab_size != self.vocab.size => Error::VocabMismatch {
                expected: self.vocab.size,
                got: meta.vocab_size,
            },
            _ => Error::Protocol(format!(
                "row has {got} values, vocabulary has {}",
                self.vocab.size
            )),
        }
    }
}

fn fetch_meta(agent: &ureq::Agent, base: &str) -> Result<Meta> {
    agent
        .get(&format!("{base}/v1/meta"))
        .call()
        .map_err(map_ureq)?
        .into_json()
        .map_err(|e| Error::Protocol(format!("malformed metadata: {e}")))
}

fn map_ureq(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            Error::Protocol(format!("HTTP {code}: {body}"))
        }
        ureq::Error::Transport(t) => Error::Connection(t.to_string()),
    }
}

impl TokenDistributionProvider for RemoteProvider {
    fn vocabulary(&self) -> Vocabulary {
        self.vocab
    }

    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow> {
        Ok(self.request(&[history])?.pop().expect("one row requested"))
    }

    fn next_logits_batch(&self, histories: &[&[TokenId]]) -> Result<Vec<LogitRow>> {
        let mut out = Vec::with_capacity(histories.len());
        for chunk in histories.chunks(MAX_BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}
