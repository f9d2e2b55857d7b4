use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{LogitRow, TokenDistributionProvider, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Explicit history → logits lookup with a fallback row.
#[derive(Clone, Debug)]
pub struct TableModel {
    vocab: Vocabulary,
    default: LogitRow,
    rows: HashMap<Vec<TokenId>, LogitRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableSpec {
    pub vocab_size: usize,
    #[serde(default)]
    pub eos_id: Option<TokenId>,
    pub default: Vec<f64>,
    #[serde(default)]
    pub rows: Vec<TableEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableEntry {
    pub history: Vec<TokenId>,
    pub logits: Vec<f64>,
}

impl TableModel {
    pub fn new(vocab: Vocabulary, default: Vec<f64>) -> Result<Self> {
        let default = LogitRow::new(default)?;
        if default.len() != vocab.size {
            return Err(Error::invalid(format!(
                "default row has {} entries, vocabulary has {}",
                default.len(),
                vocab.size
            )));
        }
        Ok(Self {
            vocab,
            default,
            rows: HashMap::new(),
        })
    }

    /// Uniform fallback row.
    pub fn uniform(vocab: Vocabulary) -> Self {
        Self::new(vocab, vec![0.0; vocab.size]).expect("uniform row is valid")
    }

    pub fn set_row(&mut self, history: Vec<TokenId>, logits: Vec<f64>) -> Result<()> {
        let row = LogitRow::new(logits)?;
        if row.len() != self.vocab.size {
            return Err(Error::invalid(format!(
                "row has {} entries, vocabulary has {}",
                row.len(),
                self.vocab.size
            )));
        }
        self.rows.insert(history, row);
        Ok(())
    }

    pub fn with_row(mut self, history: Vec<TokenId>, logits: Vec<f64>) -> Result<Self> {
        self.set_row(history, logits)?;
        Ok(self)
    }

    pub fn from_spec(spec: &TableSpec) -> Result<Self> {
        let vocab = Vocabulary::new(spec.vocab_size, spec.eos_id)?;
        let mut m = Self::new(vocab, spec.default.clone())?;
        for e in &spec.rows {
            m.set_row(e.history.clone(), e.logits.clone())?;
        }
        Ok(m)
    }

    pub fn to_spec(&self) -> TableSpec {
        let mut rows: Vec<TableEntry> = self
            .rows
            .iter()
            .map(|(h, r)| TableEntry {
                history: h.clone(),
                logits: r.values().to_vec(),
            })
            .collect();
        rows.sort_by(|a, b| a.history.cmp(&b.history));
        TableSpec {
            vocab_size: self.vocab.size,
            eos_id: self.vocab.eos,
            default: self.default.values().to_vec(),
            rows,
        }
    }
}

impl TokenDistributionProvider for TableModel {
    fn vocabulary(&self) -> Vocabulary {
        self.vocab
    }

    fn next_logits(&self, history: &[TokenId]) -> Result<LogitRow> {
        Ok(self.rows.get(history).unwrap_or(&self.default).clone())
    }
}
