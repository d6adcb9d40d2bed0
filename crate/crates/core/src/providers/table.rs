//! Deterministic fixture provider backed by explicit per-position
//! distributions. Position i of an input is scored against row i of the
//! tables, so tests can dictate every probability the scorer sees.

use crate::providers::{Provider, ProviderError, ProviderPair};
use crate::types::{PositionAnalysis, PositionRecord, TokenId, TokenSequence};

/// Tokens are letters: 'A' is id 0, 'B' is id 1, and so on.
const TOKEN_LETTERS: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

pub struct TableProvider {
    reference: Vec<Vec<f64>>,
    observer: Vec<Vec<f64>>,
    /// Reference argmax per row, ties resolved to the lowest token id.
    argmax: Vec<(TokenId, f64)>,
    /// Full cross entropy per row.
    xent: Vec<f64>,
    pair: ProviderPair,
}

impl TableProvider {
    /// Both tables need the same shape: one row per position, one strictly
    /// positive probability per token, each row summing to 1 within 1e-9.
    pub fn new(reference: Vec<Vec<f64>>, observer: Vec<Vec<f64>>) -> Result<Self, ProviderError> {
        if reference.is_empty() {
            return Err(ProviderError::InvalidParameter("tables need at least one row".into()));
        }
        if reference.len() != observer.len() {
            return Err(ProviderError::InvalidParameter(format!(
                "reference has {} rows, observer has {}",
                reference.len(),
                observer.len()
            )));
        }
        let vocab = reference[0].len();
        if vocab < 2 {
            return Err(ProviderError::InvalidParameter(
                "vocabulary needs at least two tokens".into(),
            ));
        }
        for (name, table) in [("reference", &reference), ("observer", &observer)] {
            for (row_idx, row) in table.iter().enumerate() {
                if row.len() != vocab {
                    return Err(ProviderError::InvalidParameter(format!(
                        "{name} row {row_idx} has {} entries, expected {vocab}",
                        row.len()
                    )));
                }
                let mut sum = 0.0;
                for &p in row {
                    if !(p.is_finite() && p > 0.0) {
                        return Err(ProviderError::InvalidParameter(format!(
                            "{name} row {row_idx} has a non-positive probability"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(ProviderError::InvalidParameter(format!(
                        "{name} row {row_idx} sums to {sum}, expected 1"
                    )));
                }
            }
        }

        let argmax = reference
            .iter()
            .map(|row| {
                let mut best = (0u32, row[0]);
                for (tok, &p) in row.iter().enumerate().skip(1) {
                    if p > best.1 {
                        best = (tok as TokenId, p);
                    }
                }
                best
            })
            .collect();
        let xent = reference
            .iter()
            .zip(&observer)
            .map(|(r, o)| -r.iter().zip(o).map(|(&pr, &po)| pr * po.ln()).sum::<f64>())
            .collect();
        let pair = ProviderPair {
            reference_id: "table:reference".into(),
            observer_id: "table:observer".into(),
            vocab_size: vocab as u32,
            supports_full_cross_entropy: true,
            max_tokens: reference.len(),
        };
        Ok(TableProvider { reference, observer, argmax, xent, pair })
    }
}

impl Provider for TableProvider {
    fn pair(&self) -> &ProviderPair {
        &self.pair
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut ids = Vec::with_capacity(text.len());
        for ch in text.chars() {
            let id = TOKEN_LETTERS
                .find(ch)
                .map(|i| i as TokenId)
                .filter(|&i| i < self.pair.vocab_size)
                .ok_or_else(|| ProviderError::InvalidParameter(format!(
                    "character {ch:?} is not a table token"
                )))?;
            ids.push(id);
        }
        Ok(TokenSequence::with_text(ids, text))
    }

    fn detokenize(&self, tokens: &TokenSequence) -> Result<String, ProviderError> {
        tokens
            .token_ids
            .iter()
            .map(|&id| {
                TOKEN_LETTERS
                    .as_bytes()
                    .get(id as usize)
                    .filter(|_| id < self.pair.vocab_size)
                    .map(|&b| b as char)
                    .ok_or(ProviderError::VocabMismatch {
                        token: id,
                        vocab_size: self.pair.vocab_size,
                    })
            })
            .collect()
    }

    fn analyze(
        &self,
        tokens: &TokenSequence,
        include_full_xent: bool,
    ) -> Result<PositionAnalysis, ProviderError> {
        if tokens.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if tokens.len() > self.reference.len() {
            return Err(ProviderError::InvalidParameter(format!(
                "table scores at most {} positions, got {}",
                self.reference.len(),
                tokens.len()
            )));
        }
        let mut records = Vec::with_capacity(tokens.len());
        for (i, &tok) in tokens.token_ids.iter().enumerate() {
            if tok >= self.pair.vocab_size {
                return Err(ProviderError::VocabMismatch {
                    token: tok,
                    vocab_size: self.pair.vocab_size,
                });
            }
            let (argmax_token, argmax_p) = self.argmax[i];
            records.push(PositionRecord {
                index: i + 1,
                actual_token: tok,
                actual_logprob_ref: self.reference[i][tok as usize].ln(),
                actual_logprob_obs: self.observer[i][tok as usize].ln(),
                argmax_token,
                argmax_logprob_ref: argmax_p.ln(),
                cross_entropy_full: include_full_xent.then(|| self.xent[i]),
            });
        }
        PositionAnalysis::new(records).map_err(|e| ProviderError::Protocol(e.to_string()))
    }
}
