//! Shared domain types: token sequences, per-position analysis records,
//! repair bookkeeping, decisions and labeled corpora.

use std::collections::BTreeSet;
use std::error::Error;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Token identifier within a provider pair's shared vocabulary.
pub type TokenId = u32;

/// A tokenized text. `text` is retained when the sequence came straight from
/// a tokenizer and is dropped by transformations that invalidate it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<TokenId>,
    pub text: Option<String>,
}

impl TokenSequence {
    pub fn new(token_ids: Vec<TokenId>) -> Self {
        TokenSequence { token_ids, text: None }
    }

    pub fn with_text(token_ids: Vec<TokenId>, text: impl Into<String>) -> Self {
        TokenSequence { token_ids, text: Some(text.into()) }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Everything the scorer needs to know about one position of a sequence,
/// as reported by a provider pair (reference model M1, observer model M2).
///
/// Log-probabilities are natural-log and conditioned on the *original*
/// prefix of the sequence, which is what makes single-pass repair scoring
/// possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    /// 1-based position within the scored sequence.
    pub index: usize,
    /// Token actually present at this position.
    pub actual_token: TokenId,
    /// log P_M1(actual | original prefix).
    pub actual_logprob_ref: f64,
    /// log P_M2(actual | original prefix).
    pub actual_logprob_obs: f64,
    /// Token M1 ranks highest at this position.
    pub argmax_token: TokenId,
    /// log P_M1(argmax | original prefix).
    pub argmax_logprob_ref: f64,
    /// Full-vocabulary cross entropy -sum_v P_M1(v) log P_M2(v), when the
    /// provider can supply it.
    pub cross_entropy_full: Option<f64>,
}

impl PositionRecord {
    fn validate(&self) -> Result<(), CoreError> {
        let lp_ok = |lp: f64| lp.is_finite() && lp <= 0.0;
        if !lp_ok(self.actual_logprob_ref) || !lp_ok(self.actual_logprob_obs) {
            return Err(CoreError::InvalidRecord {
                index: self.index,
                reason: "log-probabilities must be finite and <= 0",
            });
        }
        if !lp_ok(self.argmax_logprob_ref) {
            return Err(CoreError::InvalidRecord {
                index: self.index,
                reason: "argmax log-probability must be finite and <= 0",
            });
        }
        if self.actual_logprob_ref > self.argmax_logprob_ref {
            return Err(CoreError::InvalidRecord {
                index: self.index,
                reason: "actual token cannot outrank the argmax token",
            });
        }
        if let Some(x) = self.cross_entropy_full {
            if !x.is_finite() || x < 0.0 {
                return Err(CoreError::InvalidRecord {
                    index: self.index,
                    reason: "cross entropy must be finite and >= 0",
                });
            }
        }
        Ok(())
    }

    /// Whether the sequence token disagrees with the reference argmax here.
    pub fn is_mutated(&self) -> bool {
        self.actual_token != self.argmax_token
    }
}

/// Validated per-position records for a whole sequence. This is the one
/// provider round-trip everything downstream is derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionAnalysis {
    records: Vec<PositionRecord>,
    mutated_positions: Vec<usize>,
}

impl PositionAnalysis {
    /// Validates records and indexes the mutated positions. Records must be
    /// contiguously indexed 1..=L.
    pub fn new(records: Vec<PositionRecord>) -> Result<Self, CoreError> {
        if records.is_empty() {
            return Err(CoreError::EmptyAnalysis);
        }
        for (slot, rec) in records.iter().enumerate() {
            let expected = slot + 1;
            if rec.index != expected {
                return Err(CoreError::NonContiguousIndex { expected, found: rec.index });
            }
            rec.validate()?;
        }
        let mutated_positions = records
            .iter()
            .filter(|r| r.is_mutated())
            .map(|r| r.index)
            .collect();
        Ok(PositionAnalysis { records, mutated_positions })
    }

    pub fn records(&self) -> &[PositionRecord] {
        &self.records
    }

    /// Scored sequence length L.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Positions (1-based, ascending) where the sequence deviates from the
    /// reference argmax. Its length is the mutation count T.
    pub fn mutated_positions(&self) -> &[usize] {
        &self.mutated_positions
    }

    pub fn mutation_count(&self) -> usize {
        self.mutated_positions.len()
    }

    /// Keeps only the first `n` positions. Valid because every record is
    /// conditioned on the original prefix, so a prefix of the analysis is
    /// exactly the analysis of the prefix. Identity when `n >= len`.
    pub fn truncated(&self, n: usize) -> Self {
        if n >= self.records.len() {
            return self.clone();
        }
        let records: Vec<PositionRecord> = self.records[..n.max(1)].to_vec();
        let mutated_positions = records
            .iter()
            .filter(|r| r.is_mutated())
            .map(|r| r.index)
            .collect();
        PositionAnalysis { records, mutated_positions }
    }
}

/// Set of positions whose mutation has been repaired (replaced by the
/// reference argmax token). Positions are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepairState {
    repaired: BTreeSet<usize>,
}

impl RepairState {
    pub fn empty() -> Self {
        RepairState::default()
    }

    pub fn from_positions(positions: impl IntoIterator<Item = usize>) -> Self {
        RepairState { repaired: positions.into_iter().collect() }
    }

    pub fn insert(&mut self, position: usize) {
        self.repaired.insert(position);
    }

    pub fn contains(&self, position: usize) -> bool {
        self.repaired.contains(&position)
    }

    pub fn len(&self) -> usize {
        self.repaired.len()
    }

    pub fn is_empty(&self) -> bool {
        self.repaired.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.repaired.iter().copied()
    }
}

/// Order in which mutations are repaired when building a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairStrategy {
    /// Repair positions where the model ranked the actual token highest
    /// first, i.e. smallest repair gain first; upper envelope.
    HighToLow,
    /// Repair the largest-gain positions first; lower envelope.
    LowToHigh,
    /// Repair in position order.
    Sequential,
    /// Seeded uniform shuffle of the mutated positions.
    Random,
    /// No explicit order: the exact expectation over orders in closed form.
    ClosedForm,
}

impl fmt::Display for RepairStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RepairStrategy::HighToLow => "high_to_low",
            RepairStrategy::LowToHigh => "low_to_high",
            RepairStrategy::Sequential => "sequential",
            RepairStrategy::Random => "random",
            RepairStrategy::ClosedForm => "closed_form",
        };
        f.write_str(name)
    }
}

/// A repair trajectory: the visited scores sigma(s_t | s) for t = 0..=T
/// along one permutation of the mutated positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairTrajectory {
    /// Mutated positions in the order they were repaired; length T.
    pub permutation: Vec<usize>,
    /// Conditional scores, length T + 1; `scores[0]` is the unrepaired score.
    pub scores: Vec<f64>,
    pub strategy: RepairStrategy,
}

impl RepairTrajectory {
    pub fn steps(&self) -> usize {
        self.permutation.len()
    }

    /// Mean of the visited scores: the repair score for this order.
    pub fn repair_score(&self) -> f64 {
        let sum: f64 = self.scores.iter().sum();
        sum / self.scores.len() as f64
    }
}

/// Binary outcome of thresholding a repair score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    HumanWritten,
    AiGenerated,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::HumanWritten => f.write_str("human_written"),
            Decision::AiGenerated => f.write_str("ai_generated"),
        }
    }
}

/// Ground-truth class of a corpus sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Human,
    Ai,
}

impl Label {
    pub fn is_ai(self) -> bool {
        matches!(self, Label::Ai)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Human => f.write_str("human"),
            Label::Ai => f.write_str("ai"),
        }
    }
}

/// Intermediate quantities behind a verdict, useful for reports and debugging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// sigma(s): conditional score of the unrepaired sequence.
    pub sigma_s: f64,
    /// sigma(s_ideal | s): score with every mutation repaired.
    pub sigma_ideal: f64,
    /// log-perplexity of the unrepaired sequence under the reference model.
    pub log_ppl: f64,
    /// cross-perplexity denominator shared by the whole trajectory.
    pub x_ppl: f64,
    /// Mutation count T.
    pub mutated_count: usize,
}

/// Final output for one scored text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub repair_score: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub breakdown: ScoreBreakdown,
}

/// One text with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub text: String,
    pub label: Label,
}

/// An in-memory labeled corpus, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub samples: Vec<CorpusSample>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }
}

/// Validation failures for analysis inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    EmptyAnalysis,
    InvalidRecord { index: usize, reason: &'static str },
    NonContiguousIndex { expected: usize, found: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::EmptyAnalysis => f.write_str("analysis requires at least one position"),
            CoreError::InvalidRecord { index, reason } => {
                write!(f, "invalid record at position {index}: {reason}")
            }
            CoreError::NonContiguousIndex { expected, found } => {
                write!(f, "records must be indexed 1..=L: expected {expected}, found {found}")
            }
        }
    }
}

impl Error for CoreError {}
