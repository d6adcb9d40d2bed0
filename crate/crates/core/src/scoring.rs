//! Perplexity-style quantities and the conditional score sigma.
//!
//! For a sequence s of length L scored by a reference model M1 and an
//! observer model M2, all conditioned on the original prefix of s:
//!
//! - log-PPL(s)      = -(1/L) sum_i log P_M1(x_i)
//! - x-PPL(s)        = a cross-model denominator, see [`XpplMode`]
//! - sigma(s~ | s)   = conditional log-PPL(s~) / x-PPL(s)
//!
//! sigma is the unit in which repair trajectories are measured: repairing a
//! mutation only changes the numerator, one term at a time, so the whole
//! family of conditional scores for a text costs a single model pass.

use serde::{Deserialize, Serialize};
use std::error::Error;
use std::fmt;

use crate::types::{PositionAnalysis, RepairState};

/// Denominators below this are considered degenerate rather than scored.
pub const DEGENERATE_X_PPL: f64 = 1e-9;

/// How the cross-perplexity denominator is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XpplMode {
    /// -(1/L) sum_i P_M1(x_i) log P_M2(x_i), using only the probabilities of
    /// the tokens actually present. Available from any provider.
    #[default]
    Pointwise,
    /// -(1/L) sum_i sum_v P_M1(v) log P_M2(v): the true per-position cross
    /// entropy, summed over the vocabulary. Needs provider support.
    FullVocab,
}

impl fmt::Display for XpplMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XpplMode::Pointwise => f.write_str("pointwise"),
            XpplMode::FullVocab => f.write_str("full_vocab"),
        }
    }
}

/// The pieces of sigma(s) for the unrepaired sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreComponents {
    pub log_ppl: f64,
    pub x_ppl: f64,
    pub sigma: f64,
    pub mode: XpplMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoringError {
    /// Full-vocabulary mode was requested but some record lacks the value.
    ModeUnsupported { position: usize },
    /// The repair set references a position that is absent or unmutated.
    InvalidRepairSet { position: usize },
    /// x-PPL too close to zero to divide by.
    DegenerateDenominator { x_ppl: f64 },
}

impl fmt::Display for ScoringError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoringError::ModeUnsupported { position } => write!(
                f,
                "full-vocabulary cross entropy missing at position {position}"
            ),
            ScoringError::InvalidRepairSet { position } => {
                write!(f, "position {position} is not a mutated position of this sequence")
            }
            ScoringError::DegenerateDenominator { x_ppl } => {
                write!(f, "cross-perplexity {x_ppl} is too small to score against")
            }
        }
    }
}

impl Error for ScoringError {}

/// Kahan compensated accumulator; keeps position-sum error independent of L.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean negative reference log-probability of the sequence tokens.
pub fn log_ppl(analysis: &PositionAnalysis) -> f64 {
    let mut acc = KahanSum::default();
    for rec in analysis.records() {
        acc.add(-rec.actual_logprob_ref);
    }
    acc.value() / analysis.len() as f64
}

/// Cross-perplexity denominator in the requested mode. Always >= 0.
pub fn cross_ppl(analysis: &PositionAnalysis, mode: XpplMode) -> Result<f64, ScoringError> {
    let mut acc = KahanSum::default();
    for rec in analysis.records() {
        match mode {
            XpplMode::Pointwise => {
                acc.add(-rec.actual_logprob_ref.exp() * rec.actual_logprob_obs);
            }
            XpplMode::FullVocab => match rec.cross_entropy_full {
                Some(x) => acc.add(x),
                None => return Err(ScoringError::ModeUnsupported { position: rec.index }),
            },
        }
    }
    Ok(acc.value() / analysis.len() as f64)
}

/// Mean negative reference log-probability after swapping the repaired
/// positions to their argmax tokens, still conditioned on original prefixes.
pub fn conditional_log_ppl(
    analysis: &PositionAnalysis,
    repaired: &RepairState,
) -> Result<f64, ScoringError> {
    validate_repair_set(analysis, repaired)?;
    let mut acc = KahanSum::default();
    for rec in analysis.records() {
        let lp = if repaired.contains(rec.index) {
            rec.argmax_logprob_ref
        } else {
            rec.actual_logprob_ref
        };
        acc.add(-lp);
    }
    Ok(acc.value() / analysis.len() as f64)
}

/// sigma(s~ | s) where s~ is s with `repaired` mutations fixed.
pub fn sigma(
    analysis: &PositionAnalysis,
    repaired: &RepairState,
    mode: XpplMode,
) -> Result<f64, ScoringError> {
    let x_ppl = cross_ppl(analysis, mode)?;
    if x_ppl <= DEGENERATE_X_PPL {
        return Err(ScoringError::DegenerateDenominator { x_ppl });
    }
    Ok(conditional_log_ppl(analysis, repaired)? / x_ppl)
}

/// log-PPL, x-PPL and sigma of the unrepaired sequence.
pub fn components(
    analysis: &PositionAnalysis,
    mode: XpplMode,
) -> Result<ScoreComponents, ScoringError> {
    let x_ppl = cross_ppl(analysis, mode)?;
    if x_ppl <= DEGENERATE_X_PPL {
        return Err(ScoringError::DegenerateDenominator { x_ppl });
    }
    let log_ppl = log_ppl(analysis);
    Ok(ScoreComponents { log_ppl, x_ppl, sigma: log_ppl / x_ppl, mode })
}

fn validate_repair_set(
    analysis: &PositionAnalysis,
    repaired: &RepairState,
) -> Result<(), ScoringError> {
    for pos in repaired.positions() {
        let mutated = pos >= 1
            && pos <= analysis.len()
            && analysis.records()[pos - 1].is_mutated();
        if !mutated {
            return Err(ScoringError::InvalidRepairSet { position: pos });
        }
    }
    Ok(())
}
