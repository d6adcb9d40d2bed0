//! Threshold decision and threshold calibration.
//!
//! Lower repair scores mean the text was already close to its ideal
//! sequence, so the decision rule is: AI-generated iff the repair score is
//! less than or equal to the threshold. Calibration sweeps candidate
//! thresholds placed between adjacent distinct scores (plus one sentinel on
//! each side) and picks the best one for the requested objective.

use std::error::Error;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::types::{Decision, DetectionVerdict, Label, ScoreBreakdown};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationObjective {
    /// Maximize F1 of the AI class; score ties broken toward the threshold
    /// farthest from any AI score, then toward the smallest threshold.
    MaxF1,
    /// Largest threshold whose false-positive rate on human samples stays at
    /// or below the quantile, which must lie in [0, 1).
    TargetFpr(f64),
}

impl fmt::Display for CalibrationObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationObjective::MaxF1 => f.write_str("max_f1"),
            CalibrationObjective::TargetFpr(q) => write!(f, "target_fpr={q}"),
        }
    }
}

impl FromStr for CalibrationObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "max_f1" {
            return Ok(CalibrationObjective::MaxF1);
        }
        if let Some(q) = s.strip_prefix("target_fpr=") {
            let q: f64 = q.parse().map_err(|_| format!("bad quantile in {s:?}"))?;
            return Ok(CalibrationObjective::TargetFpr(q));
        }
        Err(format!("unknown objective {s:?}; expected max_f1 or target_fpr=<q>"))
    }
}

impl Serialize for CalibrationObjective {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CalibrationObjective {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub objective: CalibrationObjective,
    /// Objective value at the chosen threshold (F1 or achieved FPR).
    pub achieved: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorError {
    NonFiniteScore,
    EmptyInput,
    /// Calibration needs at least one sample of each class.
    SingleClass,
    InvalidObjective(String),
}

impl fmt::Display for DetectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorError::NonFiniteScore => f.write_str("scores and thresholds must be finite"),
            DetectorError::EmptyInput => f.write_str("no samples to calibrate on"),
            DetectorError::SingleClass => {
                f.write_str("calibration needs both human and ai samples")
            }
            DetectorError::InvalidObjective(msg) => write!(f, "invalid objective: {msg}"),
        }
    }
}

impl Error for DetectorError {}

/// AI-generated iff `repair_score <= threshold`.
pub fn detect(repair_score: f64, threshold: f64) -> Result<Decision, DetectorError> {
    if !repair_score.is_finite() || !threshold.is_finite() {
        return Err(DetectorError::NonFiniteScore);
    }
    Ok(if repair_score > threshold { Decision::HumanWritten } else { Decision::AiGenerated })
}

/// Packages a decision with the numbers that produced it.
pub fn verdict(
    repair_score: f64,
    threshold: f64,
    breakdown: ScoreBreakdown,
) -> Result<DetectionVerdict, DetectorError> {
    Ok(DetectionVerdict {
        repair_score,
        threshold,
        decision: detect(repair_score, threshold)?,
        breakdown,
    })
}

/// Midpoints between adjacent distinct scores, plus one candidate strictly
/// below and one strictly above everything. Input scores must be finite.
pub(crate) fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] - 1.0);
    for pair in sorted.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(sorted[sorted.len() - 1] + 1.0);
    candidates
}

/// F1 of the AI class under the rule `score <= threshold` predicts AI.
pub(crate) fn f1_at(samples: &[(f64, Label)], threshold: f64) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for &(score, label) in samples {
        let predicted_ai = score <= threshold;
        match (label, predicted_ai) {
            (Label::Ai, true) => tp += 1,
            (Label::Ai, false) => fn_ += 1,
            (Label::Human, true) => fp += 1,
            (Label::Human, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return 0.0;
    }
    (2 * tp) as f64 / denom as f64
}

/// Best-F1 threshold scan shared by calibration and evaluation, returning
/// (threshold, f1). Assumes finite scores and both classes present.
pub(crate) fn max_f1_scan(samples: &[(f64, Label)]) -> (f64, f64) {
    let scores: Vec<f64> = samples.iter().map(|&(s, _)| s).collect();
    let ai_scores: Vec<f64> = samples
        .iter()
        .filter(|&&(_, l)| l == Label::Ai)
        .map(|&(s, _)| s)
        .collect();
    let margin = |t: f64| {
        ai_scores
            .iter()
            .map(|&s| (t - s).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let mut best_threshold = f64::NAN;
    let mut best_f1 = -1.0;
    let mut best_margin = -1.0;
    for candidate in threshold_candidates(&scores) {
        let f1 = f1_at(samples, candidate);
        let m = margin(candidate);
        if f1 > best_f1 || (f1 == best_f1 && m > best_margin) {
            best_threshold = candidate;
            best_f1 = f1;
            best_margin = m;
        }
    }
    (best_threshold, best_f1)
}

/// Picks a threshold from labeled (repair_score, label) pairs.
pub fn calibrate(
    samples: &[(f64, Label)],
    objective: CalibrationObjective,
) -> Result<CalibrationResult, DetectorError> {
    if samples.is_empty() {
        return Err(DetectorError::EmptyInput);
    }
    if samples.iter().any(|&(s, _)| !s.is_finite()) {
        return Err(DetectorError::NonFiniteScore);
    }
    let n_human = samples.iter().filter(|&&(_, l)| l == Label::Human).count();
    let n_ai = samples.len() - n_human;
    if n_human == 0 || n_ai == 0 {
        return Err(DetectorError::SingleClass);
    }
    let (threshold, achieved) = match objective {
        CalibrationObjective::MaxF1 => max_f1_scan(samples),
        CalibrationObjective::TargetFpr(q) => {
            if !(q.is_finite() && (0.0..1.0).contains(&q)) {
                return Err(DetectorError::InvalidObjective(format!(
                    "target FPR must be in [0, 1), got {q}"
                )));
            }
            let scores: Vec<f64> = samples.iter().map(|&(s, _)| s).collect();
            let fpr = |t: f64| {
                let fp = samples
                    .iter()
                    .filter(|&&(s, l)| l == Label::Human && s <= t)
                    .count();
                fp as f64 / n_human as f64
            };
            // FPR is nondecreasing in the threshold, so the last candidate
            // under the target is the largest one.
            let mut chosen = (f64::NAN, f64::NAN);
            for candidate in threshold_candidates(&scores) {
                let rate = fpr(candidate);
                if rate <= q {
                    chosen = (candidate, rate);
                }
            }
            chosen
        }
    };
    Ok(CalibrationResult { threshold, objective, achieved, n_samples: samples.len() })
}
