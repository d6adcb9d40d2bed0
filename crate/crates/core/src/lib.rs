//! Zero-shot detection of AI-generated text via mutation repair.
//!
//! The detector measures how far a text sits from the "ideal" sequence a
//! reference model would greedily generate along the text's own prefixes.
//! Positions where the text disagrees with the reference argmax are
//! mutations; repairing them one by one traces a trajectory of conditional
//! scores, and the mean of that trajectory, the repair score, separates
//! human-written text (much repair effort) from machine-sampled text
//! (little). Thresholding the score yields the verdict.
//!
//! Everything is derived from a single model pass per text: the analysis
//! records each position's log-probabilities under a reference and an
//! observer model, conditioned on the original prefix, so every repair
//! trajectory is pure arithmetic afterwards.
//!
//! Modules:
//! - [`types`]: sequences, per-position records, repair bookkeeping, verdicts
//! - [`providers`]: table fixtures, byte n-gram models, remote HTTP scoring
//! - [`scoring`]: log-PPL, cross-PPL and the conditional score sigma
//! - [`repair`]: ideal sequences, trajectories, repair scores
//! - [`detector`]: threshold decisions and calibration
//! - [`attacks`]: seeded token-level edit attacks, truncation
//! - [`eval`]: corpora, AUROC/F1 and the end-to-end evaluation pipeline

pub mod attacks;
pub mod detector;
pub mod eval;
pub mod providers;
pub mod repair;
pub mod scoring;
pub mod types;

#[cfg(test)]
pub(crate) mod test_util;

pub use detector::{calibrate, detect, CalibrationObjective, CalibrationResult};
pub use providers::{Provider, ProviderError, ProviderPair};
pub use repair::{build_trajectory, repair_score_closed, score_with_strategy};
pub use scoring::XpplMode;
pub use types::{
    Decision, DetectionVerdict, Label, LabeledCorpus, PositionAnalysis, PositionRecord,
    RepairStrategy, RepairTrajectory, TokenSequence,
};
