//! Seeded token-level edit attacks and truncation.
//!
//! An attack edits exactly ceil(rate * L) positions of an L-token sequence:
//! substitutions draw a different token uniformly, insertions add uniform
//! tokens at distinct gaps, deletions drop distinct positions. Everything is
//! driven by a ChaCha stream, so a (spec, input) pair always yields the same
//! output, independent of scheduling.

use std::error::Error;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::types::{TokenId, TokenSequence};

pub const DEFAULT_ATTACK_RATE: f64 = 0.01;
const MAX_ATTACK_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Substitution,
    Insertion,
    Deletion,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackKind::Substitution => f.write_str("substitution"),
            AttackKind::Insertion => f.write_str("insertion"),
            AttackKind::Deletion => f.write_str("deletion"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Fraction of positions to edit, in (0, 0.5].
    pub rate: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, rate: f64, seed: u64) -> Result<Self, AttackError> {
        if !(rate.is_finite() && rate > 0.0 && rate <= MAX_ATTACK_RATE) {
            return Err(AttackError::InvalidRate(rate));
        }
        Ok(AttackSpec { kind, rate, seed })
    }

    /// Same attack with a per-sample seed, so corpus runs stay reproducible
    /// without repeating edit positions across samples.
    pub fn for_sample(&self, sample_index: usize) -> AttackSpec {
        AttackSpec { seed: derive_seed(self.seed, sample_index as u64), ..*self }
    }

    fn edits(&self, len: usize) -> usize {
        (self.rate * len as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackError {
    InvalidRate(f64),
    EmptyInput,
    /// Deletion would consume the whole sequence.
    EmptyAfterDeletion { length: usize, edits: usize },
    /// Substitution needs at least two tokens to pick a different one.
    VocabTooSmall(u32),
}

impl fmt::Display for AttackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackError::InvalidRate(rate) => {
                write!(f, "attack rate must be in (0, {MAX_ATTACK_RATE}], got {rate}")
            }
            AttackError::EmptyInput => f.write_str("cannot attack an empty sequence"),
            AttackError::EmptyAfterDeletion { length, edits } => {
                write!(f, "deleting {edits} of {length} tokens would leave nothing to score")
            }
            AttackError::VocabTooSmall(v) => {
                write!(f, "substitution needs a vocabulary of at least 2, got {v}")
            }
        }
    }
}

impl Error for AttackError {}

/// splitmix64; decorrelates per-sample seeds from a base seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

/// Applies `spec` to `tokens`. The result carries no text, since the edited
/// ids no longer correspond to the original string.
pub fn apply_edit_attack(
    tokens: &TokenSequence,
    spec: &AttackSpec,
    vocab_size: u32,
) -> Result<TokenSequence, AttackError> {
    if !(spec.rate.is_finite() && spec.rate > 0.0 && spec.rate <= MAX_ATTACK_RATE) {
        return Err(AttackError::InvalidRate(spec.rate));
    }
    let len = tokens.len();
    if len == 0 {
        return Err(AttackError::EmptyInput);
    }
    let edits = spec.edits(len);
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let ids = &tokens.token_ids;

    let out = match spec.kind {
        AttackKind::Substitution => {
            if vocab_size < 2 {
                return Err(AttackError::VocabTooSmall(vocab_size));
            }
            let mut positions = rand::seq::index::sample(&mut rng, len, edits).into_vec();
            positions.sort_unstable();
            let mut out = ids.clone();
            for pos in positions {
                let old = out[pos];
                // Uniform over the vocabulary minus the current token.
                let draw = rng.gen_range(0..vocab_size - 1);
                out[pos] = draw + TokenId::from(draw >= old);
            }
            out
        }
        AttackKind::Insertion => {
            let mut gaps = rand::seq::index::sample(&mut rng, len + 1, edits).into_vec();
            gaps.sort_unstable();
            let fresh: Vec<TokenId> =
                (0..edits).map(|_| rng.gen_range(0..vocab_size)).collect();
            let mut out = Vec::with_capacity(len + edits);
            let mut next_gap = 0;
            for (idx, &tok) in ids.iter().enumerate() {
                while next_gap < gaps.len() && gaps[next_gap] == idx {
                    out.push(fresh[next_gap]);
                    next_gap += 1;
                }
                out.push(tok);
            }
            out.extend_from_slice(&fresh[next_gap..]);
            out
        }
        AttackKind::Deletion => {
            if edits >= len {
                return Err(AttackError::EmptyAfterDeletion { length: len, edits });
            }
            let mut positions = rand::seq::index::sample(&mut rng, len, edits).into_vec();
            positions.sort_unstable();
            let mut out = Vec::with_capacity(len - edits);
            let mut next = 0;
            for (idx, &tok) in ids.iter().enumerate() {
                if next < positions.len() && positions[next] == idx {
                    next += 1;
                } else {
                    out.push(tok);
                }
            }
            out
        }
    };
    Ok(TokenSequence::new(out))
}

/// First `target` tokens. Identity (text preserved) when nothing is cut.
pub fn truncate(tokens: &TokenSequence, target: usize) -> TokenSequence {
    assert!(target >= 1, "truncation target must be >= 1");
    if target >= tokens.len() {
        return tokens.clone();
    }
    TokenSequence::new(tokens.token_ids[..target].to_vec())
}
