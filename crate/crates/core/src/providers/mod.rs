//! Sources of per-position log-probabilities.
//!
//! A provider wraps a (reference, observer) model pair that shares one
//! tokenizer and answers a single question: for each position of a token
//! sequence, what did each model assign to the token that is there, and
//! which token would the reference have picked instead. Implementations:
//!
//! - [`table::TableProvider`]: fixed per-position distributions, for tests
//! - [`ngram::NgramPairProvider`]: byte-level add-alpha n-gram models
//! - [`remote::RemoteProvider`]: an HTTP service that does the model work
//! - [`CountingProvider`]: transparent wrapper that counts analysis calls

use std::error::Error;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::types::{PositionAnalysis, TokenId, TokenSequence};

pub mod ngram;
pub mod remote;
pub mod table;
pub mod tokenizer;

/// Default cap on scored positions per text.
pub const DEFAULT_MAX_TOKENS: usize = 1024;

/// Static facts about a provider's model pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderPair {
    pub reference_id: String,
    pub observer_id: String,
    /// Shared vocabulary size; 0 when the provider does not expose it.
    pub vocab_size: u32,
    /// Whether per-position full-vocabulary cross entropy can be supplied.
    pub supports_full_cross_entropy: bool,
    /// Longest sequence the provider will score.
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderError {
    EmptyInput,
    VocabMismatch { token: TokenId, vocab_size: u32 },
    CorpusTooSmall { tokens: usize, required: usize },
    InvalidParameter(String),
    /// The operation is not offered by this provider kind.
    Unsupported(String),
    /// The remote endpoint kept failing after every allowed attempt.
    Unavailable { attempts: u32, message: String },
    /// The remote endpoint answered with something malformed.
    Protocol(String),
    /// Model persistence failed; the message names the file.
    Persist(String),
}

impl fmt::Display for ProviderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderError::EmptyInput => f.write_str("input text has no tokens"),
            ProviderError::VocabMismatch { token, vocab_size } => {
                write!(f, "token {token} is outside the vocabulary of size {vocab_size}")
            }
            ProviderError::CorpusTooSmall { tokens, required } => {
                write!(f, "training corpus has {tokens} tokens, need at least {required}")
            }
            ProviderError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            ProviderError::Unsupported(msg) => write!(f, "unsupported operation: {msg}"),
            ProviderError::Unavailable { attempts, message } => {
                write!(f, "provider unavailable after {attempts} attempts: {message}")
            }
            ProviderError::Protocol(msg) => write!(f, "provider protocol violation: {msg}"),
            ProviderError::Persist(msg) => write!(f, "model persistence failed: {msg}"),
        }
    }
}

impl Error for ProviderError {}

/// A reference/observer model pair behind a shared tokenizer.
///
/// `analyze` must condition every record on the original prefix of the
/// input, so one call yields everything repair scoring needs.
pub trait Provider: Send + Sync {
    fn pair(&self) -> &ProviderPair;

    /// False for providers that only accept raw text (no token round-trip).
    fn supports_local_tokens(&self) -> bool {
        true
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ProviderError>;

    fn detokenize(&self, tokens: &TokenSequence) -> Result<String, ProviderError>;

    fn analyze(
        &self,
        tokens: &TokenSequence,
        include_full_xent: bool,
    ) -> Result<PositionAnalysis, ProviderError>;

    /// Tokenize-and-analyze in one step. Remote providers override this with
    /// a single round-trip.
    fn analyze_text(
        &self,
        text: &str,
        include_full_xent: bool,
    ) -> Result<(TokenSequence, PositionAnalysis), ProviderError> {
        let tokens = self.tokenize(text)?;
        let analysis = self.analyze(&tokens, include_full_xent)?;
        Ok((tokens, analysis))
    }
}

/// Wraps a provider and counts how many model analyses it performs. Used to
/// verify that scoring a text costs exactly one analysis pass.
pub struct CountingProvider<P> {
    inner: P,
    analyze_calls: AtomicUsize,
    tokenize_calls: AtomicUsize,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            analyze_calls: AtomicUsize::new(0),
            tokenize_calls: AtomicUsize::new(0),
        }
    }

    /// Number of model analysis passes so far (token or text entry point).
    pub fn analyze_calls(&self) -> usize {
        self.analyze_calls.load(Ordering::SeqCst)
    }

    pub fn tokenize_calls(&self) -> usize {
        self.tokenize_calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.analyze_calls.store(0, Ordering::SeqCst);
        self.tokenize_calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn pair(&self) -> &ProviderPair {
        self.inner.pair()
    }

    fn supports_local_tokens(&self) -> bool {
        self.inner.supports_local_tokens()
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ProviderError> {
        self.tokenize_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.tokenize(text)
    }

    fn detokenize(&self, tokens: &TokenSequence) -> Result<String, ProviderError> {
        self.inner.detokenize(tokens)
    }

    fn analyze(
        &self,
        tokens: &TokenSequence,
        include_full_xent: bool,
    ) -> Result<PositionAnalysis, ProviderError> {
        self.analyze_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.analyze(tokens, include_full_xent)
    }

    fn analyze_text(
        &self,
        text: &str,
        include_full_xent: bool,
    ) -> Result<(TokenSequence, PositionAnalysis), ProviderError> {
        self.analyze_calls.fetch_add(1, Ordering::SeqCst);
        self.inner.analyze_text(text, include_full_xent)
    }
}
