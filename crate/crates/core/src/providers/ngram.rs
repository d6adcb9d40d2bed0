//! Byte-level n-gram language models with add-alpha smoothing, plus a
//! provider that pairs two of them (reference and observer) over the shared
//! byte tokenizer.
//!
//! A model of order k conditions each byte on the k previous symbols, with
//! positions before the start padded by a begin-of-sequence marker:
//!
//!   P(v | ctx) = (count(ctx, v) + alpha) / (count(ctx) + alpha * 256)
//!
//! Contexts the model never saw fall back to the uniform distribution, so
//! every probability is strictly positive and every log-probability finite.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::providers::tokenizer::{ByteTokenizer, BYTE_VOCAB_SIZE};
use crate::providers::{Provider, ProviderError, ProviderPair, DEFAULT_MAX_TOKENS};
use crate::types::{PositionAnalysis, PositionRecord, TokenId, TokenSequence};

/// Begin-of-sequence marker. Only ever appears inside contexts; it is not
/// part of the predicted vocabulary.
pub const BOS_TOKEN: TokenId = 256;

/// Byte contexts are packed into a u64, which caps the usable order.
pub const MAX_ORDER: usize = 7;

/// Minimum training tokens: ten per vocabulary entry.
const MIN_CORPUS_TOKENS: usize = 10 * BYTE_VOCAB_SIZE as usize;

/// Context symbols live in 0..=256, so base 258 keeps the packing unambiguous.
const KEY_BASE: u64 = 258;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    continuations: BTreeMap<TokenId, u64>,
}

/// One smoothed n-gram model over the byte vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    contexts: HashMap<u64, ContextCounts>,
}

/// Smoothed distribution for one context; empty context means uniform.
#[derive(Clone, Copy)]
struct Row<'a> {
    counts: Option<&'a ContextCounts>,
    alpha: f64,
}

impl Row<'_> {
    fn prob(&self, token: TokenId) -> f64 {
        let (count, total) = match self.counts {
            Some(c) => (c.continuations.get(&token).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (count as f64 + self.alpha) / (total as f64 + self.alpha * f64::from(BYTE_VOCAB_SIZE))
    }

    /// Most probable continuation; count ties go to the lowest token id.
    fn argmax(&self) -> (TokenId, f64) {
        let best = self.counts.and_then(|c| {
            let mut best: Option<(TokenId, u64)> = None;
            for (&tok, &count) in &c.continuations {
                if best.is_none_or(|(_, b)| count > b) {
                    best = Some((tok, count));
                }
            }
            best.map(|(tok, _)| tok)
        });
        let token = best.unwrap_or(0);
        (token, self.prob(token))
    }

    /// -sum_v P_self(v) log P_other(v) over the byte vocabulary.
    fn cross_entropy(&self, other: &Row<'_>) -> f64 {
        let mut sum = 0.0;
        for v in 0..BYTE_VOCAB_SIZE {
            sum -= self.prob(v) * other.prob(v).ln();
        }
        sum
    }
}

fn encode_window(window: &[TokenId]) -> u64 {
    window.iter().fold(0, |key, &sym| key * KEY_BASE + u64::from(sym))
}

fn decode_window(mut key: u64, order: usize) -> Vec<TokenId> {
    let mut window = vec![0; order];
    for slot in window.iter_mut().rev() {
        *slot = (key % KEY_BASE) as TokenId;
        key /= KEY_BASE;
    }
    window
}

/// Rolling context key over a fixed-size window.
#[derive(Clone, Copy)]
struct WindowKey {
    key: u64,
    modulus: u64,
}

impl WindowKey {
    fn start(order: usize) -> Self {
        WindowKey {
            key: encode_window(&vec![BOS_TOKEN; order]),
            modulus: KEY_BASE.pow(order as u32 - 1),
        }
    }

    fn push(&mut self, token: TokenId) {
        self.key = (self.key % self.modulus) * KEY_BASE + u64::from(token);
    }
}

impl NgramModel {
    /// Streams a corpus once and counts every (context, continuation) pair.
    pub fn train<R: Read>(corpus: R, order: usize, alpha: f64) -> Result<Self, ProviderError> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(ProviderError::InvalidParameter(format!(
                "order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ProviderError::InvalidParameter(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        let mut contexts: HashMap<u64, ContextCounts> = HashMap::new();
        let mut window = WindowKey::start(order);
        let mut seen: usize = 0;
        let mut reader = corpus;
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = reader
                .read(&mut buf)
                .map_err(|e| ProviderError::Persist(format!("reading training corpus: {e}")))?;
            if n == 0 {
                break;
            }
            for &byte in &buf[..n] {
                let token = TokenId::from(byte);
                let entry = contexts.entry(window.key).or_default();
                entry.total += 1;
                *entry.continuations.entry(token).or_insert(0) += 1;
                window.push(token);
                seen += 1;
            }
        }
        if seen < MIN_CORPUS_TOKENS {
            return Err(ProviderError::CorpusTooSmall { tokens: seen, required: MIN_CORPUS_TOKENS });
        }
        Ok(NgramModel { order, alpha, contexts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    fn row(&self, key: u64) -> Row<'_> {
        Row { counts: self.contexts.get(&key), alpha: self.alpha }
    }

    /// Generates `length` tokens. Temperature 0 is the greedy argmax walk;
    /// higher temperatures draw from the annealed distribution.
    pub fn sample(
        &self,
        length: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<TokenSequence, ProviderError> {
        if length == 0 {
            return Err(ProviderError::InvalidParameter("sample length must be >= 1".into()));
        }
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(ProviderError::InvalidParameter(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut window = WindowKey::start(self.order);
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let row = self.row(window.key);
            let token = if temperature == 0.0 {
                row.argmax().0
            } else {
                let inv = 1.0 / temperature;
                let weights: Vec<f64> =
                    (0..BYTE_VOCAB_SIZE).map(|v| row.prob(v).powf(inv)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = BYTE_VOCAB_SIZE - 1;
                for (v, &w) in weights.iter().enumerate() {
                    if u < w {
                        pick = v as TokenId;
                        break;
                    }
                    u -= w;
                }
                pick
            };
            out.push(token);
            window.push(token);
        }
        Ok(TokenSequence::new(out))
    }

    /// Serializes the model: header, then contexts in key order with their
    /// continuation counts in token order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"DNAG")?;
        w.write_all(&1u16.to_le_bytes())?;
        w.write_all(&(self.order as u16).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&BYTE_VOCAB_SIZE.to_le_bytes())?;
        w.write_all(&(self.contexts.len() as u64).to_le_bytes())?;
        let mut keys: Vec<u64> = self.contexts.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            for sym in decode_window(key, self.order) {
                w.write_all(&sym.to_le_bytes())?;
            }
            let counts = &self.contexts[&key];
            w.write_all(&counts.total.to_le_bytes())?;
            w.write_all(&(counts.continuations.len() as u32).to_le_bytes())?;
            for (&tok, &count) in &counts.continuations {
                w.write_all(&tok.to_le_bytes())?;
                w.write_all(&count.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ProviderError> {
        let bad = |msg: &str| ProviderError::Persist(format!("model data: {msg}"));
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != b"DNAG" {
            return Err(bad("bad magic"));
        }
        let version = read_u16(r)?;
        if version != 1 {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let order = read_u16(r)? as usize;
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(bad(&format!("order {order} out of range")));
        }
        let alpha = f64::from_le_bytes(read_array(r)?);
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(bad("alpha out of range"));
        }
        let vocab = read_u32(r)?;
        if vocab != BYTE_VOCAB_SIZE {
            return Err(bad(&format!("vocabulary {vocab} not supported")));
        }
        let n_contexts = read_u64(r)?;
        let mut contexts = HashMap::with_capacity(n_contexts as usize);
        for _ in 0..n_contexts {
            let mut window = vec![0 as TokenId; order];
            for slot in window.iter_mut() {
                let sym = read_u32(r)?;
                if sym > BOS_TOKEN {
                    return Err(bad(&format!("context symbol {sym} out of range")));
                }
                *slot = sym;
            }
            let total = read_u64(r)?;
            let n_cont = read_u32(r)?;
            let mut continuations = BTreeMap::new();
            let mut check: u64 = 0;
            for _ in 0..n_cont {
                let tok = read_u32(r)?;
                if tok >= BYTE_VOCAB_SIZE {
                    return Err(bad(&format!("continuation token {tok} out of range")));
                }
                let count = read_u64(r)?;
                check += count;
                if continuations.insert(tok, count).is_some() {
                    return Err(bad("duplicate continuation token"));
                }
            }
            if check != total {
                return Err(bad("context total does not match continuation counts"));
            }
            if contexts
                .insert(encode_window(&window), ContextCounts { total, continuations })
                .is_some()
            {
                return Err(bad("duplicate context"));
            }
        }
        Ok(NgramModel { order, alpha, contexts })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ProviderError> {
    r.read_exact(buf)
        .map_err(|e| ProviderError::Persist(format!("model data: {e}")))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], ProviderError> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, ProviderError> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ProviderError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ProviderError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Reference/observer n-gram pair over the byte tokenizer.
#[derive(Debug, Clone)]
pub struct NgramPairProvider {
    reference: NgramModel,
    observer: NgramModel,
    pair: ProviderPair,
}

impl NgramPairProvider {
    pub fn new(reference: NgramModel, observer: NgramModel) -> Self {
        let pair = ProviderPair {
            reference_id: format!(
                "ngram:order={}:alpha={}",
                reference.order, reference.alpha
            ),
            observer_id: format!("ngram:order={}:alpha={}", observer.order, observer.alpha),
            vocab_size: BYTE_VOCAB_SIZE,
            supports_full_cross_entropy: true,
            max_tokens: DEFAULT_MAX_TOKENS,
        };
        NgramPairProvider { reference, observer, pair }
    }

    pub fn reference(&self) -> &NgramModel {
        &self.reference
    }

    pub fn observer(&self) -> &NgramModel {
        &self.observer
    }

    /// Writes both models back to back into one file.
    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let fail = |e: std::io::Error| {
            ProviderError::Persist(format!("{}: {e}", path.display()))
        };
        let mut w = BufWriter::new(File::create(path).map_err(fail)?);
        self.reference.write_to(&mut w).map_err(fail)?;
        self.observer.write_to(&mut w).map_err(fail)?;
        w.flush().map_err(fail)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let context = |e: ProviderError| match e {
            ProviderError::Persist(msg) => {
                ProviderError::Persist(format!("{}: {msg}", path.display()))
            }
            other => other,
        };
        let file = File::open(path)
            .map_err(|e| ProviderError::Persist(format!("{}: {e}", path.display())))?;
        let mut r = BufReader::new(file);
        let reference = NgramModel::read_from(&mut r).map_err(context)?;
        let observer = NgramModel::read_from(&mut r).map_err(context)?;
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => Ok(NgramPairProvider::new(reference, observer)),
            Ok(_) => Err(ProviderError::Persist(format!(
                "{}: trailing data after both models",
                path.display()
            ))),
            Err(e) => Err(ProviderError::Persist(format!("{}: {e}", path.display()))),
        }
    }
}

impl Provider for NgramPairProvider {
    fn pair(&self) -> &ProviderPair {
        &self.pair
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ProviderError> {
        ByteTokenizer::tokenize(text)
    }

    fn detokenize(&self, tokens: &TokenSequence) -> Result<String, ProviderError> {
        ByteTokenizer::detokenize(tokens)
    }

    fn analyze(
        &self,
        tokens: &TokenSequence,
        include_full_xent: bool,
    ) -> Result<PositionAnalysis, ProviderError> {
        if tokens.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut ref_window = WindowKey::start(self.reference.order);
        let mut obs_window = WindowKey::start(self.observer.order);
        let mut records = Vec::with_capacity(tokens.len());
        for (i, &token) in tokens.token_ids.iter().enumerate() {
            if token >= BYTE_VOCAB_SIZE {
                return Err(ProviderError::VocabMismatch {
                    token,
                    vocab_size: BYTE_VOCAB_SIZE,
                });
            }
            let ref_row = self.reference.row(ref_window.key);
            let obs_row = self.observer.row(obs_window.key);
            let (argmax_token, argmax_p) = ref_row.argmax();
            records.push(PositionRecord {
                index: i + 1,
                actual_token: token,
                actual_logprob_ref: ref_row.prob(token).ln(),
                actual_logprob_obs: obs_row.prob(token).ln(),
                argmax_token,
                argmax_logprob_ref: argmax_p.ln(),
                cross_entropy_full: include_full_xent
                    .then(|| ref_row.cross_entropy(&obs_row)),
            });
            ref_window.push(token);
            obs_window.push(token);
        }
        PositionAnalysis::new(records).map_err(|e| ProviderError::Protocol(e.to_string()))
    }
}
