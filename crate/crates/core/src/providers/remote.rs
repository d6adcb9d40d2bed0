//! HTTP provider: ships the text to a scoring service and adapts its reply.
//!
//! Protocol: `POST {base}/v1/analyze` with body
//! `{"text": "...", "include_full_xent": bool}`; the service answers
//! `{"tokens": [...], "positions": [{"i", "tok", "lp_ref", "lp_obs",
//! "argmax_tok", "argmax_lp_ref", "xent"?}, ...]}` with positions conditioned
//! on the original prefix, `i` counted from 1.
//!
//! The remote side owns the tokenizer, so only [`Provider::analyze_text`] is
//! available; token-level entry points report [`ProviderError::Unsupported`].
//! Transport failures and 5xx responses are retried; anything else fails
//! fast. A condvar gate bounds concurrent in-flight requests.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::providers::{Provider, ProviderError, ProviderPair, DEFAULT_MAX_TOKENS};
use crate::types::{PositionAnalysis, PositionRecord, TokenId, TokenSequence};

/// Environment variable consulted for the endpoint base URL.
pub const ENV_PROVIDER_URL: &str = "DNA_DETECT_PROVIDER_URL";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(30_000);
/// Extra attempts after the first failed one.
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub timeout: Duration,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    /// Reads the base URL from `DNA_DETECT_PROVIDER_URL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        match std::env::var(ENV_PROVIDER_URL) {
            Ok(url) if !url.trim().is_empty() => Ok(RemoteConfig::new(url)),
            _ => Err(ProviderError::InvalidParameter(format!(
                "no provider URL: set {ENV_PROVIDER_URL} or pass --provider-url"
            ))),
        }
    }
}

#[derive(Serialize)]
struct AnalyzeRequest<'a> {
    text: &'a str,
    include_full_xent: bool,
}

#[derive(Deserialize)]
struct AnalyzeResponse {
    tokens: Vec<TokenId>,
    positions: Vec<WirePosition>,
}

#[derive(Deserialize)]
struct WirePosition {
    i: usize,
    tok: TokenId,
    lp_ref: f64,
    lp_obs: f64,
    argmax_tok: TokenId,
    argmax_lp_ref: f64,
    #[serde(default)]
    xent: Option<f64>,
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn new(cap: usize) -> Self {
        Gate { in_flight: Mutex::new(0), freed: Condvar::new(), cap: cap.max(1) }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut active = self.in_flight.lock().unwrap();
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.in_flight.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}

enum Attempt {
    Done(AnalyzeResponse),
    Retry(String),
}

pub struct RemoteProvider {
    endpoint: String,
    client: reqwest::blocking::Client,
    config: RemoteConfig,
    gate: Gate,
    pair: ProviderPair,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        if config.url.trim().is_empty() {
            return Err(ProviderError::InvalidParameter("provider URL is empty".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::InvalidParameter(format!("http client: {e}")))?;
        let endpoint = format!("{}/v1/analyze", config.url.trim_end_matches('/'));
        let pair = ProviderPair {
            reference_id: format!("remote:{}#reference", config.url),
            observer_id: format!("remote:{}#observer", config.url),
            vocab_size: 0,
            supports_full_cross_entropy: true,
            max_tokens: DEFAULT_MAX_TOKENS,
        };
        let gate = Gate::new(config.max_in_flight);
        Ok(RemoteProvider { endpoint, client, config, gate, pair })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, request: &AnalyzeRequest<'_>) -> Result<Attempt, ProviderError> {
        let response = match self.client.post(&self.endpoint).json(request).send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = response.status();
        if status.is_server_error() {
            return Ok(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Protocol(format!("server rejected request: {status}")));
        }
        match response.json::<AnalyzeResponse>() {
            Ok(body) => Ok(Attempt::Done(body)),
            Err(e) => Err(ProviderError::Protocol(format!("malformed response body: {e}"))),
        }
    }

    fn to_analysis(
        &self,
        text: &str,
        body: AnalyzeResponse,
    ) -> Result<(TokenSequence, PositionAnalysis), ProviderError> {
        if body.positions.is_empty() {
            return Err(ProviderError::Protocol("response carries no positions".into()));
        }
        let records = body
            .positions
            .into_iter()
            .map(|p| PositionRecord {
                index: p.i,
                actual_token: p.tok,
                actual_logprob_ref: p.lp_ref,
                actual_logprob_obs: p.lp_obs,
                argmax_token: p.argmax_tok,
                argmax_logprob_ref: p.argmax_lp_ref,
                cross_entropy_full: p.xent,
            })
            .collect();
        let analysis = PositionAnalysis::new(records)
            .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        Ok((TokenSequence::with_text(body.tokens, text), analysis))
    }
}

impl Provider for RemoteProvider {
    fn pair(&self) -> &ProviderPair {
        &self.pair
    }

    fn supports_local_tokens(&self) -> bool {
        false
    }

    fn tokenize(&self, _text: &str) -> Result<TokenSequence, ProviderError> {
        Err(ProviderError::Unsupported("remote provider has no local tokenizer".into()))
    }

    fn detokenize(&self, _tokens: &TokenSequence) -> Result<String, ProviderError> {
        Err(ProviderError::Unsupported("remote provider has no local tokenizer".into()))
    }

    fn analyze(
        &self,
        _tokens: &TokenSequence,
        _include_full_xent: bool,
    ) -> Result<PositionAnalysis, ProviderError> {
        Err(ProviderError::Unsupported(
            "remote provider only scores raw text; use analyze_text".into(),
        ))
    }

    fn analyze_text(
        &self,
        text: &str,
        include_full_xent: bool,
    ) -> Result<(TokenSequence, PositionAnalysis), ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let _permit = self.gate.acquire();
        let request = AnalyzeRequest { text, include_full_xent };
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.attempt(&request)? {
                Attempt::Done(body) => return self.to_analysis(text, body),
                Attempt::Retry(message) => last = message,
            }
        }
        Err(ProviderError::Unavailable { attempts, message: last })
    }
}
