//! Flag/env/file resolution shared by every subcommand that needs a model.
//!
//! Precedence is flags > environment > config file. The config file is JSON
//! whose keys mirror the flag names (kebab-case, e.g. `"provider-url"`).

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use dna_detect_core::attacks::AttackError;
use dna_detect_core::detector::DetectorError;
use dna_detect_core::eval::EvalError;
use dna_detect_core::providers::ngram::NgramPairProvider;
use dna_detect_core::providers::remote::{
    RemoteConfig, RemoteProvider, DEFAULT_MAX_IN_FLIGHT, DEFAULT_RETRIES, DEFAULT_TIMEOUT,
    ENV_PROVIDER_URL,
};
use dna_detect_core::providers::{Provider, ProviderError};
use dna_detect_core::repair::RepairError;
use dna_detect_core::scoring::XpplMode;
use dna_detect_core::types::RepairStrategy;

pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

/// Terminal error: `message` goes to stderr, `code` becomes the exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    pub fn provider(message: impl Into<String>) -> Self {
        CliError { code: EXIT_PROVIDER, message: message.into() }
    }
}

impl From<ProviderError> for CliError {
    fn from(err: ProviderError) -> Self {
        match err {
            ProviderError::Unavailable { .. }
            | ProviderError::Protocol(_)
            | ProviderError::Persist(_) => CliError::provider(err.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        if err.is_provider_failure() {
            CliError::provider(err.to_string())
        } else {
            CliError::data(err.to_string())
        }
    }
}

impl From<RepairError> for CliError {
    fn from(err: RepairError) -> Self {
        CliError::data(err.to_string())
    }
}

impl From<DetectorError> for CliError {
    fn from(err: DetectorError) -> Self {
        CliError::data(err.to_string())
    }
}

impl From<AttackError> for CliError {
    fn from(err: AttackError) -> Self {
        CliError::data(err.to_string())
    }
}

/// JSON config file; every key is optional and mirrors a flag.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub model: Option<PathBuf>,
    pub provider_url: Option<String>,
    pub provider_timeout_ms: Option<u64>,
    pub provider_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub xppl_mode: Option<String>,
    pub strategy: Option<String>,
    pub seed: Option<u64>,
    pub truncate: Option<usize>,
    pub workers: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::usage(format!("bad config file {}: {e}", path.display())))
}

/// Model/provider selection, shared by all scoring commands.
#[derive(Args, Debug, Default)]
pub struct ProviderArgs {
    /// JSON config file; flags and env override its values
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Provider backend: ngram | remote (inferred from --model/--provider-url)
    #[arg(long, value_name = "KIND")]
    pub backend: Option<String>,

    /// Path to a trained n-gram pair file (see `dna-detect train-ngram`)
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,

    /// Base URL of a remote analysis endpoint (env: DNA_DETECT_PROVIDER_URL)
    #[arg(long, value_name = "URL")]
    pub provider_url: Option<String>,

    /// Per-request timeout for the remote backend, in milliseconds
    #[arg(long, value_name = "MS")]
    pub provider_timeout_ms: Option<u64>,

    /// Retries after a failed remote request
    #[arg(long, value_name = "N")]
    pub provider_retries: Option<u32>,

    /// Cap on concurrent remote requests
    #[arg(long, value_name = "N")]
    pub max_in_flight: Option<usize>,

    /// Cross-perplexity flavor: pointwise | full-vocab
    #[arg(long, value_name = "MODE")]
    pub xppl_mode: Option<String>,
}

/// Scoring knobs shared by score/detect/calibrate/eval/trajectory.
#[derive(Args, Debug, Default)]
pub struct ScoringArgs {
    /// Repair order: closed-form | high-to-low | low-to-high | sequential | random
    #[arg(long, value_name = "NAME")]
    pub strategy: Option<String>,

    /// Seed for the random repair strategy
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,

    /// Cap on scored tokens per text
    #[arg(long, value_name = "N")]
    pub truncate: Option<usize>,
}

pub fn parse_strategy(name: &str) -> Result<RepairStrategy, CliError> {
    match name.replace('-', "_").as_str() {
        "closed_form" => Ok(RepairStrategy::ClosedForm),
        "high_to_low" => Ok(RepairStrategy::HighToLow),
        "low_to_high" => Ok(RepairStrategy::LowToHigh),
        "sequential" => Ok(RepairStrategy::Sequential),
        "random" => Ok(RepairStrategy::Random),
        _ => Err(CliError::usage(format!(
            "unknown strategy {name:?}; expected closed-form, high-to-low, low-to-high, sequential or random"
        ))),
    }
}

pub fn parse_mode(name: &str) -> Result<XpplMode, CliError> {
    match name.replace('-', "_").as_str() {
        "pointwise" => Ok(XpplMode::Pointwise),
        "full_vocab" => Ok(XpplMode::FullVocab),
        _ => Err(CliError::usage(format!(
            "unknown x-ppl mode {name:?}; expected pointwise or full-vocab"
        ))),
    }
}

fn mode_name(mode: XpplMode) -> &'static str {
    match mode {
        XpplMode::Pointwise => "pointwise",
        XpplMode::FullVocab => "full-vocab",
    }
}

/// Everything a command needs after flags, env and file agree.
pub struct Settings {
    pub provider: Box<dyn Provider>,
    pub mode: XpplMode,
    pub strategy: Option<RepairStrategy>,
    pub seed: Option<u64>,
    pub truncate: Option<usize>,
    /// Worker-count default from the config file; flags still win.
    pub workers: Option<usize>,
    /// The resolved configuration, echoed into reports and logs.
    pub resolved: serde_json::Value,
}

enum Backend {
    Ngram,
    Remote,
}

pub fn resolve(provider_args: &ProviderArgs, scoring: &ScoringArgs) -> Result<Settings, CliError> {
    let file = load_file_config(provider_args.config.as_deref())?;

    let model = provider_args.model.clone().or_else(|| file.model.clone());
    let env_url = std::env::var(ENV_PROVIDER_URL)
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let url = provider_args.provider_url.clone().or(env_url).or_else(|| file.provider_url.clone());

    let backend = match provider_args.backend.as_deref().or(file.backend.as_deref()) {
        Some("ngram") => Backend::Ngram,
        Some("remote") => Backend::Remote,
        Some(other) => {
            return Err(CliError::usage(format!(
                "unknown backend {other:?}; expected ngram or remote"
            )))
        }
        None => match (model.is_some(), url.is_some()) {
            (true, false) => Backend::Ngram,
            (false, true) => Backend::Remote,
            (true, true) => {
                return Err(CliError::usage(
                    "both a model path and a provider URL are configured; pick one with --backend",
                ))
            }
            (false, false) => {
                return Err(CliError::usage(
                    "no backend configured; pass --model <pair.dnag> or --provider-url <URL> \
                     (or set DNA_DETECT_PROVIDER_URL)",
                ))
            }
        },
    };

    let mode = match provider_args.xppl_mode.as_deref().or(file.xppl_mode.as_deref()) {
        Some(name) => parse_mode(name)?,
        None => XpplMode::Pointwise,
    };
    let strategy = match scoring.strategy.as_deref().or(file.strategy.as_deref()) {
        Some(name) => Some(parse_strategy(name)?),
        None => None,
    };
    let seed = scoring.seed.or(file.seed);
    let truncate = scoring.truncate.or(file.truncate);
    if truncate == Some(0) {
        return Err(CliError::usage("--truncate must be >= 1"));
    }

    let (provider, mut resolved): (Box<dyn Provider>, serde_json::Map<String, serde_json::Value>) =
        match backend {
            Backend::Ngram => {
                let Some(path) = model else {
                    return Err(CliError::usage("the ngram backend needs --model <pair.dnag>"));
                };
                let provider = NgramPairProvider::load(&path)?;
                let mut map = serde_json::Map::new();
                map.insert("backend".into(), json!("ngram"));
                map.insert("model".into(), json!(path.display().to_string()));
                map.insert("reference".into(), json!(provider.pair().reference_id));
                map.insert("observer".into(), json!(provider.pair().observer_id));
                (Box::new(provider), map)
            }
            Backend::Remote => {
                let Some(url) = url else {
                    return Err(CliError::usage(
                        "the remote backend needs --provider-url or DNA_DETECT_PROVIDER_URL",
                    ));
                };
                let timeout_ms = provider_args
                    .provider_timeout_ms
                    .or(file.provider_timeout_ms)
                    .unwrap_or(DEFAULT_TIMEOUT.as_millis() as u64);
                let retries =
                    provider_args.provider_retries.or(file.provider_retries).unwrap_or(DEFAULT_RETRIES);
                let max_in_flight = provider_args
                    .max_in_flight
                    .or(file.max_in_flight)
                    .unwrap_or(DEFAULT_MAX_IN_FLIGHT);
                let mut config = RemoteConfig::new(url.clone());
                config.timeout = Duration::from_millis(timeout_ms);
                config.retries = retries;
                config.max_in_flight = max_in_flight;
                let provider = RemoteProvider::new(config)?;
                let mut map = serde_json::Map::new();
                map.insert("backend".into(), json!("remote"));
                map.insert("provider-url".into(), json!(url));
                map.insert("provider-timeout-ms".into(), json!(timeout_ms));
                map.insert("provider-retries".into(), json!(retries));
                map.insert("max-in-flight".into(), json!(max_in_flight));
                (Box::new(provider), map)
            }
        };

    resolved.insert("xppl-mode".into(), json!(mode_name(mode)));
    if let Some(s) = strategy {
        resolved.insert("strategy".into(), json!(s.to_string()));
    }
    if let Some(s) = seed {
        resolved.insert("seed".into(), json!(s));
    }
    if let Some(t) = truncate {
        resolved.insert("truncate".into(), json!(t));
    }

    Ok(Settings {
        provider,
        mode,
        strategy,
        seed,
        truncate,
        workers: file.workers,
        resolved: serde_json::Value::Object(resolved),
    })
}
