//! Corpus evaluation: JSONL ingestion, ranking metrics and the end-to-end
//! pipeline (tokenize, truncate, optionally attack, analyze, score, decide).
//!
//! Reports are deterministic: per-sample results are keyed by corpus order,
//! the worker count is excluded from the config snapshot, and serialization
//! uses fixed field order, so two runs with the same inputs produce
//! byte-identical files regardless of scheduling.

use std::error::Error;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackError, AttackSpec};
use crate::detector::{self, DetectorError};
use crate::providers::{Provider, ProviderError, DEFAULT_MAX_TOKENS};
use crate::repair::{self, RepairError};
use crate::scoring::XpplMode;
use crate::types::{
    CorpusSample, Decision, Label, LabeledCorpus, PositionAnalysis, RepairStrategy,
};

#[derive(Debug)]
pub enum EvalError {
    Io { path: PathBuf, source: std::io::Error },
    Parse { line: usize, message: String },
    MissingField { line: usize, field: &'static str },
    EmptyText { line: usize },
    EmptyCorpus,
    SingleClass,
    NonFiniteScore,
    LengthMismatch { scores: usize, labels: usize },
    /// Options that cannot be run as given.
    Config(String),
    /// Token-level attacks need a provider with a local tokenizer.
    AttackUnsupported,
    /// Failure while scoring one sample, tagged with its id.
    Sample { id: String, source: Box<EvalError> },
    Provider(ProviderError),
    Repair(RepairError),
    Detector(DetectorError),
    Attack(AttackError),
}

impl EvalError {
    /// True when the underlying cause is the provider being unreachable or
    /// misbehaving, as opposed to bad local data or options.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            EvalError::Provider(e) => matches!(
                e,
                ProviderError::Unavailable { .. }
                    | ProviderError::Protocol(_)
                    | ProviderError::Persist(_)
            ),
            EvalError::Sample { source, .. } => source.is_provider_failure(),
            _ => false,
        }
    }
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            EvalError::Parse { line, message } => write!(f, "line {line}: {message}"),
            EvalError::MissingField { line, field } => {
                write!(f, "line {line}: missing field {field:?}")
            }
            EvalError::EmptyText { line } => write!(f, "line {line}: text is empty"),
            EvalError::EmptyCorpus => f.write_str("corpus has no samples"),
            EvalError::SingleClass => {
                f.write_str("corpus needs both human and ai samples")
            }
            EvalError::NonFiniteScore => f.write_str("metrics need finite scores"),
            EvalError::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores against {labels} labels")
            }
            EvalError::Config(msg) => write!(f, "bad evaluation options: {msg}"),
            EvalError::AttackUnsupported => f.write_str(
                "token attacks need a local tokenizer; this provider only scores raw text",
            ),
            EvalError::Sample { id, source } => write!(f, "sample {id:?}: {source}"),
            EvalError::Provider(e) => write!(f, "provider: {e}"),
            EvalError::Repair(e) => write!(f, "repair: {e}"),
            EvalError::Detector(e) => write!(f, "detector: {e}"),
            EvalError::Attack(e) => write!(f, "attack: {e}"),
        }
    }
}

impl Error for EvalError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            EvalError::Io { source, .. } => Some(source),
            EvalError::Sample { source, .. } => Some(source.as_ref()),
            EvalError::Provider(e) => Some(e),
            EvalError::Repair(e) => Some(e),
            EvalError::Detector(e) => Some(e),
            EvalError::Attack(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ProviderError> for EvalError {
    fn from(e: ProviderError) -> Self {
        EvalError::Provider(e)
    }
}

impl From<RepairError> for EvalError {
    fn from(e: RepairError) -> Self {
        EvalError::Repair(e)
    }
}

impl From<DetectorError> for EvalError {
    fn from(e: DetectorError) -> Self {
        EvalError::Detector(e)
    }
}

impl From<AttackError> for EvalError {
    fn from(e: AttackError) -> Self {
        EvalError::Attack(e)
    }
}

/// Reads a JSONL corpus: one object per line with `text`, `label`
/// ("human"/"ai", any case) and an optional `id` (defaults to the line
/// number). Blank lines are skipped.
pub fn load_jsonl(path: &Path) -> Result<LabeledCorpus, EvalError> {
    read_lines(path, |line, value| {
        let label = match value.get("label") {
            Some(serde_json::Value::String(s)) => match s.to_ascii_lowercase().as_str() {
                "human" => Label::Human,
                "ai" => Label::Ai,
                other => {
                    return Err(EvalError::Parse {
                        line,
                        message: format!("unknown label {other:?}; expected human or ai"),
                    })
                }
            },
            Some(_) => {
                return Err(EvalError::Parse { line, message: "label must be a string".into() })
            }
            None => return Err(EvalError::MissingField { line, field: "label" }),
        };
        Ok(label)
    })
}

/// Reads a JSONL file of texts to score; `label` is optional and ignored.
pub fn load_jsonl_unlabeled(path: &Path) -> Result<Vec<(String, String)>, EvalError> {
    let corpus = read_lines(path, |_, _| Ok(Label::Human))?;
    Ok(corpus.samples.into_iter().map(|s| (s.id, s.text)).collect())
}

fn read_lines(
    path: &Path,
    mut label_of: impl FnMut(usize, &serde_json::Value) -> Result<Label, EvalError>,
) -> Result<LabeledCorpus, EvalError> {
    let file = std::fs::File::open(path)
        .map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let raw = line.map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&raw)
            .map_err(|e| EvalError::Parse { line: line_no, message: e.to_string() })?;
        let text = match value.get("text") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: "text must be a string".into(),
                })
            }
            None => return Err(EvalError::MissingField { line: line_no, field: "text" }),
        };
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText { line: line_no });
        }
        let id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: "id must be a string or number".into(),
                })
            }
            None => line_no.to_string(),
        };
        let label = label_of(line_no, &value)?;
        samples.push(CorpusSample { id, text, label });
    }
    Ok(LabeledCorpus { samples })
}

/// Area under the ROC curve for `scores` against `is_positive`, where
/// higher scores should indicate the positive class. Computed by the
/// rank-sum identity with average ranks for exact ties, which matches the
/// pairwise definition exactly.
pub fn auroc(scores: &[f64], is_positive: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != is_positive.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: is_positive.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share the average rank (i + j + 1) / 2.
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if is_positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// F1 of the AI class at a fixed threshold (`score <= threshold` is AI).
pub fn f1(samples: &[(f64, Label)], threshold: f64) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if !threshold.is_finite() || samples.iter().any(|(s, _)| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    Ok(detector::f1_at(samples, threshold))
}

/// Best achievable F1 and the threshold that attains it.
pub fn f1_max(samples: &[(f64, Label)]) -> Result<(f64, f64), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if samples.iter().any(|(s, _)| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let ai = samples.iter().filter(|(_, l)| *l == Label::Ai).count();
    if ai == 0 || ai == samples.len() {
        return Err(EvalError::SingleClass);
    }
    let (threshold, best) = detector::max_f1_scan(samples);
    Ok((best, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub mode: XpplMode,
    pub strategy: RepairStrategy,
    /// Base seed for the random strategy; a per-sample seed is derived from
    /// it so results do not depend on scheduling.
    pub strategy_seed: Option<u64>,
    /// Cap on scored tokens per sample; clamped to the provider limit and
    /// the global default cap.
    pub truncation: Option<usize>,
    /// Applied to AI-labeled samples only, with per-sample seeds.
    pub attack: Option<AttackSpec>,
    /// When set, verdicts use this threshold; otherwise the best-F1
    /// threshold found on this corpus.
    pub fixed_threshold: Option<f64>,
    /// Worker threads; defaults to available parallelism. Never affects
    /// the report contents.
    pub workers: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: XpplMode::Pointwise,
            strategy: RepairStrategy::ClosedForm,
            strategy_seed: None,
            truncation: None,
            attack: None,
            fixed_threshold: None,
            workers: None,
        }
    }
}

/// The settings that determine report contents, frozen into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub reference_id: String,
    pub observer_id: String,
    pub mode: XpplMode,
    pub strategy: RepairStrategy,
    pub strategy_seed: Option<u64>,
    pub truncation: usize,
    pub attack: Option<AttackSpec>,
    pub fixed_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub id: String,
    pub label: Label,
    pub repair_score: f64,
    pub sigma_s: f64,
    pub sigma_ideal: f64,
    #[serde(rename = "T")]
    pub mutated_count: usize,
    pub verdict: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub f1_max: f64,
    pub f1_max_threshold: f64,
    /// F1 at the fixed threshold, when one was supplied.
    pub f1_fixed: Option<f64>,
    /// Threshold the per-sample verdicts were made with.
    pub verdict_threshold: f64,
    pub n_samples: usize,
    pub n_ai: usize,
    pub n_human: usize,
    pub config: EvalConfig,
    pub per_sample: Vec<SampleReport>,
}

struct ScoredSample {
    repair_score: f64,
    sigma_s: f64,
    sigma_ideal: f64,
    mutated_count: usize,
}

/// Runs the full pipeline over a labeled corpus. Results are in corpus
/// order and independent of the worker count.
pub fn evaluate(
    corpus: &LabeledCorpus,
    provider: &dyn Provider,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let n_ai = corpus.count_label(Label::Ai);
    let n_human = corpus.len() - n_ai;
    if n_ai == 0 || n_human == 0 {
        return Err(EvalError::SingleClass);
    }
    if options.truncation == Some(0) {
        return Err(EvalError::Config("truncation must be >= 1".into()));
    }
    if options.strategy == RepairStrategy::Random && options.strategy_seed.is_none() {
        return Err(EvalError::Config("random strategy needs a strategy seed".into()));
    }
    if let Some(t) = options.fixed_threshold {
        if !t.is_finite() {
            return Err(EvalError::Config("fixed threshold must be finite".into()));
        }
    }
    if options.attack.is_some() && !provider.supports_local_tokens() {
        return Err(EvalError::AttackUnsupported);
    }
    let cap = options
        .truncation
        .unwrap_or(DEFAULT_MAX_TOKENS)
        .min(DEFAULT_MAX_TOKENS)
        .min(provider.pair().max_tokens);

    let n = corpus.len();
    let workers = options
        .workers
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(usize::from).unwrap_or(1)
        })
        .clamp(1, n);

    let scored: Vec<Option<Result<ScoredSample, EvalError>>> = if workers == 1 {
        corpus
            .samples
            .iter()
            .enumerate()
            .map(|(idx, sample)| Some(score_sample(sample, idx, provider, options, cap)))
            .collect()
    } else {
        let slots: Mutex<Vec<Option<Result<ScoredSample, EvalError>>>> =
            Mutex::new((0..n).map(|_| None).collect());
        let cursor = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = cursor.fetch_add(1, Ordering::Relaxed);
                    if idx >= n {
                        break;
                    }
                    let result =
                        score_sample(&corpus.samples[idx], idx, provider, options, cap);
                    slots.lock().unwrap()[idx] = Some(result);
                });
            }
        });
        slots.into_inner().unwrap()
    };

    let mut pairs: Vec<(f64, Label)> = Vec::with_capacity(n);
    let mut partial: Vec<ScoredSample> = Vec::with_capacity(n);
    for (sample, slot) in corpus.samples.iter().zip(scored) {
        let result = slot.expect("every sample is scored");
        let s = result.map_err(|e| EvalError::Sample {
            id: sample.id.clone(),
            source: Box::new(e),
        })?;
        pairs.push((s.repair_score, sample.label));
        partial.push(s);
    }

    // Detection scores rank AI above human, so flip the repair score.
    let detection: Vec<f64> = pairs.iter().map(|&(s, _)| -s).collect();
    let positives: Vec<bool> = pairs.iter().map(|&(_, l)| l == Label::Ai).collect();
    let auroc = auroc(&detection, &positives)?;
    let (f1_max_value, f1_max_threshold) = f1_max(&pairs)?;
    let f1_fixed = match options.fixed_threshold {
        Some(t) => Some(f1(&pairs, t)?),
        None => None,
    };
    let verdict_threshold = options.fixed_threshold.unwrap_or(f1_max_threshold);

    let per_sample = corpus
        .samples
        .iter()
        .zip(partial)
        .map(|(sample, s)| {
            Ok(SampleReport {
                id: sample.id.clone(),
                label: sample.label,
                repair_score: s.repair_score,
                sigma_s: s.sigma_s,
                sigma_ideal: s.sigma_ideal,
                mutated_count: s.mutated_count,
                verdict: detector::detect(s.repair_score, verdict_threshold)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    Ok(EvalReport {
        auroc,
        f1_max: f1_max_value,
        f1_max_threshold,
        f1_fixed,
        verdict_threshold,
        n_samples: n,
        n_ai,
        n_human,
        config: EvalConfig {
            reference_id: provider.pair().reference_id.clone(),
            observer_id: provider.pair().observer_id.clone(),
            mode: options.mode,
            strategy: options.strategy,
            strategy_seed: options.strategy_seed,
            truncation: cap,
            attack: options.attack,
            fixed_threshold: options.fixed_threshold,
        },
        per_sample,
    })
}

fn score_sample(
    sample: &CorpusSample,
    index: usize,
    provider: &dyn Provider,
    options: &EvalOptions,
    cap: usize,
) -> Result<ScoredSample, EvalError> {
    let include_xent = options.mode == XpplMode::FullVocab;
    let analysis: PositionAnalysis = if provider.supports_local_tokens() {
        let tokens = provider.tokenize(&sample.text)?;
        let mut tokens = attacks::truncate(&tokens, cap);
        if let Some(attack) = &options.attack {
            if sample.label == Label::Ai {
                tokens = attacks::apply_edit_attack(
                    &tokens,
                    &attack.for_sample(index),
                    provider.pair().vocab_size,
                )?;
            }
        }
        provider.analyze(&tokens, include_xent)?
    } else {
        let (_, full) = provider.analyze_text(&sample.text, include_xent)?;
        full.truncated(cap)
    };
    let seed = options
        .strategy_seed
        .map(|base| attacks::derive_seed(base, index as u64));
    let (repair_score, breakdown) =
        repair::score_with_strategy(&analysis, options.mode, options.strategy, seed)?;
    Ok(ScoredSample {
        repair_score,
        sigma_s: breakdown.sigma_s,
        sigma_ideal: breakdown.sigma_ideal,
        mutated_count: breakdown.mutated_count,
    })
}

/// Pretty JSON with a trailing newline; byte-stable for equal reports.
pub fn report_json(report: &EvalReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-sample CSV export.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("id,label,repair_score,sigma_s,sigma_ideal,T,verdict\n");
    for s in &report.per_sample {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&s.id),
            s.label,
            s.repair_score,
            s.sigma_s,
            s.sigma_ideal,
            s.mutated_count,
            s.verdict
        ));
    }
    out
}
