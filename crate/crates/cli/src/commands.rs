//! One function per subcommand. All of them print data to stdout as
//! line-delimited JSON (trajectory optionally as CSV) and log to stderr.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde_json::json;

use dna_detect_core::attacks::{apply_edit_attack, AttackKind, AttackSpec, DEFAULT_ATTACK_RATE};
use dna_detect_core::detector::{self, CalibrationObjective};
use dna_detect_core::eval::{self, EvalOptions};
use dna_detect_core::providers::ngram::{NgramModel, NgramPairProvider};
use dna_detect_core::providers::tokenizer::{ByteTokenizer, BYTE_VOCAB_SIZE};
use dna_detect_core::providers::DEFAULT_MAX_TOKENS;
use dna_detect_core::repair::{self, build_trajectory, trajectory_csv};
use dna_detect_core::scoring::XpplMode;
use dna_detect_core::types::{Label, PositionAnalysis, RepairStrategy, ScoreBreakdown};

use crate::config::{self, CliError, ProviderArgs, ScoringArgs, Settings};

fn write_line(line: &serde_json::Value) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{line}").map_err(|e| CliError::data(format!("stdout: {e}")))
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// `--text` wins over nothing; `--file` is JSONL with `text` and optional
/// `id` per line. Inline text gets id "1".
fn inputs(text: &Option<String>, file: &Option<PathBuf>) -> Result<Vec<(String, String)>, CliError> {
    match (text, file) {
        (Some(t), None) => Ok(vec![("1".to_string(), t.clone())]),
        (None, Some(path)) => Ok(eval::load_jsonl_unlabeled(path)?),
        (Some(_), Some(_)) => Err(CliError::usage("pass either --text or --file, not both")),
        (None, None) => Err(CliError::usage("pass --text <TEXT> or --file <PATH>")),
    }
}

fn require_seed(strategy: RepairStrategy, seed: Option<u64>) -> Result<(), CliError> {
    if strategy == RepairStrategy::Random && seed.is_none() {
        return Err(CliError::usage("the random strategy needs --seed"));
    }
    Ok(())
}

/// Same truncation rules as evaluation: the cap is the smaller of --truncate,
/// the provider limit and the global default.
fn analyze_one(settings: &Settings, text: &str) -> Result<PositionAnalysis, CliError> {
    let provider = settings.provider.as_ref();
    let include_full = settings.mode == XpplMode::FullVocab;
    let cap = settings
        .truncate
        .unwrap_or(DEFAULT_MAX_TOKENS)
        .min(DEFAULT_MAX_TOKENS)
        .min(provider.pair().max_tokens);
    if provider.supports_local_tokens() {
        let tokens = provider.tokenize(text)?;
        let tokens = dna_detect_core::attacks::truncate(&tokens, cap.min(tokens.len()).max(1));
        Ok(provider.analyze(&tokens, include_full)?)
    } else {
        let (_, analysis) = provider.analyze_text(text, include_full)?;
        Ok(analysis.truncated(cap))
    }
}

fn score_one(settings: &Settings, text: &str) -> Result<(f64, ScoreBreakdown, usize), CliError> {
    let analysis = analyze_one(settings, text)?;
    let strategy = settings.strategy.unwrap_or(RepairStrategy::ClosedForm);
    let (score, breakdown) =
        repair::score_with_strategy(&analysis, settings.mode, strategy, settings.seed)?;
    Ok((score, breakdown, analysis.len()))
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Inline text to score
    #[arg(long, conflicts_with = "file", value_name = "TEXT")]
    pub text: Option<String>,
    /// JSONL file with one {"id": ..., "text": ...} object per line
    #[arg(long, value_name = "PATH")]
    pub file: Option<PathBuf>,
}

pub fn score(args: ScoreArgs) -> Result<(), CliError> {
    let settings = config::resolve(&args.provider, &args.scoring)?;
    eprintln!("config: {}", settings.resolved);
    require_seed(settings.strategy.unwrap_or(RepairStrategy::ClosedForm), settings.seed)?;
    for (id, text) in inputs(&args.text, &args.file)? {
        let (score, b, len) = score_one(&settings, &text)?;
        write_line(&json!({
            "id": id,
            "repair_score": score,
            "sigma_s": b.sigma_s,
            "sigma_ideal": b.sigma_ideal,
            "log_ppl": b.log_ppl,
            "x_ppl": b.x_ppl,
            "T": b.mutated_count,
            "L": len,
        }))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Inline text to classify
    #[arg(long, conflicts_with = "file", value_name = "TEXT")]
    pub text: Option<String>,
    /// JSONL file with one {"id": ..., "text": ...} object per line
    #[arg(long, value_name = "PATH")]
    pub file: Option<PathBuf>,
    /// Decision threshold; repair scores at or below it mean AI
    #[arg(long, value_name = "TAU")]
    pub threshold: Option<f64>,
    /// Calibration file written by `dna-detect calibrate`
    #[arg(long, value_name = "PATH")]
    pub calibration: Option<PathBuf>,
}

#[derive(Deserialize)]
struct StoredCalibration {
    threshold: f64,
}

pub fn detect(args: DetectArgs) -> Result<(), CliError> {
    let settings = config::resolve(&args.provider, &args.scoring)?;
    eprintln!("config: {}", settings.resolved);
    require_seed(settings.strategy.unwrap_or(RepairStrategy::ClosedForm), settings.seed)?;
    let threshold = match (args.threshold, &args.calibration) {
        (Some(t), Some(_)) => {
            eprintln!("warning: both --threshold and --calibration given; the flag wins");
            t
        }
        (Some(t), None) => t,
        (None, Some(path)) => {
            let raw = fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read calibration {}: {e}", path.display()))
            })?;
            let stored: StoredCalibration = serde_json::from_str(&raw).map_err(|e| {
                CliError::data(format!("bad calibration file {}: {e}", path.display()))
            })?;
            stored.threshold
        }
        (None, None) => {
            return Err(CliError::usage(
                "no threshold source; pass --threshold <TAU> or --calibration <PATH>",
            ))
        }
    };
    let mut ai = 0usize;
    let mut human = 0usize;
    for (id, text) in inputs(&args.text, &args.file)? {
        let (score, _, _) = score_one(&settings, &text)?;
        let decision = detector::detect(score, threshold)?;
        match decision {
            dna_detect_core::types::Decision::AiGenerated => ai += 1,
            dna_detect_core::types::Decision::HumanWritten => human += 1,
        }
        write_line(&json!({
            "id": id,
            "repair_score": score,
            "verdict": decision,
        }))?;
    }
    write_line(&json!({
        "summary": { "n_samples": ai + human, "ai": ai, "human": human, "threshold": threshold },
    }))
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Labeled JSONL corpus: {"id", "text", "label": "human"|"ai"} per line
    #[arg(long, value_name = "PATH")]
    pub file: PathBuf,
    /// max-f1 or target-fpr=<q>
    #[arg(long, default_value = "max-f1", value_name = "NAME")]
    pub objective: String,
    /// Also write the result JSON here
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let settings = config::resolve(&args.provider, &args.scoring)?;
    eprintln!("config: {}", settings.resolved);
    require_seed(settings.strategy.unwrap_or(RepairStrategy::ClosedForm), settings.seed)?;
    let objective: CalibrationObjective = args
        .objective
        .replace('-', "_")
        .parse()
        .map_err(|e: String| CliError::usage(format!("bad --objective: {e}")))?;
    let corpus = eval::load_jsonl(&args.file)?;
    let mut pairs: Vec<(f64, Label)> = Vec::with_capacity(corpus.len());
    for sample in &corpus.samples {
        let (score, _, _) = score_one(&settings, &sample.text)?;
        pairs.push((score, sample.label));
    }
    let result = detector::calibrate(&pairs, objective)?;
    let mut payload = serde_json::to_value(&result)
        .map_err(|e| CliError::data(format!("cannot encode result: {e}")))?;
    payload
        .as_object_mut()
        .expect("calibration result is an object")
        .insert("config".into(), settings.resolved.clone());
    if let Some(out) = &args.out {
        let pretty = serde_json::to_string_pretty(&payload)
            .map_err(|e| CliError::data(format!("cannot encode result: {e}")))?;
        write_file(out, &(pretty + "\n"))?;
        eprintln!("wrote {}", out.display());
    }
    write_line(&payload)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Labeled JSONL corpus: {"id", "text", "label": "human"|"ai"} per line
    #[arg(long, value_name = "PATH")]
    pub file: PathBuf,
    /// Attack AI-labeled samples first: substitute | insert | delete
    #[arg(long, value_name = "KIND")]
    pub attack: Option<String>,
    /// Fraction of tokens each attack edits
    #[arg(long, value_name = "RATE")]
    pub attack_rate: Option<f64>,
    /// Base seed for attack randomness
    #[arg(long, value_name = "SEED")]
    pub attack_seed: Option<u64>,
    /// Fixed verdict threshold (default: the best-F1 threshold on this corpus)
    #[arg(long, value_name = "TAU")]
    pub threshold: Option<f64>,
    /// Worker threads (default: available parallelism)
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Write the full report (with per-sample rows) as JSON
    #[arg(long, value_name = "PATH")]
    pub out_json: Option<PathBuf>,
    /// Write the per-sample rows as CSV
    #[arg(long, value_name = "PATH")]
    pub out_csv: Option<PathBuf>,
}

pub fn parse_attack_kind(name: &str) -> Result<AttackKind, CliError> {
    match name {
        "substitute" | "substitution" => Ok(AttackKind::Substitution),
        "insert" | "insertion" => Ok(AttackKind::Insertion),
        "delete" | "deletion" => Ok(AttackKind::Deletion),
        _ => Err(CliError::usage(format!(
            "unknown attack {name:?}; expected substitute, insert or delete"
        ))),
    }
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let settings = config::resolve(&args.provider, &args.scoring)?;
    eprintln!("config: {}", settings.resolved);
    let attack = match &args.attack {
        Some(kind) => Some(AttackSpec::new(
            parse_attack_kind(kind)?,
            args.attack_rate.unwrap_or(DEFAULT_ATTACK_RATE),
            args.attack_seed.unwrap_or(0),
        )?),
        None => {
            if args.attack_rate.is_some() || args.attack_seed.is_some() {
                return Err(CliError::usage("--attack-rate/--attack-seed need --attack"));
            }
            None
        }
    };
    let options = EvalOptions {
        mode: settings.mode,
        strategy: settings.strategy.unwrap_or(RepairStrategy::ClosedForm),
        strategy_seed: settings.seed,
        truncation: settings.truncate,
        attack,
        fixed_threshold: args.threshold,
        workers: args.workers.or(settings.workers),
    };
    let corpus = eval::load_jsonl(&args.file)?;
    let report = eval::evaluate(&corpus, settings.provider.as_ref(), &options)?;
    if let Some(out) = &args.out_json {
        write_file(out, &eval::report_json(&report))?;
        eprintln!("wrote {}", out.display());
    }
    if let Some(out) = &args.out_csv {
        write_file(out, &eval::report_csv(&report))?;
        eprintln!("wrote {}", out.display());
    }
    write_line(&json!({
        "auroc": report.auroc,
        "f1_max": report.f1_max,
        "f1_max_threshold": report.f1_max_threshold,
        "f1_fixed": report.f1_fixed,
        "verdict_threshold": report.verdict_threshold,
        "n_samples": report.n_samples,
        "n_ai": report.n_ai,
        "n_human": report.n_human,
    }))
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Inline text
    #[arg(long, conflicts_with = "file", value_name = "TEXT")]
    pub text: Option<String>,
    /// Raw UTF-8 text file; the whole file is one sample
    #[arg(long, value_name = "PATH")]
    pub file: Option<PathBuf>,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn trajectory(args: TrajectoryArgs) -> Result<(), CliError> {
    let settings = config::resolve(&args.provider, &args.scoring)?;
    eprintln!("config: {}", settings.resolved);
    let text = match (&args.text, &args.file) {
        (Some(t), None) => t.clone(),
        (None, Some(path)) => fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?,
        (Some(_), Some(_)) => return Err(CliError::usage("pass either --text or --file, not both")),
        (None, None) => return Err(CliError::usage("pass --text <TEXT> or --file <PATH>")),
    };
    let strategy = settings.strategy.unwrap_or(RepairStrategy::HighToLow);
    if strategy == RepairStrategy::ClosedForm {
        return Err(CliError::usage(
            "closed-form has no repair walk; pick high-to-low, low-to-high, sequential or random",
        ));
    }
    require_seed(strategy, settings.seed)?;
    let analysis = analyze_one(&settings, &text)?;
    let tr = build_trajectory(&analysis, settings.mode, strategy, settings.seed)?;
    let csv = trajectory_csv(&tr);
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            write_line(&json!({
                "out": path.display().to_string(),
                "rows": tr.scores.len(),
                "strategy": tr.strategy.to_string(),
                "repair_score": tr.repair_score(),
            }))?;
        }
        None => {
            print!("{csv}");
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// JSONL corpus; `text` required, `id` and `label` carried through
    #[arg(long, value_name = "PATH")]
    pub file: PathBuf,
    /// substitute | insert | delete
    #[arg(long, value_name = "KIND")]
    pub kind: String,
    /// Fraction of tokens to edit
    #[arg(long, default_value_t = DEFAULT_ATTACK_RATE, value_name = "RATE")]
    pub rate: f64,
    /// Base seed; each line derives its own stream from it
    #[arg(long, default_value_t = 0, value_name = "SEED")]
    pub seed: u64,
    /// Write the attacked JSONL here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn attack(args: AttackArgs) -> Result<(), CliError> {
    let spec = AttackSpec::new(parse_attack_kind(&args.kind)?, args.rate, args.seed)?;
    let file = fs::File::open(&args.file)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.file.display())))?;
    let mut lines = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|e| CliError::data(format!("{}: {e}", args.file.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            CliError::data(format!("{} line {}: {e}", args.file.display(), lineno + 1))
        })?;
        let text = value.get("text").and_then(|t| t.as_str()).ok_or_else(|| {
            CliError::data(format!(
                "{} line {}: missing \"text\" field",
                args.file.display(),
                lineno + 1
            ))
        })?;
        let id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => (lineno + 1).to_string(),
        };
        let tokens = ByteTokenizer::tokenize(text)?;
        let attacked = apply_edit_attack(&tokens, &spec.for_sample(lines.len()), BYTE_VOCAB_SIZE)?;
        let out_text = ByteTokenizer::detokenize(&attacked)?;
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), json!(id));
        obj.insert("text".into(), json!(out_text));
        if let Some(label) = value.get("label") {
            obj.insert("label".into(), label.clone());
        }
        lines.push(serde_json::Value::Object(obj).to_string());
    }
    let body = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => {
            write_file(path, &body)?;
            eprintln!("wrote {} ({} lines)", path.display(), lines.len());
        }
        None => {
            print!("{body}");
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainNgramArgs {
    /// Training text; the models read raw bytes
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Reference model order
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub ref_order: usize,
    /// Observer model order
    #[arg(long, default_value_t = 2, value_name = "N")]
    pub obs_order: usize,
    /// Additive smoothing constant
    #[arg(long, default_value_t = 0.1, value_name = "ALPHA")]
    pub alpha: f64,
    /// Where to write the pair file
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

fn open_corpus(path: &PathBuf) -> Result<impl Read, CliError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("cannot read corpus {}: {e}", path.display())))
}

pub fn train_ngram(args: TrainNgramArgs) -> Result<(), CliError> {
    let reference = NgramModel::train(open_corpus(&args.corpus)?, args.ref_order, args.alpha)?;
    let observer = NgramModel::train(open_corpus(&args.corpus)?, args.obs_order, args.alpha)?;
    eprintln!(
        "trained reference (order {}, {} contexts) and observer (order {}, {} contexts)",
        reference.order(),
        reference.context_count(),
        observer.order(),
        observer.context_count()
    );
    let provider = NgramPairProvider::new(reference, observer);
    provider.save(&args.out)?;
    use dna_detect_core::providers::Provider as _;
    write_line(&json!({
        "out": args.out.display().to_string(),
        "reference": provider.pair().reference_id,
        "observer": provider.pair().observer_id,
    }))
}
