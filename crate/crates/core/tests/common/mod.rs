//! Shared test support: a deterministic English-like corpus generator, a
//! synthetic detection experiment built from it, builders for random
//! analyses and a brute-force permutation oracle.

use std::collections::HashSet;
use std::io::Cursor;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use dna_detect_core::providers::ngram::{NgramModel, NgramPairProvider};
use dna_detect_core::providers::Provider;
use dna_detect_core::scoring::{self, XpplMode};
use dna_detect_core::types::{
    CorpusSample, Label, LabeledCorpus, PositionAnalysis, PositionRecord, RepairState,
};

const NOUNS: &[&str] = &[
    "river", "mountain", "garden", "library", "engine", "harbor", "village", "forest",
    "window", "teacher", "painter", "bridge", "market", "station", "kitchen", "journal",
    "lantern", "meadow", "orchard", "valley", "captain", "farmer", "doctor", "sailor",
    "student", "letter", "ladder", "bottle", "basket", "mirror", "candle", "carpet",
    "saddle", "hammer", "needle", "anchor", "jacket", "pocket", "ribbon", "shadow",
    "silver", "copper", "marble", "timber", "stream", "summit", "tunnel", "desert",
    "island", "castle", "tower", "stable", "tavern", "wagon", "flock", "field",
    "storm", "winter", "summer", "autumn", "spring", "morning", "evening", "midnight",
    "horizon", "compass", "voyage", "harvest", "festival", "melody", "whisper", "thunder",
    "feather", "pebble", "willow", "cedar", "maple", "clover", "heather", "moss",
];

const VERBS: &[&str] = &[
    "carried", "followed", "watched", "crossed", "painted", "gathered", "repaired",
    "remembered", "discovered", "measured", "sheltered", "guided", "planted", "traded",
    "brightened", "sharpened", "collected", "described", "delivered", "borrowed",
    "answered", "wandered", "mended", "studied", "greeted", "counted", "lifted",
    "polished", "folded", "weighed", "sketched", "hauled", "steered", "signaled",
];

const ADJECTIVES: &[&str] = &[
    "quiet", "narrow", "golden", "ancient", "gentle", "crooked", "distant", "hollow",
    "patient", "silent", "rusty", "bright", "heavy", "slender", "weary", "sturdy",
    "faded", "smooth", "crowded", "steady", "pale", "warm", "frozen", "mossy",
    "wooden", "stony", "misty", "broad", "sleepy", "careful", "cheerful", "clever",
];

const ADVERBS: &[&str] = &[
    "slowly", "quietly", "carefully", "suddenly", "eventually", "gladly", "barely",
    "steadily", "patiently", "rarely", "often", "finally", "nearly", "gently",
];

const PREPOSITIONS: &[&str] = &[
    "over", "under", "beside", "near", "through", "across", "behind", "beyond",
    "within", "against", "along", "around",
];

const DETERMINERS: &[&str] = &["the", "a", "every", "some", "this", "that", "each", "another"];

const CONNECTORS: &[&str] =
    &["and then", "while", "because", "although", "so", "but", "until", "before"];

/// Skewed pick: plain prose leans on the front of each list, ornate prose
/// on the tail, so the two styles share spelling but not word frequency.
fn pick<'a>(rng: &mut ChaCha12Rng, list: &[&'a str], ornate: bool) -> &'a str {
    let r: f64 = rng.gen();
    let u = if ornate { 1.0 - r * r } else { r * r };
    let idx = (u * list.len() as f64) as usize;
    list[idx.min(list.len() - 1)]
}

/// Doubles one vowel, yielding a spelling the training corpus never uses.
fn roughen(rng: &mut ChaCha12Rng, word: &str) -> String {
    let vowels: Vec<usize> = word
        .char_indices()
        .filter(|&(_, c)| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u'))
        .map(|(i, _)| i)
        .collect();
    if vowels.is_empty() {
        return word.to_string();
    }
    let at = vowels[rng.gen_range(0..vowels.len())];
    let mut out = String::with_capacity(word.len() + 1);
    out.push_str(&word[..=at]);
    out.push_str(&word[at..]);
    out
}

fn sentence(rng: &mut ChaCha12Rng, ornate: bool) -> String {
    let shape = rng.gen_range(0..5u8);
    let mut words: Vec<String> = Vec::new();
    let push = |w: &str, out: &mut Vec<String>| out.push(w.to_string());
    match shape {
        0 => {
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, ADJECTIVES, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, VERBS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, PREPOSITIONS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, ADJECTIVES, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
        }
        1 => {
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, ADVERBS, ornate), &mut words);
            push(pick(rng, VERBS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, ADJECTIVES, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
        }
        2 => {
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, VERBS, ornate), &mut words);
            push(pick(rng, PREPOSITIONS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, CONNECTORS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, VERBS, ornate), &mut words);
        }
        3 => {
            words.push(format!("{},", pick(rng, ADVERBS, ornate)));
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, ADJECTIVES, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, VERBS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
        }
        _ => {
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, ADJECTIVES, ornate), &mut words);
            push(pick(rng, ADJECTIVES, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, VERBS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
            push(pick(rng, PREPOSITIONS, ornate), &mut words);
            push(pick(rng, DETERMINERS, ornate), &mut words);
            push(pick(rng, NOUNS, ornate), &mut words);
        }
    }
    if ornate {
        for w in words.iter_mut() {
            if rng.gen_bool(0.15) {
                *w = roughen(rng, w);
            }
        }
    }
    let mut s = words.join(" ");
    let first = s.chars().next().unwrap().to_ascii_uppercase();
    s.replace_range(..1, &first.to_string());
    s.push('.');
    s
}

/// Deterministic English-like prose of at least `min_bytes` ASCII bytes.
/// Plain prose matches what the models are trained on; ornate prose uses
/// the same vocabulary with inverted word frequencies.
pub fn generate_corpus(seed: u64, min_bytes: usize, ornate: bool) -> String {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(min_bytes + 1024);
    while out.len() < min_bytes {
        let sentences = rng.gen_range(4..=8);
        let mut paragraph = Vec::with_capacity(sentences);
        for _ in 0..sentences {
            paragraph.push(sentence(&mut rng, ornate));
        }
        out.push_str(&paragraph.join(" "));
        out.push_str("\n\n");
    }
    assert!(out.is_ascii());
    out
}

/// A full synthetic detection setup: an n-gram pair trained on generated
/// prose, greedy model generations as the AI class and held-out excerpts as
/// the human class, split into disjoint evaluation and calibration corpora.
pub struct SyntheticExperiment {
    pub provider: NgramPairProvider,
    pub eval: LabeledCorpus,
    pub calibration: LabeledCorpus,
}

pub const SAMPLE_TOKENS: usize = 300;

impl SyntheticExperiment {
    pub fn build() -> SyntheticExperiment {
        let train = generate_corpus(0xD7A0_5EED, 1_100_000, false);
        let human = generate_corpus(0x00B5_CA7E, 250_000, true);
        let reference = NgramModel::train(Cursor::new(&train), 5, 0.1).unwrap();
        let observer = NgramModel::train(Cursor::new(&train), 2, 0.1).unwrap();
        let provider = NgramPairProvider::new(reference, observer);

        let greedy = provider.reference().sample(SAMPLE_TOKENS, 0.0, 0).unwrap();
        let ai_text = provider.detokenize(&greedy).unwrap();

        let excerpt = |index: usize| -> String {
            let start = index * 700;
            human[start..start + SAMPLE_TOKENS].to_string()
        };

        let mut eval = LabeledCorpus::default();
        for i in 0..200 {
            eval.samples.push(CorpusSample {
                id: format!("ai-{i:03}"),
                text: ai_text.clone(),
                label: Label::Ai,
            });
        }
        for i in 0..200 {
            eval.samples.push(CorpusSample {
                id: format!("human-{i:03}"),
                text: excerpt(i),
                label: Label::Human,
            });
        }

        let mut calibration = LabeledCorpus::default();
        for i in 0..100 {
            calibration.samples.push(CorpusSample {
                id: format!("cal-ai-{i:03}"),
                text: ai_text.clone(),
                label: Label::Ai,
            });
        }
        for i in 0..100 {
            calibration.samples.push(CorpusSample {
                id: format!("cal-human-{i:03}"),
                text: excerpt(200 + i),
                label: Label::Human,
            });
        }

        SyntheticExperiment { provider, eval, calibration }
    }
}

/// Shared experiment instance; built once per test binary.
pub fn experiment() -> &'static SyntheticExperiment {
    static EXPERIMENT: OnceLock<SyntheticExperiment> = OnceLock::new();
    EXPERIMENT.get_or_init(SyntheticExperiment::build)
}

/// Random but valid analysis with exactly `mutations` mutated positions
/// (capped by `len`). Probabilities are arbitrary; a few mutations tie the
/// argmax probability exactly, giving zero-width repair steps.
pub fn random_analysis(seed: u64, len: usize, mutations: usize) -> PositionAnalysis {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let t = mutations.min(len);
    let mutated: HashSet<usize> =
        rand::seq::index::sample(&mut rng, len, t).into_iter().collect();
    let mut records = Vec::with_capacity(len);
    for i in 0..len {
        let argmax_p: f64 = rng.gen_range(0.25..0.9);
        let argmax_token: u32 = rng.gen_range(0..500);
        let (actual_token, actual_p) = if mutated.contains(&i) {
            let token = argmax_token + 1 + rng.gen_range(0..5);
            let p = if rng.gen_bool(0.05) {
                argmax_p
            } else {
                argmax_p * rng.gen_range(0.05..0.95)
            };
            (token, p)
        } else {
            (argmax_token, argmax_p)
        };
        let obs_p: f64 = rng.gen_range(0.01..0.95);
        records.push(PositionRecord {
            index: i + 1,
            actual_token,
            actual_logprob_ref: actual_p.ln(),
            actual_logprob_obs: obs_p.ln(),
            argmax_token,
            argmax_logprob_ref: argmax_p.ln(),
            cross_entropy_full: Some(rng.gen_range(0.05..3.0)),
        });
    }
    PositionAnalysis::new(records).unwrap()
}

/// All permutations of `items`, in a deterministic order.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Repair score of one explicit order, evaluated through the conditional
/// score definition (a fresh score per repair set), not the delta shortcut.
pub fn score_by_definition(analysis: &PositionAnalysis, order: &[usize], mode: XpplMode) -> f64 {
    let mut state = RepairState::empty();
    let mut sum = scoring::sigma(analysis, &state, mode).unwrap();
    for &pos in order {
        state.insert(pos);
        sum += scoring::sigma(analysis, &state, mode).unwrap();
    }
    sum / (order.len() + 1) as f64
}
