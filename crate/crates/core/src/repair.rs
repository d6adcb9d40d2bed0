//! Mutation repair: ideal sequences, repair trajectories and repair scores.
//!
//! A mutation is a position where the sequence token differs from the
//! reference argmax. Repairing mutation i moves the conditional score down
//! by a fixed amount
//!
//!   delta_i = (argmax_lp_i - actual_lp_i) / (L * x-PPL) >= 0,
//!
//! independent of repair order, because every term is conditioned on the
//! original prefix. A trajectory visits sigma(s_t | s) for t = 0..=T along
//! one permutation of the mutations and its repair score is the mean of the
//! visited values. Averaged over all T! permutations the mean collapses to
//! (sigma(s) + sigma(s_ideal | s)) / 2, which is the closed form used as the
//! default detector score. Everything here is pure arithmetic on a
//! [`PositionAnalysis`]; no provider call is ever repeated.

use std::error::Error;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::scoring::{self, KahanSum, ScoringError, XpplMode, DEGENERATE_X_PPL};
use crate::types::{
    PositionAnalysis, RepairState, RepairStrategy, RepairTrajectory, ScoreBreakdown,
    TokenSequence,
};

/// Per-mutation score drops, in ascending position order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaProfile {
    /// (position, delta) pairs; one entry per mutated position.
    pub deltas: Vec<(usize, f64)>,
    /// Sum of all deltas: sigma(s) - sigma(s_ideal | s) up to rounding.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepairError {
    /// The random strategy needs a seed to be reproducible.
    MissingSeed,
    /// The closed-form strategy has no repair order and cannot be walked.
    UnorderedStrategy,
    /// Averaging over zero random draws is undefined.
    ZeroDraws,
    Score(ScoringError),
}

impl fmt::Display for RepairError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepairError::MissingSeed => f.write_str("random repair order requires a seed"),
            RepairError::UnorderedStrategy => {
                f.write_str("closed_form has no repair order; pick an ordered strategy")
            }
            RepairError::ZeroDraws => f.write_str("random averaging needs at least one draw"),
            RepairError::Score(e) => write!(f, "scoring failed: {e}"),
        }
    }
}

impl Error for RepairError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            RepairError::Score(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ScoringError> for RepairError {
    fn from(e: ScoringError) -> Self {
        RepairError::Score(e)
    }
}

/// The ideal sequence: the reference argmax token at every position. By
/// construction its mutation count is zero.
pub fn ideal_sequence(analysis: &PositionAnalysis) -> TokenSequence {
    TokenSequence::new(analysis.records().iter().map(|r| r.argmax_token).collect())
}

/// Score drop per mutation, given the trajectory's shared denominator.
/// `x_ppl` must come from [`scoring::cross_ppl`] on the same analysis.
pub fn delta_profile(analysis: &PositionAnalysis, x_ppl: f64) -> Result<DeltaProfile, RepairError> {
    if !(x_ppl.is_finite() && x_ppl > DEGENERATE_X_PPL) {
        return Err(ScoringError::DegenerateDenominator { x_ppl }.into());
    }
    let scale = analysis.len() as f64 * x_ppl;
    let mut deltas = Vec::with_capacity(analysis.mutation_count());
    let mut total = KahanSum::default();
    for &pos in analysis.mutated_positions() {
        let rec = &analysis.records()[pos - 1];
        let delta = (rec.argmax_logprob_ref - rec.actual_logprob_ref) / scale;
        total.add(delta);
        deltas.push((pos, delta));
    }
    Ok(DeltaProfile { deltas, total: total.value() })
}

/// Walks the mutations in the order picked by `strategy` and records the
/// conditional score after each repair. `seed` is required for
/// [`RepairStrategy::Random`] and ignored otherwise.
pub fn build_trajectory(
    analysis: &PositionAnalysis,
    mode: XpplMode,
    strategy: RepairStrategy,
    seed: Option<u64>,
) -> Result<RepairTrajectory, RepairError> {
    if strategy == RepairStrategy::ClosedForm {
        return Err(RepairError::UnorderedStrategy);
    }
    let components = scoring::components(analysis, mode)?;
    let profile = delta_profile(analysis, components.x_ppl)?;

    let mut order = profile.deltas;
    match strategy {
        RepairStrategy::Sequential => {}
        RepairStrategy::HighToLow => {
            order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        }
        RepairStrategy::LowToHigh => {
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        RepairStrategy::Random => {
            let seed = seed.ok_or(RepairError::MissingSeed)?;
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        RepairStrategy::ClosedForm => unreachable!(),
    }

    let mut scores = Vec::with_capacity(order.len() + 1);
    let mut current = components.sigma;
    scores.push(current);
    for &(_, delta) in &order {
        current -= delta;
        scores.push(current);
    }
    Ok(RepairTrajectory {
        permutation: order.into_iter().map(|(pos, _)| pos).collect(),
        scores,
        strategy,
    })
}

/// Mean repair score over `draws` independent seeded random orders.
pub fn repair_score_random_avg(
    analysis: &PositionAnalysis,
    mode: XpplMode,
    draws: usize,
    seed: u64,
) -> Result<f64, RepairError> {
    if draws == 0 {
        return Err(RepairError::ZeroDraws);
    }
    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let mut acc = KahanSum::default();
    for _ in 0..draws {
        let sub = master.next_u64();
        let t = build_trajectory(analysis, mode, RepairStrategy::Random, Some(sub))?;
        acc.add(t.repair_score());
    }
    Ok(acc.value() / draws as f64)
}

/// Exact expectation of the repair score over all repair orders:
/// (sigma(s) + sigma(s_ideal | s)) / 2. Costs two sigma evaluations.
pub fn repair_score_closed(analysis: &PositionAnalysis, mode: XpplMode) -> Result<f64, RepairError> {
    let (score, _) = score_with_strategy(analysis, mode, RepairStrategy::ClosedForm, None)?;
    Ok(score)
}

/// Repair score plus the quantities a verdict report wants alongside it.
pub fn score_with_strategy(
    analysis: &PositionAnalysis,
    mode: XpplMode,
    strategy: RepairStrategy,
    seed: Option<u64>,
) -> Result<(f64, ScoreBreakdown), RepairError> {
    let components = scoring::components(analysis, mode)?;
    let full_repair = RepairState::from_positions(analysis.mutated_positions().iter().copied());
    let sigma_ideal = scoring::sigma(analysis, &full_repair, mode)?;
    let breakdown = ScoreBreakdown {
        sigma_s: components.sigma,
        sigma_ideal,
        log_ppl: components.log_ppl,
        x_ppl: components.x_ppl,
        mutated_count: analysis.mutation_count(),
    };
    let score = match strategy {
        RepairStrategy::ClosedForm => (components.sigma + sigma_ideal) / 2.0,
        _ => build_trajectory(analysis, mode, strategy, seed)?.repair_score(),
    };
    Ok((score, breakdown))
}

/// CSV export of a trajectory: header `t,sigma`, one row per visited score.
pub fn trajectory_csv(trajectory: &RepairTrajectory) -> String {
    let mut out = String::from("t,sigma\n");
    for (t, score) in trajectory.scores.iter().enumerate() {
        out.push_str(&format!("{t},{score}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PositionRecord;

    const TOL: f64 = 1e-4;

    fn fixture() -> PositionAnalysis {
        crate::test_util::fixture_analysis()
    }

    /// L = 5 with mutations at 2, 3, 5 and distinct gaps.
    fn multi_mutation_analysis() -> PositionAnalysis {
        let rows = [
            // (actual, lp_ref, lp_obs, argmax, argmax_lp)
            (0u32, -0.2f64, -0.3f64, 0u32, -0.2f64),
            (1, -1.5, -0.9, 0, -0.4),
            (2, -0.8, -0.7, 1, -0.6),
            (0, -0.5, -0.5, 0, -0.5),
            (3, -2.0, -1.1, 2, -0.3),
        ];
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, &(actual, lp, lpo, argmax, alp))| PositionRecord {
                index: i + 1,
                actual_token: actual,
                actual_logprob_ref: lp,
                actual_logprob_obs: lpo,
                argmax_token: argmax,
                argmax_logprob_ref: alp,
                cross_entropy_full: None,
            })
            .collect();
        PositionAnalysis::new(records).unwrap()
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
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

    /// Repair score of one explicit order, computed through the conditional
    /// score definition rather than the delta shortcut.
    fn score_by_definition(a: &PositionAnalysis, order: &[usize]) -> f64 {
        let mut state = RepairState::empty();
        let mut sum = scoring::sigma(a, &state, XpplMode::Pointwise).unwrap();
        for &pos in order {
            state.insert(pos);
            sum += scoring::sigma(a, &state, XpplMode::Pointwise).unwrap();
        }
        sum / (order.len() + 1) as f64
    }

    #[test]
    fn fixture_closed_form_score() {
        let r = repair_score_closed(&fixture(), XpplMode::Pointwise).unwrap();
        assert!((r - 1.83792).abs() < TOL);
    }

    #[test]
    fn fixture_delta() {
        let a = fixture();
        let x_ppl = scoring::cross_ppl(&a, XpplMode::Pointwise).unwrap();
        let profile = delta_profile(&a, x_ppl).unwrap();
        assert_eq!(profile.deltas.len(), 1);
        assert_eq!(profile.deltas[0].0, 2);
        assert!((profile.deltas[0].1 - 0.744293).abs() < TOL);
    }

    #[test]
    fn fixture_ideal_sequence_is_all_argmax() {
        let ideal = ideal_sequence(&fixture());
        assert_eq!(ideal.token_ids, vec![0, 0]);
        assert!(ideal.text.is_none());
    }

    #[test]
    fn single_mutation_trajectory_equals_closed_form() {
        let a = fixture();
        for strategy in [
            RepairStrategy::HighToLow,
            RepairStrategy::LowToHigh,
            RepairStrategy::Sequential,
        ] {
            let t = build_trajectory(&a, XpplMode::Pointwise, strategy, None).unwrap();
            assert_eq!(t.permutation, vec![2]);
            assert_eq!(t.scores.len(), 2);
            let closed = repair_score_closed(&a, XpplMode::Pointwise).unwrap();
            assert!((t.repair_score() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn strategies_order_by_delta() {
        let a = multi_mutation_analysis();
        // deltas: pos 2 -> 1.1/scale, pos 3 -> 0.2/scale, pos 5 -> 1.7/scale
        let hl = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::HighToLow, None)
            .unwrap();
        assert_eq!(hl.permutation, vec![3, 2, 5]);
        let lh = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::LowToHigh, None)
            .unwrap();
        assert_eq!(lh.permutation, vec![5, 2, 3]);
        let seq = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::Sequential, None)
            .unwrap();
        assert_eq!(seq.permutation, vec![2, 3, 5]);
    }

    #[test]
    fn trajectory_endpoints_and_monotonicity() {
        let a = multi_mutation_analysis();
        let components = scoring::components(&a, XpplMode::Pointwise).unwrap();
        let full = RepairState::from_positions([2, 3, 5]);
        let sigma_ideal = scoring::sigma(&a, &full, XpplMode::Pointwise).unwrap();
        for strategy in [
            RepairStrategy::HighToLow,
            RepairStrategy::LowToHigh,
            RepairStrategy::Sequential,
        ] {
            let t = build_trajectory(&a, XpplMode::Pointwise, strategy, None).unwrap();
            assert_eq!(t.scores.len(), 4);
            assert_eq!(t.scores[0], components.sigma);
            assert!((t.scores[3] - sigma_ideal).abs() < 1e-12);
            for w in t.scores.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn extremal_strategies_bound_every_permutation() {
        let a = multi_mutation_analysis();
        let hl = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::HighToLow, None)
            .unwrap()
            .repair_score();
        let lh = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::LowToHigh, None)
            .unwrap()
            .repair_score();
        for perm in permutations(&[2, 3, 5]) {
            let r = score_by_definition(&a, &perm);
            assert!(r <= hl + 1e-12);
            assert!(r >= lh - 1e-12);
        }
    }

    #[test]
    fn closed_form_is_permutation_mean() {
        let a = multi_mutation_analysis();
        let perms = permutations(&[2, 3, 5]);
        let mean: f64 =
            perms.iter().map(|p| score_by_definition(&a, p)).sum::<f64>() / perms.len() as f64;
        let closed = repair_score_closed(&a, XpplMode::Pointwise).unwrap();
        assert!((mean - closed).abs() < 1e-12);
    }

    #[test]
    fn delta_total_matches_sigma_gap() {
        let a = multi_mutation_analysis();
        let components = scoring::components(&a, XpplMode::Pointwise).unwrap();
        let profile = delta_profile(&a, components.x_ppl).unwrap();
        let full = RepairState::from_positions([2, 3, 5]);
        let sigma_ideal = scoring::sigma(&a, &full, XpplMode::Pointwise).unwrap();
        assert!((profile.total - (components.sigma - sigma_ideal)).abs() < 1e-12);
        assert!(profile.deltas.iter().all(|&(_, d)| d >= 0.0));
    }

    #[test]
    fn random_order_is_seed_deterministic() {
        let a = multi_mutation_analysis();
        let t1 = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::Random, Some(7))
            .unwrap();
        let t2 = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::Random, Some(7))
            .unwrap();
        assert_eq!(t1, t2);
        // Different seeds may collide on 3 items, but whatever order comes
        // out must score like that permutation scored directly.
        let t3 = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::Random, Some(8))
            .unwrap();
        for t in [&t1, &t3] {
            let r = score_by_definition(&a, &t.permutation);
            assert!((t.repair_score() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn random_requires_seed() {
        let a = fixture();
        assert_eq!(
            build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::Random, None).unwrap_err(),
            RepairError::MissingSeed
        );
    }

    #[test]
    fn closed_form_cannot_be_walked() {
        let a = fixture();
        assert_eq!(
            build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::ClosedForm, None)
                .unwrap_err(),
            RepairError::UnorderedStrategy
        );
    }

    #[test]
    fn random_average_converges_toward_closed_form() {
        let a = multi_mutation_analysis();
        let closed = repair_score_closed(&a, XpplMode::Pointwise).unwrap();
        let avg = repair_score_random_avg(&a, XpplMode::Pointwise, 512, 11).unwrap();
        assert!((avg - closed).abs() < 0.05);
        let again = repair_score_random_avg(&a, XpplMode::Pointwise, 512, 11).unwrap();
        assert_eq!(avg, again);
        assert_eq!(
            repair_score_random_avg(&a, XpplMode::Pointwise, 0, 11).unwrap_err(),
            RepairError::ZeroDraws
        );
    }

    #[test]
    fn unmutated_sequence_repair_score_is_sigma() {
        let records = vec![PositionRecord {
            index: 1,
            actual_token: 4,
            actual_logprob_ref: -0.9,
            actual_logprob_obs: -1.0,
            argmax_token: 4,
            argmax_logprob_ref: -0.9,
            cross_entropy_full: None,
        }];
        let a = PositionAnalysis::new(records).unwrap();
        let components = scoring::components(&a, XpplMode::Pointwise).unwrap();
        let (score, breakdown) =
            score_with_strategy(&a, XpplMode::Pointwise, RepairStrategy::ClosedForm, None)
                .unwrap();
        assert_eq!(score, components.sigma);
        assert_eq!(breakdown.mutated_count, 0);
        let t = build_trajectory(&a, XpplMode::Pointwise, RepairStrategy::Sequential, None)
            .unwrap();
        assert_eq!(t.scores, vec![components.sigma]);
        assert!(t.permutation.is_empty());
    }

    #[test]
    fn breakdown_reports_trajectory_endpoints() {
        let a = multi_mutation_analysis();
        let (score, b) =
            score_with_strategy(&a, XpplMode::Pointwise, RepairStrategy::ClosedForm, None)
                .unwrap();
        assert_eq!(score, (b.sigma_s + b.sigma_ideal) / 2.0);
        assert_eq!(b.mutated_count, 3);
        assert!(b.sigma_ideal <= b.sigma_s);
        assert!((b.sigma_s - b.log_ppl / b.x_ppl).abs() < 1e-15);
    }

    #[test]
    fn csv_export_lists_every_step() {
        let t = RepairTrajectory {
            permutation: vec![3, 1],
            scores: vec![2.5, 2.0, 1.25],
            strategy: RepairStrategy::Sequential,
        };
        assert_eq!(trajectory_csv(&t), "t,sigma\n0,2.5\n1,2\n2,1.25\n");
    }
}
