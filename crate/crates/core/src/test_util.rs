//! Fixtures shared by the unit tests of several modules.

use crate::providers::table::TableProvider;
use crate::providers::Provider;
use crate::types::{PositionAnalysis, TokenSequence};

/// Two-position analysis over vocabulary {A, B} with the sequence "AB".
/// Reference rows are [0.75, 0.25] and [0.6, 0.4]; observer rows are
/// [0.7, 0.3] and [0.5, 0.5]. Position 2 is the only mutation.
pub(crate) fn fixture_analysis() -> PositionAnalysis {
    let provider = TableProvider::new(
        vec![vec![0.75, 0.25], vec![0.6, 0.4]],
        vec![vec![0.7, 0.3], vec![0.5, 0.5]],
    )
    .unwrap();
    provider.analyze(&TokenSequence::new(vec![0, 1]), true).unwrap()
}
