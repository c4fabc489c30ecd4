//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use betastacy::data::{Observation, SurvivalDataset};
use betastacy::prior::{
    Baseline, CompoundPriorSpec, Group, LogBetaDirecting, Score, ScoreDistribution,
};

/// A mid-borrowing prior with the usual exponential baseline.
pub fn benchmark_spec() -> CompoundPriorSpec {
    CompoundPriorSpec::new(
        LogBetaDirecting::new(1.0, Baseline::exponential(0.3).unwrap()).unwrap(),
        Score::Single(ScoreDistribution::new([0.5, 0.25, 0.25]).unwrap()),
    )
}

/// A reproducible two-sample dataset with roughly 25% censoring.
pub fn benchmark_dataset(n_per_group: usize, seed: u64) -> SurvivalDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n_per_group);
    for g in 1..=2u8 {
        for _ in 0..n_per_group {
            let time = -rng.random::<f64>().ln() / 0.3;
            rows.push(
                Observation::new(
                    time.max(1e-3),
                    rng.random::<f64>() < 0.75,
                    Group::from_label(g).unwrap(),
                )
                .unwrap(),
            );
        }
    }
    SurvivalDataset::new(rows).unwrap()
}
