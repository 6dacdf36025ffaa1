//! Seeded synthetic inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use substate_core::{FeatureVector, ProfileElement, ProfileMatrix, FEATURE_COUNT};

/// One NDJSON trace with `channels` def sites and `per_channel` values each.
pub fn trace_text(seed: u64, channels: u32, per_channel: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    out.push_str("{\"k\":\"entry\",\"m\":\"B.run(Ljava/lang/String;)V\",\"o\":0,\"t\":0,\"s\":\"bench-input\"}\n");
    for _ in 0..per_channel {
        for o in 1..=channels {
            let v: i32 = rng.random_range(-1000..1000);
            out.push_str(&format!("{{\"k\":\"def\",\"m\":\"B.run(Ljava/lang/String;)V\",\"o\":{o},\"t\":0,\"v\":{v}}}\n"));
        }
    }
    out
}

/// A stream of `n` values drawn from a few regimes.
pub fn values(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| match i % 3 {
            0 => rng.random_range(-1e3..1e3),
            1 => f64::from(rng.random_range(0..8)),
            _ => 0.0,
        })
        .collect()
}

/// `n` feature vectors drawn around `centers` random centers.
pub fn feature_vectors(seed: u64, n: usize, centers: usize) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs: Vec<[f64; FEATURE_COUNT]> = (0..centers.max(1))
        .map(|_| std::array::from_fn(|_| rng.random_range(-100.0..100.0)))
        .collect();
    (0..n)
        .map(|_| {
            let c = &cs[rng.random_range(0..cs.len())];
            FeatureVector::from_array(std::array::from_fn(|j| c[j] + rng.random_range(-1.0..1.0)))
        })
        .collect()
}

/// Random binary matrix with `tests` rows and `elements` columns.
pub fn matrix(seed: u64, tests: usize, elements: usize, density: f64) -> ProfileMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..tests).map(|t| format!("t{t}")).collect();
    let cols = (0..elements)
        .map(|e| {
            let mut members: Vec<usize> = (0..tests).filter(|_| rng.random_bool(density)).collect();
            if members.is_empty() {
                members.push(rng.random_range(0..tests));
            }
            ProfileElement {
                id: format!("e{e}"),
                members,
            }
        })
        .collect();
    ProfileMatrix::new(ids, cols, true).expect("generated matrix is well formed")
}
