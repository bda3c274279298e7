//! Shared inputs for the kernel benchmarks.

use sentiprobe::embedding::{self, EmbeddingVector};

/// Deterministic pseudo-random differences in `[-1, 1)`, roughly balanced.
pub fn diffs(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Labelled synthetic embeddings separable along a seeded axis.
pub fn training_set(n: usize, dimension: usize, seed: u64) -> Vec<(EmbeddingVector, i8)> {
    let axis = embedding::seeded_unit_axis(dimension, seed);
    let words = vec![("good".to_string(), 1i8), ("bad".to_string(), -1i8)];
    (0..n)
        .map(|i| {
            let (w, label) = if i % 2 == 0 { ("good", 1) } else { ("bad", -1) };
            let v = embedding::synthetic_encode(&format!("sample {i} was {w}"), seed, &axis, &Default::default(), &words);
            (EmbeddingVector::new(v).expect("finite"), label)
        })
        .collect()
}
