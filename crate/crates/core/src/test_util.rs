//! Shared fixtures for unit tests.

use crate::math::Matrix;
use crate::rng::SplitMix64;

/// Random causal row-stochastic matrix: row `q` is a distribution over
/// positions `0..=q`, zero above the diagonal.
pub(crate) fn random_causal_map(rng: &mut SplitMix64, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for q in 0..n {
        let mut sum = 0.0f32;
        for k in 0..=q {
            let v = rng.next_f32() + 1e-3;
            m.set(q, k, v);
            sum += v;
        }
        for k in 0..=q {
            m.set(q, k, m.get(q, k) / sum);
        }
    }
    m
}

/// Causal map whose row `q` is exactly uniform over `0..=q`.
pub(crate) fn uniform_causal_map(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for q in 0..n {
        let p = 1.0 / (q + 1) as f32;
        for k in 0..=q {
            m.set(q, k, p);
        }
    }
    m
}
