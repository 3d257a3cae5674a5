//! Order-fixed reductions.
//!
//! Sums are evaluated as a pairwise tree over fixed-size blocks so the result
//! depends only on the input, never on how many threads computed the blocks.

use rayon::prelude::*;

const BLOCK: usize = 1024;

fn pairwise(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise(&values[..mid]) + pairwise(&values[mid..])
}

/// Deterministic sum of `values`.
pub fn sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        return pairwise(values);
    }
    let partial: Vec<f64> = values.par_chunks(BLOCK).map(pairwise).collect();
    pairwise(&partial)
}

/// Deterministic dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let blocks = |(x, y): (&[f64], &[f64])| {
        let prods: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        pairwise(&prods)
    };
    if a.len() <= BLOCK {
        return blocks((a, b));
    }
    let partial: Vec<f64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(blocks)
        .collect();
    pairwise(&partial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_naive_within_rounding() {
        let v: Vec<f64> = (0..10_000).map(|i| ((i * 37) % 101) as f64 * 0.25).collect();
        let naive: f64 = v.iter().sum();
        assert!((sum(&v) - naive).abs() < 1e-9 * naive.abs());
    }

    #[test]
    fn sum_is_thread_count_independent() {
        let v: Vec<f64> = (0..50_000).map(|i| (i as f64).sin()).collect();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sum(&v));
        let multi = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| sum(&v));
        assert_eq!(single.to_bits(), multi.to_bits());
    }
}
