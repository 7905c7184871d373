#![allow(dead_code)]

use fastweights::tensor::{matmul, EmbeddingMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    EmbeddingMatrix::new(rows, cols, data).unwrap()
}

/// Random `rows × cols` matrix of rank at most `rank`.
pub fn random_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> EmbeddingMatrix {
    let a = random(rng, rows, rank);
    let b = random(rng, rank, cols);
    matmul(&a, &b).unwrap()
}

/// `n` orthonormal rows in `R^d` by Gram-Schmidt.
pub fn orthonormal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
    assert!(n <= d);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for r in &rows {
                let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

pub fn rel(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> f64 {
    a.relative_distance(b).unwrap()
}

pub fn residual(k: &EmbeddingMatrix, w: &EmbeddingMatrix, v: &EmbeddingMatrix) -> f64 {
    matmul(k, w).unwrap().sub(v).unwrap().frobenius_norm()
}

pub fn vec_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}
