mod common;

use common::{orthonormal_rows, random, random_rank, rel, residual, rng};
use fastweights::fast_weights::{
    compile, interpolate_update, stats_accumulate, stats_solve, FastWeights, SufficientStats,
};
use fastweights::linalg::{filtered_pinv, SpectralPolicy};
use fastweights::oracles::{gd_least_squares, gd_least_squares_observed, GdConfig};
use fastweights::tensor::{matmul, EmbeddingMatrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn exact() -> SpectralPolicy {
    SpectralPolicy::exact()
}

/// `I − K†K`, the projector onto the null space of `K`.
fn null_projector(k: &EmbeddingMatrix) -> EmbeddingMatrix {
    let p = filtered_pinv(k, &exact()).unwrap();
    EmbeddingMatrix::identity(k.cols())
        .sub(&matmul(&p, k).unwrap())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn compile_is_minimum_norm(seed in any::<u64>(), n in 1usize..=32, d_x in 1usize..=16, d_y in 1usize..=4) {
        let mut g = rng(seed);
        let rank = g.random_range(1..=n.min(d_x));
        let k = random_rank(&mut g, n, d_x, rank);
        let v = random(&mut g, n, d_y);
        let w = compile(&k, &v, &exact(), None).unwrap().weights().clone();
        let base = residual(&k, &w, &v);
        for _ in 0..100 {
            let delta = random(&mut g, d_x, d_y).scale(1e-3);
            prop_assert!(base <= residual(&k, &w.add(&delta).unwrap(), &v) + 1e-8);
        }
        let null = null_projector(&k);
        for _ in 0..10 {
            let delta = matmul(&null, &random(&mut g, d_x, d_y)).unwrap();
            let moved = w.add(&delta).unwrap();
            prop_assert!((residual(&k, &moved, &v) - base).abs() <= 1e-8 * (1.0 + base));
            prop_assert!(w.frobenius_norm() <= moved.frobenius_norm() + 1e-12);
        }
    }

    #[test]
    fn compile_is_permutation_invariant(seed in any::<u64>(), n in 1usize..=24, d_x in 1usize..=12) {
        let mut g = rng(seed);
        let k = random(&mut g, n, d_x);
        let v = random(&mut g, n, 3);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut g);
        for policy in [exact(), SpectralPolicy::default()] {
            let a = compile(&k, &v, &policy, None).unwrap();
            let b = compile(&k.select_rows(&order), &v.select_rows(&order), &policy, None).unwrap();
            prop_assert!(rel(b.weights(), a.weights()) < 1e-10);
            prop_assert_eq!(a.count(), b.count());
        }
    }

    #[test]
    fn exact_path_matches_batch_compile(seed in any::<u64>(), batches in 1usize..=8, d_x in 1usize..=12) {
        let mut g = rng(seed);
        let n = d_x + 2 * batches + g.random_range(0..16);
        let k = random(&mut g, n, d_x);
        let v = random(&mut g, n, 3);
        let mut cuts: Vec<usize> = (0..batches - 1).map(|_| g.random_range(0..=n)).collect();
        cuts.push(0);
        cuts.push(n);
        cuts.sort();
        let mut stats = SufficientStats::zeros(d_x, 3);
        for w in cuts.windows(2) {
            let rows: Vec<usize> = (w[0]..w[1]).collect();
            stats = stats_accumulate(&stats, &k.select_rows(&rows), &v.select_rows(&rows)).unwrap();
        }
        let online = stats_solve(&stats, &exact()).unwrap();
        let batch = compile(&k, &v, &exact(), None).unwrap();
        prop_assert!(rel(online.weights(), batch.weights()) < 1e-8);
        prop_assert_eq!(online.count(), n as f64);
    }

    #[test]
    fn interpolation_is_associative(seed in any::<u64>(), batches in 1usize..=6) {
        let mut g = rng(seed);
        let parts: Vec<FastWeights> = (0..batches)
            .map(|_| FastWeights::new(random(&mut g, 4, 2), g.random_range(1..50) as f64).unwrap())
            .collect();
        let mut folded = FastWeights::zeros(4, 2);
        for p in &parts {
            folded = interpolate_update(&folded, p, 1.0).unwrap();
        }
        let total: f64 = parts.iter().map(|p| p.count()).sum();
        let mut avg = EmbeddingMatrix::zeros(4, 2);
        for p in &parts {
            avg = avg.add(&p.weights().scale(p.count() / total)).unwrap();
        }
        prop_assert!(rel(folded.weights(), &avg) < 1e-12);
        prop_assert_eq!(folded.count(), total);
    }
}

#[test]
fn gd_converges_to_compile_within_row_space() {
    for seed in 0..8u64 {
        let mut g = rng(seed);
        let n = g.random_range(2..=32);
        let d_x = g.random_range(1..=12);
        let rank = g.random_range(1..=n.min(d_x));
        let k = random_rank(&mut g, n, d_x, rank);
        let v = random(&mut g, n, 3);
        let null = null_projector(&k);
        let cfg = GdConfig::for_keys(&k, 2_000_000, 1e-11);
        let mut worst_null = 0.0f64;
        let gd = gd_least_squares_observed(&k, &v, &cfg, |_, w| {
            worst_null = worst_null.max(matmul(&null, w).unwrap().frobenius_norm());
        })
        .unwrap();
        assert!(gd.converged, "seed {seed}: {} steps", gd.steps);
        let w = compile(&k, &v, &exact(), None).unwrap();
        assert!(rel(&gd.w, w.weights()) < 1e-4, "seed {seed}");
        assert!(
            worst_null <= 1e-10,
            "seed {seed}: null component {worst_null:e}"
        );
        let vv = v.frobenius_norm().powi(2);
        let closed_loss = residual(&k, w.weights(), &v).powi(2);
        assert!((gd.loss - closed_loss).abs() / vv <= 1e-8, "seed {seed}");
    }
}

#[test]
fn gd_rejects_unstable_step() {
    let mut g = rng(3);
    let k = random(&mut g, 6, 3);
    let v = random(&mut g, 6, 1);
    let mut cfg = GdConfig::for_keys(&k, 100, 1e-8);
    cfg.learning_rate *= 10.0;
    assert!(gd_least_squares(&k, &v, &cfg).is_err());
}

/// Keys whose Gram matrix is `m·I`: `m` stacked copies of an orthonormal basis.
fn isotropic_batch(g: &mut rand_chacha::ChaCha8Rng, copies: usize, d: usize) -> EmbeddingMatrix {
    let basis = orthonormal_rows(g, d, d);
    let mut k = basis.clone();
    for _ in 1..copies {
        k = k.vstack(&basis).unwrap();
    }
    k
}

#[test]
fn interpolation_is_exact_for_isotropic_batches() {
    // Grams proportional to the identity with the same per-pair scale: the
    // count-weighted interpolation is the joint solution.
    for seed in 0..10u64 {
        let mut g = rng(seed);
        let d = 5;
        let ka = isotropic_batch(&mut g, 2, d);
        let kb = isotropic_batch(&mut g, 5, d);
        let va = random(&mut g, ka.rows(), 3);
        let vb = random(&mut g, kb.rows(), 3);
        let wa = compile(&ka, &va, &exact(), None).unwrap();
        let wb = compile(&kb, &vb, &exact(), None).unwrap();
        let merged = interpolate_update(&wa, &wb, 1.0).unwrap();
        let joint = compile(
            &ka.vstack(&kb).unwrap(),
            &va.vstack(&vb).unwrap(),
            &exact(),
            None,
        )
        .unwrap();
        assert!(
            rel(merged.weights(), joint.weights()) < 1e-10,
            "seed {seed}"
        );
    }
}

#[test]
fn orthogonal_subspaces_add_rather_than_average() {
    // Batches on orthogonal coordinate blocks: the joint solution is the sum
    // of the per-batch solutions, which the count-weighted average is not.
    for seed in 0..10u64 {
        let mut g = rng(seed);
        let d = 6;
        let mut ka = random(&mut g, 7, d);
        let mut kb = random(&mut g, 4, d);
        for i in 0..7 {
            for j in 3..d {
                ka = with_entry(&ka, i, j, 0.0);
            }
        }
        for i in 0..4 {
            for j in 0..3 {
                kb = with_entry(&kb, i, j, 0.0);
            }
        }
        let va = random(&mut g, 7, 2);
        let vb = random(&mut g, 4, 2);
        let wa = compile(&ka, &va, &exact(), None).unwrap();
        let wb = compile(&kb, &vb, &exact(), None).unwrap();
        let joint = compile(
            &ka.vstack(&kb).unwrap(),
            &va.vstack(&vb).unwrap(),
            &exact(),
            None,
        )
        .unwrap();
        let sum = wa.weights().add(wb.weights()).unwrap();
        assert!(rel(&sum, joint.weights()) < 1e-10, "seed {seed}");
        let avg = interpolate_update(&wa, &wb, 1.0).unwrap();
        assert!(rel(avg.weights(), joint.weights()) > 1e-2, "seed {seed}");
    }
}

fn with_entry(m: &EmbeddingMatrix, i: usize, j: usize, x: f64) -> EmbeddingMatrix {
    let mut data = m.as_slice().to_vec();
    data[i * m.cols() + j] = x;
    EmbeddingMatrix::new(m.rows(), m.cols(), data).unwrap()
}
