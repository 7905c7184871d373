mod common;

use common::{random, rng, vec_dist};
use fastweights::fast_weights::compile;
use fastweights::linalg::{filtered_pinv, SpectralPolicy};
use fastweights::oracles::{solve_entropy_reg, solve_entropy_reg_with, EntropyConfig};
use fastweights::retrieval::{
    centered_linear_retrieve, knn_retrieve, pinv_attention, softmax_retrieve, MemoryStore,
};
use fastweights::tensor::{dot, EmbeddingMatrix};
use proptest::prelude::*;
use rand::Rng;

fn store_strategy() -> impl Strategy<Value = (MemoryStore, Vec<f64>)> {
    (1usize..=24, 1usize..=12, any::<u64>()).prop_map(|(n, d, seed)| {
        let mut g = rng(seed);
        let store = MemoryStore::new(random(&mut g, n, d), random(&mut g, n, 3), None).unwrap();
        let q = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        (store, q)
    })
}

fn on_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| (0.0..=1.0).contains(&x)) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_weights_on_simplex((store, q) in store_strategy(), tau in 1e-3f64..10.0) {
        let r = softmax_retrieve(&store, &q, tau).unwrap();
        prop_assert!(on_simplex(&r.weights));
    }

    #[test]
    fn knn_weights_on_simplex((store, q) in store_strategy(), k in 1usize..40) {
        let r = knn_retrieve(&store, &q, k).unwrap();
        prop_assert!(on_simplex(&r.weights));
        prop_assert_eq!(r.weights.iter().filter(|&&w| w != 0.0).count(), k.min(store.len()));
    }

    #[test]
    fn pinv_attention_equals_fast_weights((store, q) in store_strategy(), eps in prop_oneof![Just(0.0), 0.0f64..0.9]) {
        let policy = SpectralPolicy::with_epsilon(eps).unwrap();
        let r = pinv_attention(&store, &q, &policy).unwrap();
        let fw = compile(store.keys(), store.values(), &policy, None).unwrap();
        prop_assert!(vec_dist(&r.output, &fw.apply(&q).unwrap()) < 1e-8);
    }

    #[test]
    fn centered_weights_sum_to_zero((store, q) in store_strategy()) {
        match centered_linear_retrieve(&store, &q) {
            Ok(r) => prop_assert!(r.weights.iter().sum::<f64>().abs() < 1e-10),
            Err(fastweights::Error::DegenerateScores(_)) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}

#[test]
fn centered_weights_go_negative() {
    let mut g = rng(11);
    let store = MemoryStore::new(random(&mut g, 16, 8), random(&mut g, 16, 2), None).unwrap();
    let mut seen_negative = false;
    for _ in 0..50 {
        let q: Vec<f64> = (0..8).map(|_| g.random_range(-1.0..1.0)).collect();
        if let Ok(r) = centered_linear_retrieve(&store, &q) {
            seen_negative |= r.weights.iter().any(|&w| w < 0.0);
        }
    }
    assert!(seen_negative);
}

/// Keys with independent rows and a query reconstructed from an interior
/// simplex point, so `(K†)ᵀq` is that point.
fn feasible_instance(seed: u64) -> (EmbeddingMatrix, Vec<f64>, Vec<f64>) {
    let mut g = rng(seed);
    let (n, d) = (4, 8);
    let k = random(&mut g, n, d).scale(2.0);
    let raw: Vec<f64> = (0..n).map(|_| g.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let a: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let q = k.vecmat(&a).unwrap();
    (k, q, a)
}

#[test]
fn entropy_limit_approaches_pinv_weights() {
    for seed in 0..4u64 {
        let (k, q, a_star) = feasible_instance(seed);
        let pinv = filtered_pinv(&k, &SpectralPolicy::exact())
            .unwrap()
            .vecmat(&q)
            .unwrap();
        assert!(vec_dist(&pinv, &a_star) < 1e-10);
        let mut last = f64::INFINITY;
        for tau in [1.0, 0.3, 0.1, 0.03, 0.01] {
            let a = solve_entropy_reg(&q, &k, tau).unwrap();
            let dist = vec_dist(&a, &pinv);
            assert!(
                dist <= last + 1e-9,
                "seed {seed} τ={tau}: {dist} after {last}"
            );
            last = dist;
        }
        assert!(last <= 1e-2, "seed {seed}: {last}");
    }
}

#[test]
fn entropy_objective_is_monotone() {
    let (k, q, _) = feasible_instance(7);
    for tau in [1.0, 0.05] {
        let sol = solve_entropy_reg_with(&q, &k, tau, &EntropyConfig::default()).unwrap();
        assert!(sol.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn entropy_solution_is_softmax_of_residual_scores() {
    // Stationarity of ‖Kᵀa − q‖² − τH(a) on the simplex:
    // a = softmax(2K(q − Kᵀa)/τ). With orthonormal rows this is not
    // softmax(Kq/τ) because the quadratic term depends on a.
    let mut g = rng(5);
    let k = common::orthonormal_rows(&mut g, 4, 6);
    let q: Vec<f64> = (0..6).map(|_| g.random_range(-1.0..1.0)).collect();
    for tau in [2.0, 0.5, 0.2] {
        let a = solve_entropy_reg(&q, &k, tau).unwrap();
        let fitted = k.vecmat(&a).unwrap();
        let resid: Vec<f64> = q.iter().zip(&fitted).map(|(x, y)| x - y).collect();
        let logits: Vec<f64> = k
            .row_iter()
            .map(|row| 2.0 * dot(row, &resid) / tau)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let fixed: Vec<f64> = e.iter().map(|x| x / z).collect();
        assert!(vec_dist(&a, &fixed) < 1e-6, "τ={tau}");

        let store = MemoryStore::new(k.clone(), EmbeddingMatrix::identity(4), None).unwrap();
        let soft = softmax_retrieve(&store, &q, tau).unwrap().weights;
        assert!(vec_dist(&a, &soft) > 1e-3, "τ={tau}");
    }
}
