mod common;

use common::{orthonormal_rows, random, rng};
use fastweights::classify::{
    class_probabilities, default_prior_count, evaluate_full, fit, rows_by_class, run_episodes,
    sample_episode, ClassHead, EpisodeSpec, Method,
};
use fastweights::datasets::{generate_synthetic, SyntheticTaskSpec};
use fastweights::fast_weights::{compile, merge_with_prior, PriorHead};
use fastweights::linalg::SpectralPolicy;
use fastweights::tensor::EmbeddingMatrix;
use proptest::prelude::*;
use rand::Rng;

fn separable(classes: usize, per_class: usize, seed: u64) -> fastweights::datasets::KvDataset {
    generate_synthetic(&SyntheticTaskSpec {
        cluster_spread: 0.1,
        class_separation: 1.0,
        ..SyntheticTaskSpec::new(classes, 16, per_class, seed)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmax_is_scale_invariant(seed in any::<u64>(), c in 2usize..8, scale in 1e-3f64..1e3) {
        let mut g = rng(seed);
        let head = ClassHead::from_values(random(&mut g, c, 5)).unwrap();
        let h: Vec<f64> = (0..5).map(|_| g.random_range(-1.0..1.0)).collect();
        let scaled = head.scaled(scale);
        prop_assert_eq!(head.predict(&h).unwrap(), scaled.predict(&h).unwrap());
        let p = class_probabilities(&h, &scaled).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn episodes_keep_support_and_queries_apart(
        seed in any::<u64>(), way in 2usize..6, shot in 1usize..6, queries in 1usize..6, e in 0usize..1000,
    ) {
        let labels: Vec<u32> = (0..8u32).flat_map(|c| std::iter::repeat_n(c, 12)).collect();
        let head = ClassHead::from_values(EmbeddingMatrix::identity(8)).unwrap();
        let by_class = rows_by_class(&labels, &head).unwrap();
        let spec = EpisodeSpec { way, shot, queries_per_class: queries, episodes: 1, seed };
        let ep = sample_episode(&by_class, &spec, e).unwrap();
        prop_assert!(ep.support.iter().all(|s| !ep.queries.contains(s)));
        let mut classes = ep.classes.clone();
        classes.sort();
        classes.dedup();
        prop_assert_eq!(classes.len(), way);
    }
}

#[test]
fn separable_two_way_is_near_perfect() {
    let ds = separable(2, 400, 1);
    let (labels, head) = (ds.labels().unwrap(), ds.head().unwrap());
    let support: Vec<usize> = (0..ds.len()).step_by(2).collect();
    let queries: Vec<usize> = (1..ds.len()).step_by(2).collect();
    let sup_labels: Vec<u32> = support.iter().map(|&i| labels[i]).collect();
    let q_labels: Vec<u32> = queries.iter().map(|&i| labels[i]).collect();
    let model = fit(
        Method::FastWeights,
        &ds.keys().select_rows(&support),
        &sup_labels,
        head,
        &SpectralPolicy::classification(),
        None,
    )
    .unwrap();
    let report = evaluate_full(&model, &ds.keys().select_rows(&queries), &q_labels).unwrap();
    assert!(report.accuracy >= 0.99, "{}", report.accuracy);
}

#[test]
fn prior_influence_shrinks_as_support_grows() {
    let ds = separable(4, 512, 3);
    let (labels, head) = (ds.labels().unwrap(), ds.head().unwrap());
    let values = head.values_for(labels).unwrap();
    let mut g = rng(9);
    let prior = PriorHead::new(random(&mut g, 16, 16), default_prior_count(4)).unwrap();
    let mut last = f64::INFINITY;
    for n in [32usize, 64, 128, 256, 512, 1024, 2048] {
        let rows: Vec<usize> = (0..n).map(|i| (i * 997) % ds.len()).collect();
        let task = compile(
            &ds.keys().select_rows(&rows),
            &values.select_rows(&rows),
            &SpectralPolicy::exact(),
            None,
        )
        .unwrap();
        let merged = merge_with_prior(&task, &prior).unwrap();
        let gap = merged.weights().sub(task.weights()).unwrap().max_abs();
        assert!(gap <= last + 1e-12, "n={n}: {gap} after {last}");
        last = gap;
    }
}

#[test]
fn class_embeddings_are_arbitrary() {
    // Reassigning an orthonormal set of class embeddings among classes is an
    // orthogonal change of output basis, which leaves every logit unchanged.
    let ds = generate_synthetic(&SyntheticTaskSpec {
        cluster_spread: 0.6,
        ..SyntheticTaskSpec::new(5, 12, 40, 4)
    })
    .unwrap();
    let labels = ds.labels().unwrap();
    let mut g = rng(2);
    let semantic = ClassHead::from_values(EmbeddingMatrix::identity(5)).unwrap();
    let arbitrary = ClassHead::from_values(orthonormal_rows(&mut g, 5, 5)).unwrap();
    let support: Vec<usize> = (0..ds.len()).filter(|i| i % 4 == 0).collect();
    let queries: Vec<usize> = (0..ds.len()).filter(|i| i % 4 != 0).collect();
    let sup_labels: Vec<u32> = support.iter().map(|&i| labels[i]).collect();
    let q_labels: Vec<u32> = queries.iter().map(|&i| labels[i]).collect();
    let accuracy = |head: &ClassHead| {
        let model = fit(
            Method::FastWeights,
            &ds.keys().select_rows(&support),
            &sup_labels,
            head,
            &SpectralPolicy::classification(),
            None,
        )
        .unwrap();
        evaluate_full(&model, &ds.keys().select_rows(&queries), &q_labels)
            .unwrap()
            .accuracy
    };
    let a = accuracy(&semantic);
    let b = accuracy(&arbitrary);
    assert_eq!(a, b);
    assert!(a > 0.5);
}

#[test]
fn episodes_are_deterministic_across_pools() {
    let ds = separable(6, 30, 5);
    let spec = EpisodeSpec {
        way: 4,
        shot: 3,
        queries_per_class: 5,
        episodes: 40,
        seed: 17,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            run_episodes(
                ds.keys(),
                ds.labels().unwrap(),
                ds.head().unwrap(),
                &spec,
                Method::FastWeights,
                &SpectralPolicy::classification(),
                None,
            )
            .unwrap()
        })
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(one.episodes_run, 40);
    let s = {
        let m = one.accuracy;
        (one.per_episode_accuracies
            .iter()
            .map(|a| (a - m).powi(2))
            .sum::<f64>()
            / 39.0)
            .sqrt()
    };
    assert_eq!(one.ci95, 1.96 * s / 40f64.sqrt());
}

#[test]
fn every_method_runs_episodes() {
    let ds = separable(5, 20, 8);
    let spec = EpisodeSpec {
        way: 5,
        shot: 5,
        queries_per_class: 5,
        episodes: 10,
        seed: 1,
    };
    let prior = PriorHead::new(EmbeddingMatrix::zeros(16, 16), 10.0).unwrap();
    for method in [
        Method::FastWeights,
        Method::Knn { k: 5 },
        Method::SoftmaxMemory { temperature: 0.1 },
        Method::CenteredLinear,
        Method::Linear,
    ] {
        for p in [None, Some(&prior)] {
            let r = run_episodes(
                ds.keys(),
                ds.labels().unwrap(),
                ds.head().unwrap(),
                &spec,
                method,
                &SpectralPolicy::classification(),
                p,
            )
            .unwrap();
            assert!((0.0..=1.0).contains(&r.accuracy));
            assert_eq!(r.per_episode_accuracies.len(), 10);
        }
    }
}

#[test]
fn insufficient_class_samples_is_a_dataset_error() {
    let ds = separable(3, 4, 1);
    let spec = EpisodeSpec {
        way: 3,
        shot: 3,
        queries_per_class: 3,
        episodes: 5,
        seed: 0,
    };
    let err = run_episodes(
        ds.keys(),
        ds.labels().unwrap(),
        ds.head().unwrap(),
        &spec,
        Method::FastWeights,
        &SpectralPolicy::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, fastweights::Error::Dataset(_)));
}
