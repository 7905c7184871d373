//! Seeded property suites comparing the closed-form paths with independent
//! oracles. Each check reports pass/fail with the measured quantity.

use fastweights::fast_weights::{
    compile, interpolate_update, stats_accumulate, stats_solve, woodbury_update, SufficientStats,
};
use fastweights::linalg::{filtered_pinv, svd, SpectralPolicy};
use fastweights::oracles::{dense_inverse, gd_least_squares, solve_entropy_reg, GdConfig};
use fastweights::tensor::{matmul, transpose_matmul, EmbeddingMatrix};
use fastweights::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(
        suite: &'static str,
        name: impl Into<String>,
        passed: bool,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Gradient descent and the closed form agree; the closed form is minimum-norm.
    #[value(name = "theorem-b1")]
    MinimumNorm,
    /// Entropy-regularized retrieval approaches pseudoinverse attention as τ → 0.
    #[value(name = "lemma-b2")]
    EntropyLimit,
    /// Count-weighted interpolation against the joint solution.
    #[value(name = "interpolation-b3")]
    Interpolation,
    /// Exact online updates: sufficient statistics and Woodbury inverses.
    #[value(name = "woodbury")]
    Woodbury,
    #[value(name = "all")]
    All,
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::MinimumNorm => minimum_norm_checks()?,
        Suite::EntropyLimit => entropy_limit_checks()?,
        Suite::Interpolation => interpolation_checks()?,
        Suite::Woodbury => woodbury_checks()?,
        Suite::All => {
            let mut all = minimum_norm_checks()?;
            all.extend(entropy_limit_checks()?);
            all.extend(interpolation_checks()?);
            all.extend(woodbury_checks()?);
            all
        }
    })
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute distance when `b` vanishes.
pub fn relative_frobenius(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> f64 {
    let diff = a.sub(b).expect("same shape").frobenius_norm();
    let scale = b.frobenius_norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    EmbeddingMatrix::new(rows, cols, data).expect("finite entries")
}

/// `rows × rank` matrix with orthonormal columns.
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, rank: usize) -> Result<EmbeddingMatrix> {
    Ok(svd(&uniform(rng, rows, rank))?.u)
}

/// Rank-`rank` matrix `U diag(s) Vᵀ` with singular values in `[1, 2]`.
fn conditioned_rank(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    rank: usize,
) -> Result<EmbeddingMatrix> {
    let u = orthonormal_columns(rng, rows, rank)?;
    let v = orthonormal_columns(rng, cols, rank)?;
    let s: Vec<f64> = (0..rank).map(|_| rng.random_range(1.0..2.0)).collect();
    matmul(
        &matmul(&u, &EmbeddingMatrix::from_diag(&s))?,
        &v.transpose(),
    )
}

/// `I − K†K`.
fn null_projector(keys: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let pinv = filtered_pinv(keys, &SpectralPolicy::exact())?;
    EmbeddingMatrix::identity(keys.cols()).sub(&matmul(&pinv, keys)?)
}

/// One least-squares problem of the minimum-norm suite.
#[derive(Clone, Debug, Serialize)]
pub struct LeastSquaresTrial {
    pub seed: u64,
    pub rows: usize,
    pub d_x: usize,
    pub rank: usize,
    pub gd_steps: usize,
    pub relative_gap: f64,
    pub min_norm_holds: bool,
}

/// Twenty seeded problems over `N ∈ {8, 32, 128}`, `d_x ∈ {4, 16, 64}`;
/// every third is rank deficient.
pub fn least_squares_trials() -> Result<Vec<LeastSquaresTrial>> {
    const ROWS: [usize; 3] = [8, 32, 128];
    const DIMS: [usize; 3] = [4, 16, 64];
    let mut trials = Vec::new();
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let n = ROWS[i as usize % 3];
        let d_x = DIMS[(i as usize / 3) % 3];
        let full = n.min(d_x);
        let rank = if i % 3 == 2 { (full / 2).max(1) } else { full };
        let keys = if rank == full && i % 2 == 0 {
            uniform(&mut rng, n, d_x)
        } else {
            conditioned_rank(&mut rng, n, d_x, rank)?
        };
        let values = uniform(&mut rng, n, 4);

        let closed = compile(&keys, &values, &SpectralPolicy::exact(), None)?;
        let w = closed.weights();
        let initial_gradient = transpose_matmul(&keys, &values)?.frobenius_norm() * 2.0;
        let cfg = GdConfig::for_keys(&keys, 5_000_000, 1e-10 * initial_gradient.max(1e-300));
        let gd = gd_least_squares(&keys, &values, &cfg)?;
        let relative_gap = relative_frobenius(&gd.w, w);

        let null = null_projector(&keys)?;
        let loss = |m: &EmbeddingMatrix| -> Result<f64> {
            Ok(matmul(&keys, m)?.sub(&values)?.frobenius_norm().powi(2))
        };
        let base_loss = loss(w)?;
        let mut min_norm_holds = true;
        for _ in 0..10 {
            let delta = matmul(&null, &uniform(&mut rng, d_x, 4))?;
            let other = w.add(&delta)?;
            let same_loss = (loss(&other)? - base_loss).abs() <= 1e-8 * (1.0 + base_loss);
            min_norm_holds &= same_loss && w.frobenius_norm() <= other.frobenius_norm() + 1e-12;
        }
        trials.push(LeastSquaresTrial {
            seed: 1000 + i,
            rows: n,
            d_x,
            rank,
            gd_steps: gd.steps,
            relative_gap,
            min_norm_holds,
        });
    }
    Ok(trials)
}

fn minimum_norm_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "theorem-b1";
    let trials = least_squares_trials()?;
    let worst = trials.iter().map(|t| t.relative_gap).fold(0.0, f64::max);
    let deficient = trials.iter().filter(|t| t.rank < t.rows.min(t.d_x)).count();
    Ok(vec![
        Check::new(
            SUITE,
            "gradient descent matches closed form (rel ≤ 1e-4)",
            worst <= 1e-4,
            format!(
                "{} problems, {deficient} rank deficient, worst rel gap {worst:.3e}",
                trials.len()
            ),
        ),
        Check::new(
            SUITE,
            "closed form is minimum-norm among loss-equivalent solutions",
            trials.iter().all(|t| t.min_norm_holds),
            format!("{} null-space perturbations per problem", 10),
        ),
    ])
}

/// Distances `‖a_τ − (K†)ᵀq‖₂` over the temperature ladder for one instance.
#[derive(Clone, Debug, Serialize)]
pub struct EntropyTrial {
    pub seed: u64,
    pub temperatures: Vec<f64>,
    pub distances: Vec<f64>,
}

pub const TEMPERATURE_LADDER: [f64; 5] = [1.0, 0.3, 0.1, 0.03, 0.01];

/// Ten instances with independent key rows and `q = Kᵀa*` for an interior
/// simplex point `a*`, so the pseudoinverse weights are feasible.
pub fn entropy_trials() -> Result<Vec<EntropyTrial>> {
    let mut trials = Vec::new();
    for i in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + i);
        let n = 3 + (i as usize % 4);
        let d = 2 * n + 2;
        let keys = uniform(&mut rng, n, d).scale(2.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let target: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let query = keys.vecmat(&target)?;
        let pinv_weights = filtered_pinv(&keys, &SpectralPolicy::exact())?.vecmat(&query)?;
        let mut distances = Vec::new();
        for &tau in &TEMPERATURE_LADDER {
            let a = solve_entropy_reg(&query, &keys, tau)?;
            let d2: f64 = a
                .iter()
                .zip(&pinv_weights)
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            distances.push(d2.sqrt());
        }
        trials.push(EntropyTrial {
            seed: 2000 + i,
            temperatures: TEMPERATURE_LADDER.to_vec(),
            distances,
        });
    }
    Ok(trials)
}

fn entropy_limit_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "lemma-b2";
    let trials = entropy_trials()?;
    let monotone = trials
        .iter()
        .all(|t| t.distances.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    let worst_final = trials
        .iter()
        .map(|t| *t.distances.last().expect("non-empty ladder"))
        .fold(0.0, f64::max);
    Ok(vec![
        Check::new(
            SUITE,
            "distance to pseudoinverse weights is non-increasing as τ falls",
            monotone,
            format!("{} instances, τ ∈ {:?}", trials.len(), TEMPERATURE_LADDER),
        ),
        Check::new(
            SUITE,
            "distance at τ = 0.01 is at most 1e-2",
            worst_final <= 1e-2,
            format!("worst distance {worst_final:.3e}"),
        ),
    ])
}

/// Measured gaps between interpolation and the joint solution.
#[derive(Clone, Debug, Serialize)]
pub struct InterpolationReport {
    /// Key rows on orthogonal coordinate blocks, count-weighted average.
    pub orthogonal_average_gap: f64,
    /// Same batches, sum of per-batch solutions.
    pub orthogonal_sum_gap: f64,
    /// Gram matrices proportional to the identity with equal per-pair scale.
    pub isotropic_average_gap: f64,
    /// Generic overlapping batches.
    pub generic_average_gap: f64,
}

fn joint_and_parts(
    ka: &EmbeddingMatrix,
    va: &EmbeddingMatrix,
    kb: &EmbeddingMatrix,
    vb: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix, EmbeddingMatrix)> {
    let exact = SpectralPolicy::exact();
    let wa = compile(ka, va, &exact, None)?;
    let wb = compile(kb, vb, &exact, None)?;
    let joint = compile(&ka.vstack(kb)?, &va.vstack(vb)?, &exact, None)?;
    let average = interpolate_update(&wa, &wb, 1.0)?;
    let sum = wa.weights().add(wb.weights())?;
    Ok((joint.weights().clone(), average.weights().clone(), sum))
}

/// Largest gaps over five seeded instances of each construction.
pub fn interpolation_report() -> Result<InterpolationReport> {
    let mut report = InterpolationReport {
        orthogonal_average_gap: 0.0,
        orthogonal_sum_gap: 0.0,
        isotropic_average_gap: 0.0,
        generic_average_gap: f64::INFINITY,
    };
    for i in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + i);
        let (d, split) = (8, 3);

        // orthogonal coordinate blocks
        let mut ka = uniform(&mut rng, 6, d);
        let mut kb = uniform(&mut rng, 9, d);
        ka = mask_columns(&ka, |j| j < split);
        kb = mask_columns(&kb, |j| j >= split);
        let va = uniform(&mut rng, 6, 3);
        let vb = uniform(&mut rng, 9, 3);
        let (joint, average, sum) = joint_and_parts(&ka, &va, &kb, &vb)?;
        report.orthogonal_average_gap = report
            .orthogonal_average_gap
            .max(relative_frobenius(&average, &joint));
        report.orthogonal_sum_gap = report
            .orthogonal_sum_gap
            .max(relative_frobenius(&sum, &joint));

        // stacked orthonormal frames: KᵀK = copies · I
        let frames = |rng: &mut ChaCha8Rng, copies: usize| -> Result<EmbeddingMatrix> {
            let basis = orthonormal_columns(rng, d, d)?;
            let mut k = basis.clone();
            for _ in 1..copies {
                k = k.vstack(&basis)?;
            }
            Ok(k)
        };
        let ka = frames(&mut rng, 2)?;
        let kb = frames(&mut rng, 3)?;
        let va = uniform(&mut rng, ka.rows(), 3);
        let vb = uniform(&mut rng, kb.rows(), 3);
        let (joint, average, _) = joint_and_parts(&ka, &va, &kb, &vb)?;
        report.isotropic_average_gap = report
            .isotropic_average_gap
            .max(relative_frobenius(&average, &joint));

        // generic overlapping batches
        let ka = uniform(&mut rng, 12, d);
        let kb = uniform(&mut rng, 12, d);
        let va = uniform(&mut rng, 12, 3);
        let vb = uniform(&mut rng, 12, 3);
        let (joint, average, _) = joint_and_parts(&ka, &va, &kb, &vb)?;
        report.generic_average_gap = report
            .generic_average_gap
            .min(relative_frobenius(&average, &joint));
    }
    Ok(report)
}

fn mask_columns(m: &EmbeddingMatrix, keep: impl Fn(usize) -> bool) -> EmbeddingMatrix {
    let cols = m.cols();
    let data = m
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &x)| if keep(i % cols) { x } else { 0.0 })
        .collect();
    EmbeddingMatrix::new(m.rows(), cols, data).expect("finite entries")
}

fn interpolation_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "interpolation-b3";
    let r = interpolation_report()?;
    Ok(vec![
        Check::new(
            SUITE,
            "orthogonal-subspace batches: interpolation equals joint solution (rel ≤ 1e-8)",
            r.orthogonal_average_gap <= 1e-8,
            format!("worst rel gap {:.3e}", r.orthogonal_average_gap),
        ),
        Check::new(
            SUITE,
            "generic batches: interpolation differs from joint solution",
            r.generic_average_gap > 0.0,
            format!("smallest rel gap {:.3e}", r.generic_average_gap),
        ),
        Check::new(
            SUITE,
            "orthogonal-subspace batches: per-batch solutions sum to joint solution (rel ≤ 1e-8)",
            r.orthogonal_sum_gap <= 1e-8,
            format!("worst rel gap {:.3e}", r.orthogonal_sum_gap),
        ),
        Check::new(
            SUITE,
            "isotropic batches: interpolation equals joint solution (rel ≤ 1e-8)",
            r.isotropic_average_gap <= 1e-8,
            format!("worst rel gap {:.3e}", r.isotropic_average_gap),
        ),
    ])
}

/// Worst relative gaps of the exact online paths.
#[derive(Clone, Debug, Serialize)]
pub struct OnlineReport {
    pub splits_tested: usize,
    pub statistics_gap: f64,
    pub woodbury_gap: f64,
}

/// Every split of a dataset into 1 to 8 batches, plus Woodbury inverse
/// updates checked against a dense Cholesky inverse.
pub fn online_report() -> Result<OnlineReport> {
    let exact = SpectralPolicy::exact();
    let mut statistics_gap = 0.0f64;
    let mut splits_tested = 0;
    for i in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + i);
        let d_x = 3 + 2 * i as usize;
        let n = 4 * d_x + 8;
        let keys = uniform(&mut rng, n, d_x);
        let values = uniform(&mut rng, n, 3);
        let reference = compile(&keys, &values, &exact, None)?;
        for batches in 1..=8usize {
            let mut cuts: Vec<usize> = (1..batches).map(|_| rng.random_range(0..=n)).collect();
            cuts.push(0);
            cuts.push(n);
            cuts.sort_unstable();
            let mut stats = SufficientStats::zeros(d_x, 3);
            for w in cuts.windows(2) {
                let rows: Vec<usize> = (w[0]..w[1]).collect();
                stats =
                    stats_accumulate(&stats, &keys.select_rows(&rows), &values.select_rows(&rows))?;
            }
            let online = stats_solve(&stats, &exact)?;
            statistics_gap =
                statistics_gap.max(relative_frobenius(online.weights(), reference.weights()));
            splits_tested += 1;
        }
    }

    let mut woodbury_gap = 0.0f64;
    for i in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i);
        let d = 2 + i as usize;
        let base = uniform(&mut rng, 3 * d, d);
        let s = transpose_matmul(&base, &base)?;
        let s_inv = dense_inverse(&s)?;
        let batch = uniform(&mut rng, 1 + i as usize % 4, d);
        let updated = woodbury_update(&s_inv, &batch)?;
        let direct = dense_inverse(&s.add(&transpose_matmul(&batch, &batch)?)?)?;
        woodbury_gap = woodbury_gap.max(relative_frobenius(&updated, &direct));
    }
    Ok(OnlineReport {
        splits_tested,
        statistics_gap,
        woodbury_gap,
    })
}

fn woodbury_checks() -> Result<Vec<Check>> {
    const SUITE: &str = "woodbury";
    let r = online_report()?;
    Ok(vec![
        Check::new(
            SUITE,
            "sufficient statistics reproduce batch compile over 1-8 batches (rel ≤ 1e-8)",
            r.statistics_gap <= 1e-8,
            format!(
                "{} splits, worst rel gap {:.3e}",
                r.splits_tested, r.statistics_gap
            ),
        ),
        Check::new(
            SUITE,
            "Woodbury update matches dense inverse (rel ≤ 1e-8)",
            r.woodbury_gap <= 1e-8,
            format!("worst rel gap {:.3e}", r.woodbury_gap),
        ),
    ])
}
