//! Independent reference solvers used to validate the closed-form path.
//!
//! Nothing in here calls the SVD kernels: step sizes come from power
//! iteration and linear systems from a local Cholesky factorization, so the
//! oracles stay independent of the code they check.

use crate::error::{Error, Result};
use crate::tensor::{dot, matmul, transpose_matmul, EmbeddingMatrix};

/// Full-batch gradient descent settings for `‖KW − V‖²_F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub grad_norm_tolerance: f64,
}

impl GdConfig {
    /// Step size `0.9 / λ_max(KᵀK)`.
    pub fn for_keys(keys: &EmbeddingMatrix, max_steps: usize, grad_norm_tolerance: f64) -> Self {
        let lambda = gram_spectral_radius(keys);
        let learning_rate = if lambda > 0.0 { 0.9 / lambda } else { 1.0 };
        Self {
            learning_rate,
            max_steps,
            grad_norm_tolerance,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GdOutcome {
    pub w: EmbeddingMatrix,
    pub steps: usize,
    pub converged: bool,
    pub loss: f64,
}

/// Largest eigenvalue of `KᵀK` by power iteration.
pub fn gram_spectral_radius(keys: &EmbeddingMatrix) -> f64 {
    let d = keys.cols();
    if keys.rows() == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment
    let mut x: Vec<f64> = (0..d)
        .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64)
        .collect();
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let kx = match keys.matvec(&x) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        let y = keys.vecmat(&kx).unwrap_or_default();
        let norm = dot(&y, &y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let xnorm = dot(&x, &x).sqrt();
        let next = norm / xnorm;
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - lambda).abs() <= 1e-13 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

pub fn gd_least_squares(
    keys: &EmbeddingMatrix,
    values: &EmbeddingMatrix,
    cfg: &GdConfig,
) -> Result<GdOutcome> {
    gd_least_squares_observed(keys, values, cfg, |_, _| {})
}

/// Gradient descent from `W = 0` with gradient `2Kᵀ(KW − V)`; `observe` sees
/// every iterate.
///
/// Stops once the gradient norm falls to the tolerance or after
/// `max_steps`. Ten consecutive loss increases are reported as divergence.
pub fn gd_least_squares_observed(
    keys: &EmbeddingMatrix,
    values: &EmbeddingMatrix,
    cfg: &GdConfig,
    mut observe: impl FnMut(usize, &EmbeddingMatrix),
) -> Result<GdOutcome> {
    if keys.rows() != values.rows() {
        return Err(Error::shape(format!(
            "{} keys but {} values",
            keys.rows(),
            values.rows()
        )));
    }
    if !(cfg.learning_rate > 0.0 && cfg.grad_norm_tolerance > 0.0) {
        return Err(Error::InvalidInput(
            "learning rate and tolerance must be positive".into(),
        ));
    }
    // The Hessian is 2KᵀK, so plain GD is stable iff lr·λ_max < 1.
    let lambda = gram_spectral_radius(keys);
    if cfg.learning_rate * lambda >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "learning rate {} is unstable for λ_max(KᵀK) = {lambda}",
            cfg.learning_rate
        )));
    }

    let mut w = EmbeddingMatrix::zeros(keys.cols(), values.cols());
    let mut prev_loss = f64::INFINITY;
    let mut rising = 0;
    let mut loss = 0.0;
    for step in 0..=cfg.max_steps {
        let residual = matmul(keys, &w)?.sub(values)?;
        loss = residual.as_slice().iter().map(|x| x * x).sum();
        if loss > prev_loss {
            rising += 1;
            if rising >= 10 {
                return Err(Error::Divergence { step, loss });
            }
        } else {
            rising = 0;
        }
        prev_loss = loss;

        let grad = transpose_matmul(keys, &residual)?.scale(2.0);
        if grad.frobenius_norm() <= cfg.grad_norm_tolerance {
            return Ok(GdOutcome {
                w,
                steps: step,
                converged: true,
                loss,
            });
        }
        if step == cfg.max_steps {
            break;
        }
        w = w.lin_comb(1.0, &grad, -cfg.learning_rate)?;
        observe(step + 1, &w);
    }
    Ok(GdOutcome {
        w,
        steps: cfg.max_steps,
        converged: false,
        loss,
    })
}

/// Settings for the simplex-constrained mirror-descent solver.
#[derive(Clone, Copy, Debug)]
pub struct EntropyConfig {
    pub max_iters: usize,
    pub tolerance: f64,
    /// Stationarity accepted when no step decreases the objective at working
    /// precision.
    pub stall_tolerance: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            max_iters: 2_000_000,
            tolerance: 1e-8,
            stall_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EntropySolution {
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Objective value after each accepted step, starting from the uniform point.
    pub objective_trace: Vec<f64>,
}

/// `argmin_a ‖Kᵀa − q‖² − τ H(a)` over the probability simplex.
pub fn solve_entropy_reg(
    query: &[f64],
    keys: &EmbeddingMatrix,
    temperature: f64,
) -> Result<Vec<f64>> {
    solve_entropy_reg_with(query, keys, temperature, &EntropyConfig::default()).map(|s| s.weights)
}

/// Exponentiated-gradient descent with a relative-smoothness line search.
///
/// A step `a' ∝ a·exp(−η g)` is accepted when
/// `f(a') ≤ f(a) + gᵀ(a' − a) + KL(a' ‖ a)/η`, which makes the objective
/// non-increasing. Stops when `Σ a_i |g_i − aᵀg| ≤ tolerance·(1 + τ)`; the
/// gradient carries a `τ(ln a + 1)` term, so the scale grows with τ. When no
/// step can move the iterate at working precision, the current point is
/// returned if it meets `stall_tolerance` instead.
pub fn solve_entropy_reg_with(
    query: &[f64],
    keys: &EmbeddingMatrix,
    temperature: f64,
    cfg: &EntropyConfig,
) -> Result<EntropySolution> {
    let n = keys.rows();
    if n == 0 {
        return Err(Error::EmptyMemory);
    }
    if query.len() != keys.cols() {
        return Err(Error::shape(format!(
            "query of length {} against {}-dimensional keys",
            query.len(),
            keys.cols()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature {temperature} must be positive"
        )));
    }
    if n == 1 {
        return Ok(EntropySolution {
            weights: vec![1.0],
            iterations: 0,
            objective_trace: Vec::new(),
        });
    }

    let objective = |a: &[f64]| -> f64 {
        let recon = keys.vecmat(a).expect("dimension checked");
        let fit: f64 = recon.iter().zip(query).map(|(r, q)| (r - q).powi(2)).sum();
        let neg_entropy: f64 = a.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum();
        fit + temperature * neg_entropy
    };
    let gradient = |a: &[f64]| -> Vec<f64> {
        let recon = keys.vecmat(a).expect("dimension checked");
        let resid: Vec<f64> = recon.iter().zip(query).map(|(r, q)| r - q).collect();
        keys.row_iter()
            .zip(a)
            .map(|(row, &ai)| 2.0 * dot(row, &resid) + temperature * (ai.ln() + 1.0))
            .collect()
    };

    // f(b) − f(a) from differences, so decreases far below the rounding of
    // f itself remain visible to the line search.
    let objective_change = |a: &[f64], b: &[f64]| -> f64 {
        let ra = keys.vecmat(a).expect("dimension checked");
        let rb = keys.vecmat(b).expect("dimension checked");
        let fit: f64 = ra
            .iter()
            .zip(&rb)
            .zip(query)
            .map(|((x, y), q)| (y - x) * (y + x - 2.0 * q))
            .sum();
        let entropy: f64 = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (y - x) * y.ln() + x * ((y - x) / x).ln_1p())
            .sum();
        fit + temperature * entropy
    };

    let mut a = vec![1.0 / n as f64; n];
    let mut f = objective(&a);
    let mut trace = vec![f];
    let mut eta = 1.0;
    for iter in 0..cfg.max_iters {
        let g = gradient(&a);
        let gbar = dot(&a, &g);
        let stationarity: f64 = a
            .iter()
            .zip(&g)
            .map(|(ai, gi)| ai * (gi - gbar).abs())
            .sum();
        if stationarity <= cfg.tolerance * (1.0 + temperature) {
            return Ok(EntropySolution {
                weights: a,
                iterations: iter,
                objective_trace: trace,
            });
        }
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);

        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = a
                .iter()
                .zip(&g)
                .map(|(ai, gi)| ai * (-eta * (gi - gmin)).exp())
                .collect();
            let total: f64 = cand.iter().sum();
            cand.iter_mut().for_each(|x| *x /= total);
            if cand.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
                eta *= 0.5;
                continue;
            }
            let delta = objective_change(&a, &cand);
            if cand == a {
                break;
            }
            let linear: f64 = g
                .iter()
                .zip(cand.iter().zip(&a))
                .map(|(gi, (c, ai))| (gi - gbar) * (c - ai))
                .sum();
            let kl: f64 = cand
                .iter()
                .zip(&a)
                .map(|(c, ai)| c * ((c - ai) / ai).ln_1p())
                .sum();
            if delta <= linear + kl / eta && delta <= 0.0 {
                f = objective(&cand);
                a = cand;
                trace.push(f);
                accepted = true;
                eta = (eta * 1.5).min(1e6);
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            if stationarity <= cfg.stall_tolerance * (1.0 + temperature) {
                return Ok(EntropySolution {
                    weights: a,
                    iterations: iter,
                    objective_trace: trace,
                });
            }
            return Err(Error::NumericalFailure(format!(
                "mirror descent line search stalled at iteration {iter} (stationarity {stationarity:e})"
            )));
        }
    }
    Err(Error::NumericalFailure(format!(
        "mirror descent did not reach tolerance {} in {} iterations",
        cfg.tolerance, cfg.max_iters
    )))
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
pub fn dense_solve(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::shape(format!(
            "A is {}x{}, B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    // Lower factor, row-major, computed in place.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NumericalFailure(format!(
                        "matrix is not positive definite (pivot {i} = {s:e})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let p = b.cols();
    let mut x = b.as_slice().to_vec();
    for c in 0..p {
        for i in 0..n {
            let mut s = x[i * p + c];
            for k in 0..i {
                s -= l[i * n + k] * x[k * p + c];
            }
            x[i * p + c] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i * p + c];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k * p + c];
            }
            x[i * p + c] = s / l[i * n + i];
        }
    }
    EmbeddingMatrix::new(n, p, x)
}

/// `A⁻¹` for symmetric positive definite `A`.
pub fn dense_inverse(a: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    dense_solve(a, &EmbeddingMatrix::identity(a.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        EmbeddingMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn gd_identity() {
        let i3 = EmbeddingMatrix::identity(3);
        let cfg = GdConfig::for_keys(&i3, 10_000, 1e-12);
        let out = gd_least_squares(&i3, &i3, &cfg).unwrap();
        assert!(out.converged);
        assert!(out.w.sub(&i3).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn gd_single_pair_stays_min_norm() {
        let k = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let v = EmbeddingMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let cfg = GdConfig::for_keys(&k, 100_000, 1e-10);
        let out = gd_least_squares(&k, &v, &cfg).unwrap();
        assert!(out.converged);
        assert!((out.w.get(0, 1) - 1.0).abs() < 1e-10);
        assert_eq!(out.w.row(1), &[0.0, 0.0]);
        assert!(out.w.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn gd_rejects_unstable_step() {
        let k = EmbeddingMatrix::identity(2);
        let cfg = GdConfig {
            learning_rate: 1.5,
            max_steps: 100,
            grad_norm_tolerance: 1e-8,
        };
        assert!(matches!(
            gd_least_squares(&k, &k, &cfg),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn gd_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random(10, 4, &mut rng);
        let v = random(10, 2, &mut rng);
        let cfg = GdConfig::for_keys(&k, 3, 1e-14);
        let out = gd_least_squares(&k, &v, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.steps, 3);
    }

    #[test]
    fn power_iteration_matches_diagonal() {
        let k = EmbeddingMatrix::from_diag(&[3.0, 1.0, 0.5]);
        assert!((gram_spectral_radius(&k) - 9.0).abs() < 1e-9);
        assert_eq!(gram_spectral_radius(&EmbeddingMatrix::zeros(3, 2)), 0.0);
    }

    #[test]
    fn entropy_reg_edge_cases() {
        let one = EmbeddingMatrix::from_rows(&[vec![0.3, 0.4]]).unwrap();
        assert_eq!(
            solve_entropy_reg(&[1.0, 1.0], &one, 0.1).unwrap(),
            vec![1.0]
        );

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = random(5, 3, &mut rng);
        let q = [0.2, -0.1, 0.5];
        let knorm2 = k.frobenius_norm().powi(2);
        let a = solve_entropy_reg(&q, &k, 1e3 * knorm2.max(1.0)).unwrap();
        assert!(a.iter().all(|x| (x - 0.2).abs() < 1e-3));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_reg_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = random(6, 4, &mut rng);
        let q = [0.5, 0.1, -0.3, 0.2];
        let sol = solve_entropy_reg_with(&q, &k, 0.05, &EntropyConfig::default()).unwrap();
        assert!(sol.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.weights.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn dense_solve_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random(4, 3, &mut rng);
        let i4 = EmbeddingMatrix::identity(4);
        assert!(dense_solve(&i4, &b).unwrap().sub(&b).unwrap().max_abs() < 1e-15);
        let x = dense_solve(&i4.scale(2.0), &b).unwrap();
        assert!(x.sub(&b.scale(0.5)).unwrap().max_abs() < 1e-15);

        let a = random(8, 8, &mut rng);
        let spd = transpose_matmul(&a, &a)
            .unwrap()
            .add(&EmbeddingMatrix::identity(8).scale(0.1))
            .unwrap();
        let b = random(8, 2, &mut rng);
        let x = dense_solve(&spd, &b).unwrap();
        let resid = matmul(&spd, &x).unwrap().sub(&b).unwrap().frobenius_norm();
        assert!(resid <= 1e-8 * b.frobenius_norm());

        assert!(dense_solve(
            &EmbeddingMatrix::from_diag(&[1.0, 0.0]),
            &EmbeddingMatrix::identity(2)
        )
        .is_err());
    }
}
