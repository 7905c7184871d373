//! Closed-form fast weights.
//!
//! A batch of key-value pairs `(K, V)` compiles to `W = K†_ε V`, the
//! (spectrally filtered) minimum-norm least-squares map from keys to values.
//! Two incremental paths are provided:
//!
//! * [`interpolate_update`] blends the current weights with a freshly
//!   compiled batch by effective sample counts. It stores only `W` and a
//!   count, and is exact only when the per-batch Gram matrices are
//!   proportional to the identity with a common per-sample scale.
//! * [`SufficientStats`] keeps `S = KᵀK` and `T = KᵀV`; accumulating and
//!   solving reproduces a from-scratch compile on all data seen so far.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, svd, SpectralPolicy};
use crate::tensor::{matmul, matmul_transpose, transpose_matmul, EmbeddingMatrix};

/// A `d_x × d_y` fast-weight matrix and the effective number of pairs behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct FastWeights {
    w: EmbeddingMatrix,
    count: f64,
}

impl FastWeights {
    pub fn new(w: EmbeddingMatrix, count: f64) -> Result<Self> {
        if !(count.is_finite() && count >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid sample count {count}")));
        }
        if count == 0.0 && !w.is_zero() {
            return Err(Error::InvalidInput(
                "fast weights with zero count must be the zero matrix".into(),
            ));
        }
        Ok(Self { w, count })
    }

    pub fn zeros(d_x: usize, d_y: usize) -> Self {
        Self {
            w: EmbeddingMatrix::zeros(d_x, d_y),
            count: 0.0,
        }
    }

    pub fn weights(&self) -> &EmbeddingMatrix {
        &self.w
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn d_x(&self) -> usize {
        self.w.rows()
    }

    pub fn d_y(&self) -> usize {
        self.w.cols()
    }

    /// `h = qᵀ W`.
    pub fn apply(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("query has non-finite entries".into()));
        }
        self.w.vecmat(query)
    }
}

/// Outcome of a compile, with the spectral bookkeeping the CLI reports.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub weights: FastWeights,
    pub retained_rank: usize,
    pub epsilon: f64,
}

/// `W = (D K)†_ε (D V)` with `D = diag(√row_weights)` (identity by default).
pub fn compile(
    keys: &EmbeddingMatrix,
    values: &EmbeddingMatrix,
    policy: &SpectralPolicy,
    row_weights: Option<&[f64]>,
) -> Result<FastWeights> {
    compile_detailed(keys, values, policy, row_weights).map(|c| c.weights)
}

pub fn compile_detailed(
    keys: &EmbeddingMatrix,
    values: &EmbeddingMatrix,
    policy: &SpectralPolicy,
    row_weights: Option<&[f64]>,
) -> Result<Compiled> {
    policy.validate()?;
    if keys.rows() != values.rows() {
        return Err(Error::shape(format!(
            "{} keys but {} values",
            keys.rows(),
            values.rows()
        )));
    }
    let (d_x, d_y) = (keys.cols(), values.cols());
    let n = keys.rows();
    let epsilon = policy.epsilon_for(n as f64);
    if n == 0 {
        return Ok(Compiled {
            weights: FastWeights::zeros(d_x, d_y),
            retained_rank: 0,
            epsilon,
        });
    }

    let (k, v, count) = match row_weights {
        None => (keys.clone(), values.clone(), n as f64),
        Some(rw) => {
            if rw.len() != n {
                return Err(Error::shape(format!(
                    "{} row weights for {n} rows",
                    rw.len()
                )));
            }
            if let Some(bad) = rw.iter().find(|w| !(0.0..=1.0).contains(*w)) {
                return Err(Error::InvalidInput(format!(
                    "row weight {bad} outside [0, 1]"
                )));
            }
            (
                scale_rows(keys, rw),
                scale_rows(values, rw),
                rw.iter().sum(),
            )
        }
    };

    let factors = svd(&k)?;
    let retained_rank = factors.retained_rank(epsilon);
    let w = factors.pinv_apply(&v, epsilon)?;
    let weights = if count == 0.0 {
        FastWeights::zeros(d_x, d_y)
    } else {
        FastWeights { w, count }
    };
    Ok(Compiled {
        weights,
        retained_rank,
        epsilon,
    })
}

fn scale_rows(m: &EmbeddingMatrix, row_weights: &[f64]) -> EmbeddingMatrix {
    let mut out = m.clone();
    for (i, &rw) in row_weights.iter().enumerate() {
        let s = rw.sqrt();
        for x in out.row_mut(i) {
            *x *= s;
        }
    }
    out
}

/// Count-weighted blend of the running weights with a batch solution.
///
/// The running count is multiplied by `discount` first, so older evidence
/// decays geometrically when `discount < 1`.
pub fn interpolate_update(
    current: &FastWeights,
    batch: &FastWeights,
    discount: f64,
) -> Result<FastWeights> {
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "discount {discount} outside (0, 1]"
        )));
    }
    current.w.check_same_shape(&batch.w)?;
    if batch.count == 0.0 {
        return Ok(current.clone());
    }
    let prior = discount * current.count;
    let total = prior + batch.count;
    let w = current
        .w
        .lin_comb(prior / total, &batch.w, batch.count / total)?;
    Ok(FastWeights { w, count: total })
}

/// `S = KᵀK`, `T = KᵀV` and the number of pairs they summarize.
#[derive(Clone, Debug, PartialEq)]
pub struct SufficientStats {
    s: EmbeddingMatrix,
    t: EmbeddingMatrix,
    count: f64,
}

impl SufficientStats {
    pub fn zeros(d_x: usize, d_y: usize) -> Self {
        Self {
            s: EmbeddingMatrix::zeros(d_x, d_x),
            t: EmbeddingMatrix::zeros(d_x, d_y),
            count: 0.0,
        }
    }

    /// Validates symmetry and positive semidefiniteness of `s`.
    pub fn from_parts(s: EmbeddingMatrix, t: EmbeddingMatrix, count: f64) -> Result<Self> {
        let d = s.rows();
        if s.cols() != d || t.rows() != d {
            return Err(Error::shape(format!(
                "S is {}x{}, T is {}x{}",
                s.rows(),
                s.cols(),
                t.rows(),
                t.cols()
            )));
        }
        if !(count.is_finite() && count >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid sample count {count}")));
        }
        let asym = s.sub(&s.transpose())?.max_abs();
        if asym > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "S is not symmetric ({asym:e})"
            )));
        }
        // Rayleigh quotients along the singular directions recover the signed
        // eigenvalues of a symmetric matrix.
        let factors = svd(&s)?;
        let floor = -1e-8 * s.trace().abs();
        for k in 0..factors.rank() {
            let dir = factors.vt.row(k);
            let sd = s.matvec(dir)?;
            let lambda: f64 = dir.iter().zip(&sd).map(|(a, b)| a * b).sum();
            if lambda < floor {
                return Err(Error::InvalidInput(format!(
                    "S has negative eigenvalue {lambda:e}"
                )));
            }
        }
        Ok(Self { s, t, count })
    }

    pub fn from_batch(keys: &EmbeddingMatrix, values: &EmbeddingMatrix) -> Result<Self> {
        stats_accumulate(&Self::zeros(keys.cols(), values.cols()), keys, values)
    }

    pub fn gram(&self) -> &EmbeddingMatrix {
        &self.s
    }

    pub fn cross(&self) -> &EmbeddingMatrix {
        &self.t
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn d_x(&self) -> usize {
        self.s.rows()
    }

    pub fn d_y(&self) -> usize {
        self.t.cols()
    }

    /// Scales all statistics by `factor`, the exact-path analogue of a discounted count.
    pub fn discounted(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "discount {factor} outside (0, 1]"
            )));
        }
        Ok(Self {
            s: self.s.scale(factor),
            t: self.t.scale(factor),
            count: self.count * factor,
        })
    }
}

/// Adds a batch to the running statistics.
pub fn stats_accumulate(
    stats: &SufficientStats,
    keys: &EmbeddingMatrix,
    values: &EmbeddingMatrix,
) -> Result<SufficientStats> {
    if keys.rows() != values.rows() {
        return Err(Error::shape(format!(
            "{} keys but {} values",
            keys.rows(),
            values.rows()
        )));
    }
    if keys.cols() != stats.d_x() || values.cols() != stats.d_y() {
        return Err(Error::shape(format!(
            "batch is {}→{}, statistics are {}→{}",
            keys.cols(),
            values.cols(),
            stats.d_x(),
            stats.d_y()
        )));
    }
    if keys.rows() == 0 {
        return Ok(stats.clone());
    }
    let mut s = stats.s.add(&transpose_matmul(keys, keys)?)?;
    s.symmetrize();
    let t = stats.t.add(&transpose_matmul(keys, values)?)?;
    Ok(SufficientStats {
        s,
        t,
        count: stats.count + keys.rows() as f64,
    })
}

/// `W = S†_{ε²} T`.
///
/// Eigenvalues of `S = KᵀK` are the squared singular values of `K`, so the
/// threshold is squared to match [`compile`] under the same policy.
pub fn stats_solve(stats: &SufficientStats, policy: &SpectralPolicy) -> Result<FastWeights> {
    policy.validate()?;
    if stats.count == 0.0 || stats.s.is_zero() {
        return Ok(FastWeights {
            w: EmbeddingMatrix::zeros(stats.d_x(), stats.d_y()),
            count: stats.count,
        });
    }
    let eps = policy.epsilon_for(stats.count);
    let factors = svd(&stats.s)?;
    let w = factors.pinv_apply(&stats.t, eps * eps)?;
    Ok(FastWeights {
        w,
        count: stats.count,
    })
}

/// `(S + KᵦᵀKᵦ)⁻¹` from `S⁻¹` by the Sherman-Morrison-Woodbury identity:
/// `S⁻¹ − S⁻¹Kᵦᵀ (I + Kᵦ S⁻¹ Kᵦᵀ)⁻¹ Kᵦ S⁻¹`.
pub fn woodbury_update(
    s_inv: &EmbeddingMatrix,
    k_batch: &EmbeddingMatrix,
) -> Result<EmbeddingMatrix> {
    let d = s_inv.rows();
    if s_inv.cols() != d || k_batch.cols() != d {
        return Err(Error::shape(format!(
            "inverse is {}x{}, batch has {} columns",
            d,
            s_inv.cols(),
            k_batch.cols()
        )));
    }
    let b = k_batch.rows();
    if b == 0 {
        return Ok(s_inv.clone());
    }
    // M = Kᵦ S⁻¹ (b×d); S⁻¹ is symmetric so S⁻¹Kᵦᵀ = Mᵀ.
    let m = matmul(k_batch, s_inv)?;
    let mut inner = matmul_transpose(&m, k_batch)?;
    for i in 0..b {
        inner.set(i, i, inner.get(i, i) + 1.0);
    }
    inner.symmetrize();

    let x = match cholesky(&inner) {
        Ok(l) => cholesky_solve(&l, &m)?,
        Err(_) => {
            let factors = svd(&inner)?;
            let smax = factors.sigma[0];
            let smin = factors.sigma[b - 1];
            if smin.is_nan() || smin <= smax * 1e-13 {
                return Err(Error::NumericalFailure(format!(
                    "Woodbury inner system is singular (σ_min/σ_max = {:e})",
                    smin / smax
                )));
            }
            factors.pinv_apply(&m, 0.0)?
        }
    };
    let mut out = s_inv.sub(&transpose_matmul(&m, &x)?)?;
    out.symmetrize();
    Ok(out)
}

/// A pretrained projection treated as if it had been learned from `n0` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorHead {
    w0: EmbeddingMatrix,
    n0: f64,
}

impl PriorHead {
    pub fn new(w0: EmbeddingMatrix, n0: f64) -> Result<Self> {
        if !(n0.is_finite() && n0 >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid prior count {n0}")));
        }
        Ok(Self { w0, n0 })
    }

    pub fn weights(&self) -> &EmbeddingMatrix {
        &self.w0
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn with_n0(&self, n0: f64) -> Result<Self> {
        Self::new(self.w0.clone(), n0)
    }
}

/// Count-weighted blend of task weights with a prior head.
pub fn merge_with_prior(task: &FastWeights, prior: &PriorHead) -> Result<FastWeights> {
    task.w.check_same_shape(&prior.w0)?;
    let total = prior.n0 + task.count;
    if total == 0.0 {
        return Ok(FastWeights::zeros(task.d_x(), task.d_y()));
    }
    let w = prior
        .w0
        .lin_comb(prior.n0 / total, &task.w, task.count / total)?;
    FastWeights::new(w, total)
}
