//! SVD and filtered pseudoinverse kernels.
//!
//! The SVD is computed by a thin Householder QR followed by one-sided
//! (Hestenes) Jacobi rotations on the triangular factor. Wide matrices are
//! handled through their transpose. Each left singular vector is signed so
//! that its largest-magnitude entry is positive, which makes the factors
//! reproducible bit for bit.

use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, EmbeddingMatrix};

const MAX_SWEEPS: usize = 80;

/// `m = u · diag(sigma) · vt` with `sigma` sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    pub u: EmbeddingMatrix,
    pub sigma: Vec<f64>,
    pub vt: EmbeddingMatrix,
}

/// Relative spectral threshold rule.
///
/// The effective threshold is `explicit_epsilon` when set, otherwise
/// `1 / n^alpha` where `n` is the number of key-value pairs behind the matrix
/// being inverted. A single pair carries a rank-one matrix, so filtering is a
/// no-op there and the threshold is reported as zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralPolicy {
    pub alpha: f64,
    pub explicit_epsilon: Option<f64>,
}

impl Default for SpectralPolicy {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            explicit_epsilon: None,
        }
    }
}

impl SpectralPolicy {
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        let policy = Self {
            alpha,
            explicit_epsilon: None,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        let policy = Self {
            alpha: 1.0,
            explicit_epsilon: Some(epsilon),
        };
        policy.validate()?;
        Ok(policy)
    }

    /// No filtering: the exact Moore-Penrose pseudoinverse.
    pub fn exact() -> Self {
        Self {
            alpha: 1.0,
            explicit_epsilon: Some(0.0),
        }
    }

    /// Relative tolerance used for classification tasks (`ε = 1/N^0.8`).
    pub fn classification() -> Self {
        Self {
            alpha: 0.8,
            explicit_epsilon: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if let Some(eps) = self.explicit_epsilon {
            if !(0.0..1.0).contains(&eps) {
                return Err(Error::InvalidInput(format!("epsilon {eps} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn epsilon_for(&self, n: f64) -> f64 {
        match self.explicit_epsilon {
            Some(eps) => eps,
            None if n <= 1.0 => 0.0,
            None => n.powf(-self.alpha),
        }
    }
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Floor below which a singular value is treated as numerically zero.
    fn noise_floor(&self) -> f64 {
        let dim = self.u.rows().max(self.vt.cols()) as f64;
        self.sigma_max() * dim * f64::EPSILON
    }

    /// Whether component `i` survives a relative threshold `eps`:
    /// `σ_i ≥ σ_max·eps` (ties kept) and above the noise floor.
    pub fn keeps(&self, i: usize, eps: f64) -> bool {
        let s = self.sigma[i];
        s > 0.0 && s > self.noise_floor() && s >= self.sigma_max() * eps
    }

    pub fn retained_rank(&self, eps: f64) -> usize {
        (0..self.rank()).filter(|&i| self.keeps(i, eps)).count()
    }

    /// `ℛ Σ†_ε 𝒰ᵀ`, the filtered pseudoinverse as an explicit matrix.
    pub fn pinv(&self, eps: f64) -> EmbeddingMatrix {
        let (m, n) = (self.u.rows(), self.vt.cols());
        let mut out = EmbeddingMatrix::zeros(n, m);
        for k in (0..self.rank()).filter(|&k| self.keeps(k, eps)) {
            let inv = 1.0 / self.sigma[k];
            let r = self.vt.row(k);
            for (i, &ri) in r.iter().enumerate() {
                let scale = ri * inv;
                if scale == 0.0 {
                    continue;
                }
                let orow = out.row_mut(i);
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += scale * self.u.get(j, k);
                }
            }
        }
        out
    }

    /// `ℛ Σ†_ε 𝒰ᵀ · rhs` without forming the pseudoinverse.
    pub fn pinv_apply(&self, rhs: &EmbeddingMatrix, eps: f64) -> Result<EmbeddingMatrix> {
        let (m, n) = (self.u.rows(), self.vt.cols());
        if rhs.rows() != m {
            return Err(Error::shape(format!(
                "right-hand side has {} rows, matrix has {m}",
                rhs.rows()
            )));
        }
        let p = rhs.cols();
        let mut out = EmbeddingMatrix::zeros(n, p);
        let mut proj = vec![0.0; p];
        for k in (0..self.rank()).filter(|&k| self.keeps(k, eps)) {
            proj.iter_mut().for_each(|x| *x = 0.0);
            for (j, row) in rhs.row_iter().enumerate() {
                let ujk = self.u.get(j, k);
                if ujk == 0.0 {
                    continue;
                }
                for (x, r) in proj.iter_mut().zip(row) {
                    *x += ujk * r;
                }
            }
            let inv = 1.0 / self.sigma[k];
            for (i, &rik) in self.vt.row(k).iter().enumerate() {
                let scale = rik * inv;
                if scale == 0.0 {
                    continue;
                }
                for (o, x) in out.row_mut(i).iter_mut().zip(&proj) {
                    *o += scale * x;
                }
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self) -> EmbeddingMatrix {
        let (m, n) = (self.u.rows(), self.vt.cols());
        let mut out = EmbeddingMatrix::zeros(m, n);
        for k in 0..self.rank() {
            for i in 0..m {
                let s = self.u.get(i, k) * self.sigma[k];
                if s == 0.0 {
                    continue;
                }
                for (o, v) in out.row_mut(i).iter_mut().zip(self.vt.row(k)) {
                    *o += s * v;
                }
            }
        }
        out
    }
}

/// Thin SVD with `r = min(rows, cols)` components.
pub fn svd(m: &EmbeddingMatrix) -> Result<SvdFactors> {
    if m.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "svd input has non-finite entries".into(),
        ));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvdFactors {
            u: EmbeddingMatrix::from_raw(rows, 0, Vec::new()),
            sigma: Vec::new(),
            vt: EmbeddingMatrix::from_raw(0, cols, Vec::new()),
        });
    }

    let mut factors = if rows >= cols {
        let t = tall_svd(&ColMajor::from_row_major(m))?;
        SvdFactors {
            u: t.u.to_row_major(),
            sigma: t.sigma,
            vt: t.v.to_row_major().transpose(),
        }
    } else {
        let t = tall_svd(&ColMajor::from_row_major(&m.transpose()))?;
        SvdFactors {
            u: t.v.to_row_major(),
            sigma: t.sigma,
            vt: t.u.to_row_major().transpose(),
        }
    };
    fix_signs(&mut factors);
    Ok(factors)
}

/// Filtered pseudoinverse `ℛ Σ†_ε 𝒰ᵀ` with `ε` taken from `policy` and the
/// row count of `m`.
pub fn filtered_pinv(m: &EmbeddingMatrix, policy: &SpectralPolicy) -> Result<EmbeddingMatrix> {
    policy.validate()?;
    let eps = policy.epsilon_for(m.rows() as f64);
    Ok(svd(m)?.pinv(eps))
}

fn fix_signs(f: &mut SvdFactors) {
    let (m, r) = f.u.shape();
    for k in 0..r {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..m {
            let x = f.u.get(i, k);
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..m {
                f.u.set(i, k, -f.u.get(i, k));
            }
            for x in f.vt.row_mut(k) {
                *x = -*x;
            }
        }
    }
}

/// Column-major scratch matrix for the QR and Jacobi passes.
struct ColMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_row_major(m: &EmbeddingMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for (j, &x) in m.row(i).iter().enumerate() {
                data[j * rows + i] = x;
            }
        }
        Self { rows, cols, data }
    }

    fn identity(rows: usize, cols: usize) -> Self {
        let mut data = vec![0.0; rows * cols];
        for j in 0..cols.min(rows) {
            data[j * rows + j] = 1.0;
        }
        Self { rows, cols, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn two_cols_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (head, tail) = self.data.split_at_mut(q * self.rows);
        (
            &mut head[p * self.rows..(p + 1) * self.rows],
            &mut tail[..self.rows],
        )
    }

    fn to_row_major(&self) -> EmbeddingMatrix {
        let mut out = EmbeddingMatrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            for (i, &x) in self.col(j).iter().enumerate() {
                out.set(i, j, x);
            }
        }
        out
    }
}

struct TallSvd {
    u: ColMajor,
    sigma: Vec<f64>,
    v: ColMajor,
}

/// SVD of an `m×n` matrix with `m ≥ n ≥ 1`.
fn tall_svd(a: &ColMajor) -> Result<TallSvd> {
    let (m, n) = (a.rows, a.cols);
    let (q, r) = householder_qr(a);
    let negligible = negligible_norm_sq(&r);
    let (mut w, v) = one_sided_jacobi(r, negligible)?;

    let sigma_raw: Vec<f64> = (0..n).map(|j| l2_norm(w.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma_raw[j].total_cmp(&sigma_raw[i]).then(i.cmp(&j)));

    let mut ur = ColMajor::identity(n, n);
    let mut vs = ColMajor::identity(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma_raw[src];
        vs.col_mut(dst).copy_from_slice(v.col(src));
        if s > 0.0 && s * s > negligible {
            let col = w.col_mut(src);
            for x in col.iter_mut() {
                *x /= s;
            }
            ur.col_mut(dst).copy_from_slice(col);
            sigma.push(s);
        } else {
            missing.push(dst);
            sigma.push(0.0);
        }
    }
    complete_basis(&mut ur, &missing);

    // U = Q · U_r
    let mut u = ColMajor {
        rows: m,
        cols: n,
        data: vec![0.0; m * n],
    };
    for j in 0..n {
        let urj = ur.col(j).to_vec();
        let uj = u.col_mut(j);
        for (k, &coef) in urj.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            for (x, qk) in uj.iter_mut().zip(q.col(k)) {
                *x += coef * qk;
            }
        }
    }
    Ok(TallSvd { u, sigma, v: vs })
}

/// Thin Householder QR: returns `Q` (`m×n`, orthonormal columns) and `R` (`n×n`).
fn householder_qr(a: &ColMajor) -> (ColMajor, ColMajor) {
    let (m, n) = (a.rows, a.cols);
    let mut work = ColMajor {
        rows: m,
        cols: n,
        data: a.data.clone(),
    };
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &work.col(k)[k..];
        let norm = l2_norm(x);
        let mut v = x.to_vec();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = l2_norm(&v);
        if vnorm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        for j in k..n {
            let col = &mut work.col_mut(j)[k..];
            let s = 2.0 * dot(&v, col);
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= s * vi;
            }
        }
        reflectors.push(v);
    }

    let mut r = ColMajor {
        rows: n,
        cols: n,
        data: vec![0.0; n * n],
    };
    for j in 0..n {
        for i in 0..=j {
            r.data[j * n + i] = work.col(j)[i];
        }
    }

    let mut q = ColMajor::identity(m, n);
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..n {
            let col = &mut q.col_mut(j)[k..];
            let s = 2.0 * dot(v, col);
            if s == 0.0 {
                continue;
            }
            for (c, vi) in col.iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
    }
    (q, r)
}

/// Squared column norm below which a column is rounding residue.
fn negligible_norm_sq(m: &ColMajor) -> f64 {
    let total: f64 = m.data.iter().map(|x| x * x).sum();
    (f64::EPSILON * f64::EPSILON).powi(2) * total + f64::MIN_POSITIVE / f64::EPSILON
}

/// Orthogonalizes the columns of `w` in place; returns `(w·V, V)`. Columns at
/// or below `negligible` squared norm are not rotated.
fn one_sided_jacobi(mut w: ColMajor, negligible: f64) -> Result<(ColMajor, ColMajor)> {
    let n = w.cols;
    let mut v = ColMajor::identity(n, n);
    let tol = f64::EPSILON * (n as f64).max(1.0);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (wp, wq) = w.two_cols_mut(p, q);
                let alpha = dot(wp, wp);
                let beta = dot(wq, wq);
                let gamma = dot(wp, wq);
                if alpha.min(beta) <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vp, vq) = v.two_cols_mut(p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            return Ok((w, v));
        }
    }
    Err(Error::NumericalFailure(format!(
        "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
    )))
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the listed columns of a square matrix with unit vectors orthogonal
/// to every other column.
fn complete_basis(u: &mut ColMajor, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = u.rows;
    let mut filled: Vec<usize> = (0..u.cols).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &target in missing {
        loop {
            assert!(candidate < n, "basis completion ran out of candidates");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let proj = dot(&e, u.col(j));
                    for (x, b) in e.iter_mut().zip(u.col(j)) {
                        *x -= proj * b;
                    }
                }
            }
            let norm = l2_norm(&e);
            if norm > 0.5 {
                e.iter_mut().for_each(|x| *x /= norm);
                u.col_mut(target).copy_from_slice(&e);
                filled.push(target);
                break;
            }
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape(format!("cholesky of {}x{}", n, a.cols())));
    }
    let mut l = EmbeddingMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "matrix is not positive definite (pivot {j} = {d:e})"
            )));
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` given the lower Cholesky factor `L`.
pub fn cholesky_solve(l: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let n = l.rows();
    if b.rows() != n {
        return Err(Error::shape(format!(
            "right-hand side has {} rows, factor has {n}",
            b.rows()
        )));
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{matmul, matmul_transpose, transpose_matmul};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        EmbeddingMatrix::new(rows, cols, data).unwrap()
    }

    fn check_invariants(m: &EmbeddingMatrix, f: &SvdFactors) {
        let r = m.rows().min(m.cols());
        assert_eq!(f.sigma.len(), r);
        assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.sigma.iter().all(|&s| s >= 0.0));
        let utu = transpose_matmul(&f.u, &f.u).unwrap();
        assert!(utu.sub(&EmbeddingMatrix::identity(r)).unwrap().max_abs() <= 1e-10);
        let vvt = matmul_transpose(&f.vt, &f.vt).unwrap();
        assert!(vvt.sub(&EmbeddingMatrix::identity(r)).unwrap().max_abs() <= 1e-10);
        let resid = f.reconstruct().sub(m).unwrap().frobenius_norm();
        assert!(
            resid <= 1e-8 * m.frobenius_norm().max(1.0),
            "residual {resid}"
        );
    }

    #[test]
    fn identity_factors() {
        let f = svd(&EmbeddingMatrix::identity(3)).unwrap();
        assert_eq!(f.sigma, vec![1.0, 1.0, 1.0]);
        assert_eq!(f.u, EmbeddingMatrix::identity(3));
        assert_eq!(f.vt, EmbeddingMatrix::identity(3));
    }

    #[test]
    fn diagonal_with_zero() {
        let m = EmbeddingMatrix::from_diag(&[2.0, 0.0]);
        let f = svd(&m).unwrap();
        assert_eq!(f.sigma, vec![2.0, 0.0]);
        check_invariants(&m, &f);
    }

    #[test]
    fn random_shapes_reconstruct() {
        for (i, &(r, c)) in [(8, 4), (4, 8), (1, 5), (5, 1), (32, 32), (50, 64), (7, 7)]
            .iter()
            .enumerate()
        {
            let m = random(r, c, i as u64);
            check_invariants(&m, &svd(&m).unwrap());
        }
    }

    #[test]
    fn rank_deficient_completes_basis() {
        let a = random(10, 2, 11);
        let b = random(2, 6, 12);
        let m = matmul(&a, &b).unwrap();
        let f = svd(&m).unwrap();
        check_invariants(&m, &f);
        assert_eq!(f.retained_rank(0.0), 2);
        let zero = EmbeddingMatrix::zeros(4, 3);
        let fz = svd(&zero).unwrap();
        check_invariants(&zero, &fz);
        assert_eq!(fz.sigma, vec![0.0; 3]);
    }

    #[test]
    fn zero_column_blocks_converge() {
        for seed in 0..20 {
            let mut m = random(6 + seed as usize % 4, 8, 100 + seed);
            for i in 0..m.rows() {
                for j in 3..8 {
                    m.set(i, j, 0.0);
                }
            }
            let f = svd(&m).unwrap();
            check_invariants(&m, &f);
            assert_eq!(f.retained_rank(1e-12), 3);
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        let m = random(9, 5, 3);
        let f1 = svd(&m).unwrap();
        let f2 = svd(&m).unwrap();
        assert_eq!(f1.u, f2.u);
        assert_eq!(f1.sigma, f2.sigma);
        assert_eq!(f1.vt, f2.vt);
        for k in 0..5 {
            let col: Vec<f64> = (0..9).map(|i| f1.u.get(i, k)).collect();
            let max = col
                .iter()
                .copied()
                .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn pinv_examples() {
        let exact = SpectralPolicy::exact();
        let i2 = EmbeddingMatrix::identity(2);
        assert!(
            filtered_pinv(&i2, &exact)
                .unwrap()
                .sub(&i2)
                .unwrap()
                .max_abs()
                < 1e-15
        );

        let d = EmbeddingMatrix::from_diag(&[2.0, 0.0]);
        let p = filtered_pinv(&d, &exact).unwrap();
        assert!(
            p.sub(&EmbeddingMatrix::from_diag(&[0.5, 0.0]))
                .unwrap()
                .max_abs()
                < 1e-15
        );

        // (KᵀK)⁻¹Kᵀ for K = [1;1] is [1/2, 1/2]
        let col = EmbeddingMatrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let p = filtered_pinv(&col, &exact).unwrap();
        assert_eq!(p.shape(), (1, 2));
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15 && (p.get(0, 1) - 0.5).abs() < 1e-15);

        let spread = EmbeddingMatrix::from_diag(&[10.0, 0.001]);
        let p = filtered_pinv(&spread, &SpectralPolicy::with_epsilon(0.01).unwrap()).unwrap();
        assert!((p.get(0, 0) - 0.1).abs() < 1e-15);
        assert_eq!(p.get(1, 1), 0.0);
    }

    #[test]
    fn threshold_ties_are_kept() {
        let m = EmbeddingMatrix::from_diag(&[4.0, 1.0]);
        let f = svd(&m).unwrap();
        assert_eq!(f.retained_rank(0.25), 2);
        assert_eq!(f.retained_rank(0.2500001), 1);
    }

    #[test]
    fn empty_and_zero_inputs() {
        let p = filtered_pinv(&EmbeddingMatrix::zeros(3, 2), &SpectralPolicy::exact()).unwrap();
        assert_eq!(p.shape(), (2, 3));
        assert!(p.is_zero());
        let p = filtered_pinv(&EmbeddingMatrix::zeros(0, 2), &SpectralPolicy::default()).unwrap();
        assert_eq!(p.shape(), (2, 0));
    }

    #[test]
    fn policy_rules() {
        let p = SpectralPolicy::default();
        assert_eq!(p.epsilon_for(100.0), 0.01);
        assert_eq!(p.epsilon_for(1.0), 0.0);
        assert!(
            (SpectralPolicy::classification().epsilon_for(100.0) - 100f64.powf(-0.8)).abs() < 1e-15
        );
        assert!(SpectralPolicy::with_epsilon(1.0).is_err());
        assert!(SpectralPolicy::with_alpha(1.5).is_err());
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = random(6, 6, 9);
        let spd = transpose_matmul(&a, &a)
            .unwrap()
            .add(&EmbeddingMatrix::identity(6))
            .unwrap();
        let l = cholesky(&spd).unwrap();
        let b = random(6, 2, 10);
        let x = cholesky_solve(&l, &b).unwrap();
        assert!(matmul(&spd, &x).unwrap().sub(&b).unwrap().frobenius_norm() < 1e-12);
        assert!(cholesky(&EmbeddingMatrix::from_diag(&[1.0, -1.0])).is_err());
    }
}
