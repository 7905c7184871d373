//! Dense row-major matrix container shared by every other module.
//!
//! `EmbeddingMatrix` holds keys, values, fast weights and the intermediate
//! products built from them. Every constructor that accepts outside data
//! rejects non-finite entries, so downstream kernels can assume finiteness.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for EmbeddingMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "EmbeddingMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ... {} more rows", self.rows - 8)?;
        }
        write!(f, "]")
    }
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidInput(
                "matrix must have at least one column".into(),
            ));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for kernels whose inputs were already validated.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(indices.len(), self.cols, data)
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot stack {} columns on {} columns",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(self.rows + other.rows, self.cols, data))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x * factor).collect(),
        )
    }

    /// Returns `self * alpha + other * beta`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `‖self − other‖_F / max(1, ‖other‖_F)`.
    pub fn relative_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.frobenius_norm() / other.frobenius_norm().max(1.0))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Averages the matrix with its transpose in place. Square matrices only.
    pub(crate) fn symmetrize(&mut self) {
        let n = self.rows;
        debug_assert_eq!(n, self.cols);
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    /// Row vector times matrix: `xᵀ·self`.
    pub fn vecmat(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::shape(format!(
                "vector of length {} against {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (xi, row) in x.iter().zip(self.row_iter()) {
            if *xi == 0.0 {
                continue;
            }
            for (o, r) in out.iter_mut().zip(row) {
                *o += xi * r;
            }
        }
        Ok(out)
    }

    /// Matrix times column vector: `self·x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok(self.row_iter().map(|row| dot(row, x)).collect())
    }
}

/// Standard product `a·b`.
pub fn matmul(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = EmbeddingMatrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    check_finite(out)
}

/// `aᵀ·b` without materializing the transpose.
pub fn transpose_matmul(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if a.rows != b.rows {
        return Err(Error::shape(format!(
            "cannot form aᵀb for {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = EmbeddingMatrix::zeros(a.cols, b.cols);
    let n = b.cols;
    for (arow, brow) in a.row_iter().zip(b.row_iter()) {
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, bij) in out.data[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += aip * bij;
            }
        }
    }
    check_finite(out)
}

/// `a·bᵀ` without materializing the transpose.
pub fn matmul_transpose(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape(format!(
            "cannot form abᵀ for {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for arow in a.row_iter() {
        for brow in b.row_iter() {
            data.push(dot(arow, brow));
        }
    }
    check_finite(EmbeddingMatrix::from_raw(a.rows, b.rows, data))
}

fn check_finite(m: EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.data.iter().all(|x| x.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NumericalFailure("matrix product overflowed".into()))
    }
}

/// Scales each nonzero row to unit L2 norm. All-zero rows are left as is.
pub fn l2_normalize_rows(m: &EmbeddingMatrix) -> EmbeddingMatrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        normalize_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Overflow-safe Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
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
    fn rejects_non_finite() {
        assert!(EmbeddingMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(EmbeddingMatrix::new(1, 0, vec![]).is_err());
        assert!(EmbeddingMatrix::new(0, 3, vec![]).is_ok());
    }

    #[test]
    fn identity_and_zero_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(3, 4, &mut rng);
        assert_eq!(matmul(&EmbeddingMatrix::identity(3), &m).unwrap(), m);
        assert!(matmul(&EmbeddingMatrix::zeros(2, 3), &m).unwrap().is_zero());
    }

    #[test]
    fn product_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(2, 3, &mut rng);
        let b = random(3, 2, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut expected = 0.0;
                for k in 0..3 {
                    expected += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - expected).abs() < 1e-15);
            }
        }
        let at_b = transpose_matmul(&a.transpose(), &b).unwrap();
        assert!(at_b.sub(&c).unwrap().max_abs() < 1e-15);
        let a_bt = matmul_transpose(&a, &b.transpose()).unwrap();
        assert!(a_bt.sub(&c).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = EmbeddingMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn normalizes_rows() {
        let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let n = l2_normalize_rows(&m);
        assert_eq!(n.row(0), &[0.6, 0.8]);
        assert_eq!(n.row(1), &[0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = l2_normalize_rows(&random(5, 7, &mut rng));
        for row in r.row_iter() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-12);
        }
    }
}
