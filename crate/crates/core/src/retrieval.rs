//! Memory-based retrieval: `h = aᵀV` with attention weights `a` chosen by
//! k-nearest-neighbour voting, softmax over dot products, pseudoinverse
//! least squares, or kernel similarity (plain or mean-centered).

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::{filtered_pinv, SpectralPolicy};
use crate::tensor::{dot, l2_norm, EmbeddingMatrix};

/// Stored key-value pairs, optionally labeled.
#[derive(Clone, Debug)]
pub struct MemoryStore {
    keys: EmbeddingMatrix,
    values: EmbeddingMatrix,
    labels: Option<Vec<u32>>,
}

impl MemoryStore {
    pub fn new(
        keys: EmbeddingMatrix,
        values: EmbeddingMatrix,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if keys.rows() != values.rows() {
            return Err(Error::shape(format!(
                "{} keys but {} values",
                keys.rows(),
                values.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != keys.rows() {
                return Err(Error::shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    keys.rows()
                )));
            }
        }
        Ok(Self {
            keys,
            values,
            labels,
        })
    }

    pub fn keys(&self) -> &EmbeddingMatrix {
        &self.keys
    }

    pub fn values(&self) -> &EmbeddingMatrix {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyMemory);
        }
        if query.len() != self.keys.cols() {
            return Err(Error::shape(format!(
                "query of length {} against {}-dimensional keys",
                query.len(),
                self.keys.cols()
            )));
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("query has non-finite entries".into()));
        }
        Ok(())
    }

    fn result(&self, weights: Vec<f64>) -> Result<AttentionResult> {
        let output = self.values.vecmat(&weights)?;
        Ok(AttentionResult { weights, output })
    }
}

/// Per-row attention weights and the retrieved value `weightsᵀ·V`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Uniform weight `1/k` on the `k` keys most cosine-similar to the query.
/// Ties go to the lower row index; `k` is clamped to the store size.
pub fn knn_retrieve(store: &MemoryStore, query: &[f64], k: usize) -> Result<AttentionResult> {
    store.check_query(query)?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let n = store.len();
    let k = k.min(n);
    let sims: Vec<f64> = store
        .keys
        .row_iter()
        .map(|row| cosine(row, query))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| match sims[j].total_cmp(&sims[i]) {
        Ordering::Equal => i.cmp(&j),
        other => other,
    });
    let mut weights = vec![0.0; n];
    for &i in &order[..k] {
        weights[i] = 1.0 / k as f64;
    }
    store.result(weights)
}

/// `softmax(K q / τ)`, stabilized by subtracting the maximum logit.
pub fn softmax_retrieve(
    store: &MemoryStore,
    query: &[f64],
    temperature: f64,
) -> Result<AttentionResult> {
    store.check_query(query)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let logits: Vec<f64> = store
        .keys
        .row_iter()
        .map(|row| dot(row, query) / temperature)
        .collect();
    store.result(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pseudoinverse attention over a fixed store.
///
/// The weights are the minimum-norm least-squares solution of `Kᵀa = q`,
/// i.e. `a = (K†_ε)ᵀ q`, so `aᵀV = qᵀ K†_ε V`: the same output as applying
/// fast weights compiled from the store. Weights may be negative.
#[derive(Clone, Debug)]
pub struct PinvAttention {
    store: MemoryStore,
    pinv: EmbeddingMatrix,
}

impl PinvAttention {
    pub fn new(store: MemoryStore, policy: &SpectralPolicy) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let pinv = filtered_pinv(&store.keys, policy)?;
        Ok(Self { store, pinv })
    }

    pub fn retrieve(&self, query: &[f64]) -> Result<AttentionResult> {
        self.store.check_query(query)?;
        let weights = self.pinv.vecmat(query)?;
        self.store.result(weights)
    }
}

pub fn pinv_attention(
    store: &MemoryStore,
    query: &[f64],
    policy: &SpectralPolicy,
) -> Result<AttentionResult> {
    store.check_query(query)?;
    PinvAttention::new(store.clone(), policy)?.retrieve(query)
}

/// Kernel feature map `φ` used by linear attention.
pub trait FeatureMap {
    fn map(&self, x: &[f64]) -> Vec<f64>;
}

/// `φ(x) = x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityMap;

impl FeatureMap for IdentityMap {
    fn map(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// `φ(x) = x / ‖x‖` (zero stays zero). The default kernel.
#[derive(Clone, Copy, Debug, Default)]
pub struct NormalizedMap;

impl FeatureMap for NormalizedMap {
    fn map(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        crate::tensor::normalize_in_place(&mut out);
        out
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> FeatureMap for F {
    fn map(&self, x: &[f64]) -> Vec<f64> {
        self(x)
    }
}

fn kernel_scores(store: &MemoryStore, query: &[f64], phi: &dyn FeatureMap) -> Vec<f64> {
    let fq = phi.map(query);
    store
        .keys
        .row_iter()
        .map(|row| dot(&fq, &phi.map(row)))
        .collect()
}

fn score_total(scores: &[f64]) -> Result<f64> {
    let total: f64 = scores.iter().sum();
    if total.abs() < 1e-12 {
        return Err(Error::DegenerateScores(total));
    }
    Ok(total)
}

/// Centered linear attention with the default normalized kernel.
pub fn centered_linear_retrieve(store: &MemoryStore, query: &[f64]) -> Result<AttentionResult> {
    centered_linear_retrieve_with(store, query, &NormalizedMap)
}

/// `a_i = (s_i − s̄) / Σ_j s_j` with `s_i = φ(q)ᵀφ(k_i)`. Weights sum to zero.
pub fn centered_linear_retrieve_with(
    store: &MemoryStore,
    query: &[f64],
    phi: &dyn FeatureMap,
) -> Result<AttentionResult> {
    store.check_query(query)?;
    let scores = kernel_scores(store, query, phi);
    let total = score_total(&scores)?;
    let mean = total / scores.len() as f64;
    store.result(scores.iter().map(|s| (s - mean) / total).collect())
}

/// Uncentered linear attention, `a_i = s_i / Σ_j s_j`.
pub fn linear_retrieve_with(
    store: &MemoryStore,
    query: &[f64],
    phi: &dyn FeatureMap,
) -> Result<AttentionResult> {
    store.check_query(query)?;
    let scores = kernel_scores(store, query, phi);
    let total = score_total(&scores)?;
    store.result(scores.iter().map(|s| s / total).collect())
}
