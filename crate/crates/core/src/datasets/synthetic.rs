//! Seeded synthetic classification tasks: Gaussian clusters around scaled
//! orthonormal centers, with orthonormal class value embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classify::ClassHead;
use crate::datasets::KvDataset;
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, EmbeddingMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub class_separation: f64,
    pub seed: u64,
    /// Length of a direction shared by every key, added before
    /// normalization. Zero gives isotropic clusters.
    #[serde(default)]
    pub common_offset: f64,
}

impl SyntheticTaskSpec {
    pub fn new(classes: usize, dim: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            classes,
            dim,
            samples_per_class,
            cluster_spread: 0.1,
            class_separation: 1.0,
            seed,
            common_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim < self.classes {
            return Err(Error::Spec(format!(
                "dim {} is smaller than the class count {}",
                self.dim, self.classes
            )));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return Err(Error::Spec(format!(
                "invalid cluster spread {}",
                self.cluster_spread
            )));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::Spec(format!(
                "invalid class separation {}",
                self.class_separation
            )));
        }
        if !(self.common_offset.is_finite() && self.common_offset >= 0.0) {
            return Err(Error::Spec(format!(
                "invalid common offset {}",
                self.common_offset
            )));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `count` random orthonormal vectors in `R^dim` (`count ≤ dim`), by
/// Gram–Schmidt with reorthogonalization.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = l2_norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// Labeled dataset with ids `0..classes`, rows grouped by class. The class
/// head is available through [`KvDataset::head`].
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<KvDataset> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = orthonormal(&mut rng, c, d);
    let shared = {
        let mut v = gaussian(&mut rng, d);
        let n = l2_norm(&v).max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let class_values = orthonormal(&mut rng, c, d);

    let n = c * spec.samples_per_class;
    let mut keys = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let noise = gaussian(&mut rng, d);
            let mut k: Vec<f64> = (0..d)
                .map(|j| {
                    spec.class_separation * center[j]
                        + spec.common_offset * shared[j]
                        + spec.cluster_spread * noise[j]
                })
                .collect();
            let norm = l2_norm(&k);
            if norm > 0.0 {
                k.iter_mut().for_each(|x| *x /= norm);
            }
            keys.extend(k);
            labels.push(class as u32);
        }
    }
    let head = ClassHead::from_values(EmbeddingMatrix::new(c, d, class_values.concat())?)?;
    KvDataset::with_labels(
        format!("synthetic-{c}x{}-seed{}", spec.samples_per_class, spec.seed),
        EmbeddingMatrix::new(n, d, keys)?,
        labels,
        head,
    )
}

/// Replaces each label, with probability `fraction`, by a uniformly drawn
/// different class.
pub fn with_label_noise(ds: &KvDataset, fraction: f64, seed: u64) -> Result<KvDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "noise fraction {fraction} outside [0, 1]"
        )));
    }
    let (labels, head) = match (ds.labels(), ds.head()) {
        (Some(l), Some(h)) => (l, h),
        _ => return Err(Error::Dataset("label noise needs a labeled dataset".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = head.ids();
    let noisy = labels
        .iter()
        .map(|&l| {
            if rng.random::<f64>() < fraction {
                let own = head.index_of(l).expect("validated label");
                let pick = rng.random_range(0..ids.len() - 1);
                ids[if pick >= own { pick + 1 } else { pick }]
            } else {
                l
            }
        })
        .collect();
    KvDataset::with_labels(ds.name(), ds.keys().clone(), noisy, head.clone())
}
