//! Key-value datasets: the FWKV binary format, CSV interchange and synthetic
//! task generators.

mod csv;
mod fwkv;
mod synthetic;

pub use self::csv::{load_csv, load_csv_labeled, parse_csv, parse_csv_labeled};
pub use self::fwkv::{
    decode, encode_dataset, encode_weights, load_any, load_fwkv, load_weights, save_fwkv,
    save_weights, FwkvFile, FwkvKind, StoredWeights, FWKV_MAGIC, FWKV_VERSION,
};
pub use self::synthetic::{generate_synthetic, with_label_noise, SyntheticTaskSpec};

use crate::classify::ClassHead;
use crate::error::{Error, Result};
use crate::tensor::EmbeddingMatrix;

/// What each key is paired with.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Values(EmbeddingMatrix),
    Labels { labels: Vec<u32>, head: ClassHead },
}

/// Keys paired with either value embeddings or class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct KvDataset {
    name: String,
    keys: EmbeddingMatrix,
    targets: Targets,
}

impl KvDataset {
    pub fn with_values(
        name: impl Into<String>,
        keys: EmbeddingMatrix,
        values: EmbeddingMatrix,
    ) -> Result<Self> {
        if keys.rows() != values.rows() {
            return Err(Error::Dataset(format!(
                "{} keys but {} values",
                keys.rows(),
                values.rows()
            )));
        }
        Ok(Self {
            name: name.into(),
            keys,
            targets: Targets::Values(values),
        })
    }

    pub fn with_labels(
        name: impl Into<String>,
        keys: EmbeddingMatrix,
        labels: Vec<u32>,
        head: ClassHead,
    ) -> Result<Self> {
        if keys.rows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} keys but {} labels",
                keys.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| head.index_of(l).is_none()) {
            return Err(Error::Label(bad));
        }
        Ok(Self {
            name: name.into(),
            keys,
            targets: Targets::Labels { labels, head },
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn keys(&self) -> &EmbeddingMatrix {
        &self.keys
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn d_x(&self) -> usize {
        self.keys.cols()
    }

    pub fn d_y(&self) -> usize {
        match &self.targets {
            Targets::Values(v) => v.cols(),
            Targets::Labels { head, .. } => head.d_y(),
        }
    }

    pub fn labels(&self) -> Option<&[u32]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn head(&self) -> Option<&ClassHead> {
        match &self.targets {
            Targets::Labels { head, .. } => Some(head),
            Targets::Values(_) => None,
        }
    }

    /// Per-row value embeddings; labeled rows map to their class embedding.
    pub fn value_matrix(&self) -> Result<EmbeddingMatrix> {
        match &self.targets {
            Targets::Values(v) => Ok(v.clone()),
            Targets::Labels { labels, head } => head.values_for(labels),
        }
    }

    /// Rows at `indices`, in that order, sharing the class head.
    pub fn select(&self, indices: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Values(v) => Targets::Values(v.select_rows(indices)),
            Targets::Labels { labels, head } => Targets::Labels {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                head: head.clone(),
            },
        };
        Self {
            name: self.name.clone(),
            keys: self.keys.select_rows(indices),
            targets,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_dataset_validation() {
        let head = ClassHead::from_values(EmbeddingMatrix::identity(2)).unwrap();
        let keys = EmbeddingMatrix::identity(2);
        assert!(matches!(
            KvDataset::with_labels("x", keys.clone(), vec![0, 5], head.clone()),
            Err(Error::Label(5))
        ));
        assert!(KvDataset::with_labels("x", keys.clone(), vec![0], head.clone()).is_err());
        let ds = KvDataset::with_labels("x", keys, vec![1, 0], head).unwrap();
        assert_eq!(ds.d_y(), 2);
        assert_eq!(ds.value_matrix().unwrap().row(0), &[0.0, 1.0]);
        assert_eq!(ds.select(&[1]).labels(), Some(&[0u32][..]));
    }
}
