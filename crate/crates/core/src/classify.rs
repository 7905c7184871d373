//! Classification on top of fast weights or memory retrieval, plus full-data
//! and k-way n-shot episodic evaluation.
//!
//! Class `c` is represented by a value embedding `v_c`; a query embedding `h`
//! scores class `c` with logit `hᵀv_c` and probabilities are the softmax of
//! the logits. Support pairs are `(key, v_label)`.

use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast_weights::{compile, merge_with_prior, FastWeights, PriorHead};
use crate::linalg::SpectralPolicy;
use crate::retrieval::{
    centered_linear_retrieve, knn_retrieve, linear_retrieve_with, softmax_retrieve, MemoryStore,
    NormalizedMap,
};
use crate::tensor::{dot, EmbeddingMatrix};

/// Class value embeddings (one row per class) with ids and display names.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassHead {
    ids: Vec<u32>,
    names: Vec<String>,
    values: EmbeddingMatrix,
    index: HashMap<u32, usize>,
}

impl ClassHead {
    pub fn new(ids: Vec<u32>, names: Vec<String>, values: EmbeddingMatrix) -> Result<Self> {
        let c = values.rows();
        if c < 2 {
            return Err(Error::InvalidInput(format!(
                "a class head needs at least 2 classes, got {c}"
            )));
        }
        if ids.len() != c || names.len() != c {
            return Err(Error::shape(format!(
                "{} ids and {} names for {c} class embeddings",
                ids.len(),
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(c);
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate class id {id}")));
            }
        }
        Ok(Self {
            ids,
            names,
            values,
            index,
        })
    }

    /// Ids `0..C` named `class_<id>`.
    pub fn from_values(values: EmbeddingMatrix) -> Result<Self> {
        let c = values.rows();
        let ids = (0..c as u32).collect();
        let names = (0..c).map(|i| format!("class_{i}")).collect();
        Self::new(ids, names, values)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &EmbeddingMatrix {
        &self.values
    }

    pub fn d_y(&self) -> usize {
        self.values.cols()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Value embedding rows for each label.
    pub fn values_for(&self, labels: &[u32]) -> Result<EmbeddingMatrix> {
        let rows = labels
            .iter()
            .map(|&l| self.index_of(l).ok_or(Error::Label(l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.values.select_rows(&rows))
    }

    /// Head restricted to the given class positions, in that order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        Self::new(
            positions.iter().map(|&p| self.ids[p]).collect(),
            positions.iter().map(|&p| self.names[p].clone()).collect(),
            self.values.select_rows(positions),
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.scale(factor),
            ..self.clone()
        }
    }

    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.d_y() {
            return Err(Error::shape(format!(
                "embedding of length {} against {}-dimensional class values",
                h.len(),
                self.d_y()
            )));
        }
        Ok(self.values.row_iter().map(|v| dot(h, v)).collect())
    }

    /// Position of the highest logit; ties go to the lowest position.
    pub fn predict(&self, h: &[f64]) -> Result<usize> {
        let logits = self.logits(h)?;
        Ok(argmax(&logits))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `softmax_c(hᵀv_c)`.
pub fn class_probabilities(h: &[f64], head: &ClassHead) -> Result<Vec<f64>> {
    Ok(crate::retrieval::softmax(&head.logits(h)?))
}

/// Prior count used for classification heads: 40 per class.
pub fn default_prior_count(classes: usize) -> f64 {
    40.0 * classes as f64
}

/// How support examples are turned into a query embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FastWeights,
    Knn {
        k: usize,
    },
    SoftmaxMemory {
        temperature: f64,
    },
    CenteredLinear,
    /// Uncentered linear attention, kept for ablations.
    Linear,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FastWeights => "fast_weights",
            Method::Knn { .. } => "knn",
            Method::SoftmaxMemory { .. } => "softmax_memory",
            Method::CenteredLinear => "centered_linear",
            Method::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug)]
enum Fitted {
    Weights(FastWeights),
    Memory(MemoryStore),
}

/// A classifier fitted on one support set.
#[derive(Clone, Debug)]
pub struct FittedModel {
    method: Method,
    fitted: Fitted,
    head: ClassHead,
    prior: Option<PriorHead>,
    support_count: f64,
}

/// Fits `method` on labeled support keys.
///
/// Fast weights are compiled from `(key, v_label)` pairs and merged with the
/// prior in weight space. Memory methods keep the pairs and blend the
/// retrieved embedding with the prior's `qᵀW₀` using the same counts.
pub fn fit(
    method: Method,
    support_keys: &EmbeddingMatrix,
    support_labels: &[u32],
    head: &ClassHead,
    policy: &SpectralPolicy,
    prior: Option<&PriorHead>,
) -> Result<FittedModel> {
    if support_keys.rows() == 0 {
        return Err(Error::InvalidInput("support set is empty".into()));
    }
    if support_keys.rows() != support_labels.len() {
        return Err(Error::shape(format!(
            "{} support keys but {} labels",
            support_keys.rows(),
            support_labels.len()
        )));
    }
    if let Some(p) = prior {
        if p.weights().shape() != (support_keys.cols(), head.d_y()) {
            return Err(Error::shape(format!(
                "prior head is {}x{}, task is {}x{}",
                p.weights().rows(),
                p.weights().cols(),
                support_keys.cols(),
                head.d_y()
            )));
        }
    }
    let values = head.values_for(support_labels)?;
    let support_count = support_keys.rows() as f64;

    let fitted = match method {
        Method::FastWeights => {
            let task = compile(support_keys, &values, policy, None)?;
            Fitted::Weights(match prior {
                Some(p) => merge_with_prior(&task, p)?,
                None => task,
            })
        }
        Method::Knn { k: 0 } => {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        Method::SoftmaxMemory { temperature }
            if !(temperature > 0.0 && temperature.is_finite()) =>
        {
            return Err(Error::InvalidInput(format!(
                "temperature {temperature} must be positive"
            )));
        }
        _ => Fitted::Memory(MemoryStore::new(
            support_keys.clone(),
            values,
            Some(support_labels.to_vec()),
        )?),
    };
    Ok(FittedModel {
        method,
        fitted,
        head: head.clone(),
        prior: prior.cloned(),
        support_count,
    })
}

impl FittedModel {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn head(&self) -> &ClassHead {
        &self.head
    }

    /// The predicted output embedding `h` for a query key.
    pub fn embed(&self, query: &[f64]) -> Result<Vec<f64>> {
        let store = match &self.fitted {
            Fitted::Weights(fw) => return fw.apply(query),
            Fitted::Memory(store) => store,
        };
        let retrieved = match self.method {
            Method::Knn { k } => knn_retrieve(store, query, k)?.output,
            Method::SoftmaxMemory { temperature } => {
                softmax_retrieve(store, query, temperature)?.output
            }
            Method::CenteredLinear => match centered_linear_retrieve(store, query) {
                Ok(r) => r.output,
                Err(Error::DegenerateScores(_)) => vec![0.0; self.head.d_y()],
                Err(e) => return Err(e),
            },
            Method::Linear => match linear_retrieve_with(store, query, &NormalizedMap) {
                Ok(r) => r.output,
                Err(Error::DegenerateScores(_)) => vec![0.0; self.head.d_y()],
                Err(e) => return Err(e),
            },
            Method::FastWeights => unreachable!("fast weights are never stored as memory"),
        };
        match &self.prior {
            Some(p) if p.n0() > 0.0 => {
                let h0 = p.weights().vecmat(query)?;
                let total = p.n0() + self.support_count;
                Ok(h0
                    .iter()
                    .zip(&retrieved)
                    .map(|(a, b)| (p.n0() * a + self.support_count * b) / total)
                    .collect())
            }
            _ => Ok(retrieved),
        }
    }

    pub fn probabilities(&self, query: &[f64]) -> Result<Vec<f64>> {
        class_probabilities(&self.embed(query)?, &self.head)
    }

    /// Predicted class id.
    pub fn predict(&self, query: &[f64]) -> Result<u32> {
        let pos = self.head.predict(&self.embed(query)?)?;
        Ok(self.head.ids()[pos])
    }
}

/// Accuracy summary. `ci95 = 1.96·s/√n` over per-episode accuracies, with
/// `s` the sample standard deviation (zero for a single episode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub ci95: f64,
    pub episodes_run: usize,
    pub per_episode_accuracies: Vec<f64>,
}

impl EvalReport {
    pub fn from_episodes(per_episode_accuracies: Vec<f64>) -> Self {
        let n = per_episode_accuracies.len();
        let accuracy = if n == 0 {
            0.0
        } else {
            per_episode_accuracies.iter().sum::<f64>() / n as f64
        };
        let ci95 = if n < 2 {
            0.0
        } else {
            let var = per_episode_accuracies
                .iter()
                .map(|a| (a - accuracy).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        };
        Self {
            accuracy,
            ci95,
            episodes_run: n,
            per_episode_accuracies,
        }
    }
}

fn accuracy_on(model: &FittedModel, keys: &EmbeddingMatrix, labels: &[u32]) -> Result<f64> {
    if keys.rows() == 0 {
        return Err(Error::InvalidInput("query set is empty".into()));
    }
    if keys.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} query keys but {} labels",
            keys.rows(),
            labels.len()
        )));
    }
    let mut correct = 0usize;
    for (row, &label) in keys.row_iter().zip(labels) {
        if model.predict(row)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Accuracy of a fitted model on every query, as a single pseudo-episode.
pub fn evaluate_full(
    model: &FittedModel,
    query_keys: &EmbeddingMatrix,
    query_labels: &[u32],
) -> Result<EvalReport> {
    Ok(EvalReport::from_episodes(vec![accuracy_on(
        model,
        query_keys,
        query_labels,
    )?]))
}

/// k-way n-shot protocol parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.shot < 1 || self.queries_per_class < 1 || self.episodes < 1 {
            return Err(Error::InvalidInput(format!(
                "episode spec needs way ≥ 2, shot ≥ 1, queries ≥ 1, episodes ≥ 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Seed for episode `e`: a splitmix64 finalizer over the base seed and index.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut z = seed ^ (episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One sampled episode: row indices into the pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Positions in the head of the sampled classes.
    pub classes: Vec<usize>,
    pub support: Vec<usize>,
    pub queries: Vec<usize>,
}

/// Draws episode `e` deterministically from `(spec.seed, e)`.
///
/// `by_class[p]` lists the pool rows of the class at head position `p`;
/// only classes with at least `shot + queries_per_class` rows are eligible.
pub fn sample_episode(by_class: &[Vec<usize>], spec: &EpisodeSpec, e: usize) -> Result<Episode> {
    let need = spec.shot + spec.queries_per_class;
    let eligible: Vec<usize> = (0..by_class.len())
        .filter(|&p| by_class[p].len() >= need)
        .collect();
    if eligible.len() < spec.way {
        return Err(Error::Dataset(format!(
            "{}-way episodes need {} classes with at least {need} examples, found {}",
            spec.way,
            spec.way,
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(spec.seed, e));
    let classes: Vec<usize> = index::sample(&mut rng, eligible.len(), spec.way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let mut support = Vec::with_capacity(spec.way * spec.shot);
    let mut queries = Vec::with_capacity(spec.way * spec.queries_per_class);
    for &c in &classes {
        let rows = &by_class[c];
        let picked = index::sample(&mut rng, rows.len(), need).into_vec();
        support.extend(picked[..spec.shot].iter().map(|&i| rows[i]));
        queries.extend(picked[spec.shot..].iter().map(|&i| rows[i]));
    }
    Ok(Episode {
        classes,
        support,
        queries,
    })
}

/// Groups pool rows by the head position of their label.
pub fn rows_by_class(labels: &[u32], head: &ClassHead) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); head.len()];
    for (row, &l) in labels.iter().enumerate() {
        let p = head.index_of(l).ok_or(Error::Label(l))?;
        by_class[p].push(row);
    }
    Ok(by_class)
}

/// Runs `spec.episodes` independent episodes and aggregates their accuracies
/// in episode order. Episodes run on the rayon pool; results do not depend
/// on the number of workers.
pub fn run_episodes(
    keys: &EmbeddingMatrix,
    labels: &[u32],
    head: &ClassHead,
    spec: &EpisodeSpec,
    method: Method,
    policy: &SpectralPolicy,
    prior: Option<&PriorHead>,
) -> Result<EvalReport> {
    spec.validate()?;
    if keys.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} keys but {} labels",
            keys.rows(),
            labels.len()
        )));
    }
    let by_class = rows_by_class(labels, head)?;
    // Fail early and deterministically on an unusable pool.
    sample_episode(&by_class, spec, 0)?;

    let accuracies = (0..spec.episodes)
        .into_par_iter()
        .map(|e| {
            let ep = sample_episode(&by_class, spec, e)?;
            let local_head = head.subset(&ep.classes)?;
            let support_labels: Vec<u32> = ep.support.iter().map(|&r| labels[r]).collect();
            let query_labels: Vec<u32> = ep.queries.iter().map(|&r| labels[r]).collect();
            let model = fit(
                method,
                &keys.select_rows(&ep.support),
                &support_labels,
                &local_head,
                policy,
                prior,
            )?;
            accuracy_on(&model, &keys.select_rows(&ep.queries), &query_labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalReport::from_episodes(accuracies))
}
