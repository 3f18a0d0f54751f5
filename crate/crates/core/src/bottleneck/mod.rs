//! Concept-bottleneck classifier.
//!
//! An image embedding `x` is scored against every selected concept, `g = x · E_C^T`, and the
//! scores are mapped to class logits through a class-normalized weight matrix:
//! `logits = g · softmax_over_classes(W)^T`. Only `W` is learned.

mod artifact;
mod explain;
mod train;

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::dataset::LabeledImageSet;
use crate::embedding::{dot, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::pool::{ConceptPool, ConceptSubset};

pub use explain::{explain, influence, ConceptRecord, Explanation, InfluenceVector};
pub use train::{
    loss, loss_and_gradient, score_matrix, train, train_observed, TrainConfig, TrainReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckModel {
    concept_embeddings: EmbeddingMatrix,
    weights: Array2<f64>,
    sigma: Array2<f64>,
    class_names: Vec<String>,
    concept_texts: Vec<String>,
    memberships: Vec<BTreeSet<usize>>,
    train_config: Option<TrainConfig>,
}

impl BottleneckModel {
    /// Assembles a model, checking that every component agrees on |Y| and |C|.
    pub fn from_parts(
        concept_embeddings: EmbeddingMatrix,
        weights: Array2<f64>,
        class_names: Vec<String>,
        concept_texts: Vec<String>,
        memberships: Vec<BTreeSet<usize>>,
        train_config: Option<TrainConfig>,
    ) -> Result<Self> {
        let n_concepts = concept_embeddings.rows();
        if weights.dim() != (class_names.len(), n_concepts) {
            return Err(Error::Contract(format!(
                "weight matrix is {:?}, expected ({}, {n_concepts})",
                weights.dim(),
                class_names.len()
            )));
        }
        if concept_texts.len() != n_concepts || memberships.len() != n_concepts {
            return Err(Error::Contract(format!(
                "{n_concepts} concepts but {} texts and {} membership sets",
                concept_texts.len(),
                memberships.len()
            )));
        }
        if let Some(bad) = memberships
            .iter()
            .flatten()
            .find(|&&y| y >= class_names.len())
        {
            return Err(Error::Contract(format!(
                "membership references class {bad} of {}",
                class_names.len()
            )));
        }
        let sigma = column_softmax(&weights)?;
        Ok(Self {
            concept_embeddings,
            weights,
            sigma,
            class_names,
            concept_texts,
            memberships,
            train_config,
        })
    }

    /// Stacks the embeddings of the selected concepts into `E_C` and sets
    /// `W[y][c] = 1` if class `y` selected concept `c`, else `0`.
    pub fn initialize(
        subset: &ConceptSubset,
        pool: &ConceptPool,
        concept_embeddings: &EmbeddingMatrix,
    ) -> Result<Self> {
        if subset.num_classes() != pool.num_classes() {
            return Err(Error::Contract(format!(
                "subset covers {} classes, pool has {}",
                subset.num_classes(),
                pool.num_classes()
            )));
        }
        let rows: Vec<usize> = subset
            .union()
            .iter()
            .map(|&c| pool.concept(c).embedding_row)
            .collect();
        let e_c = concept_embeddings.select_rows(&rows)?;
        let texts = subset
            .union()
            .iter()
            .map(|&c| pool.concept(c).text.clone())
            .collect();
        let mut weights = Array2::zeros((pool.num_classes(), subset.len()));
        for (c, members) in subset.memberships().iter().enumerate() {
            for &y in members {
                weights[[y, c]] = 1.0;
            }
        }
        Self::from_parts(
            e_c,
            weights,
            pool.class_names().to_vec(),
            texts,
            subset.memberships().to_vec(),
            None,
        )
    }

    /// Same model with new weights.
    pub fn with_weights(&self, weights: Array2<f64>) -> Result<Self> {
        Self::from_parts(
            self.concept_embeddings.clone(),
            weights,
            self.class_names.clone(),
            self.concept_texts.clone(),
            self.memberships.clone(),
            self.train_config.clone(),
        )
    }

    /// Rounds `W` to `f32` precision, the precision it is stored at on disk.
    pub fn round_weights_to_f32(&self) -> Result<Self> {
        self.with_weights(self.weights.mapv(|w| f64::from(w as f32)))
    }

    pub fn concept_embeddings(&self) -> &EmbeddingMatrix {
        &self.concept_embeddings
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// `W` softmaxed over classes for each concept.
    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn concept_ids(&self) -> &[String] {
        self.concept_embeddings.ids()
    }

    pub fn concept_texts(&self) -> &[String] {
        &self.concept_texts
    }

    pub fn memberships(&self) -> &[BTreeSet<usize>] {
        &self.memberships
    }

    pub fn train_config(&self) -> Option<&TrainConfig> {
        self.train_config.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_embeddings.rows()
    }

    pub(crate) fn set_train_config(&mut self, config: TrainConfig) {
        self.train_config = Some(config);
    }
}

/// Softmax over classes (rows) for each concept column, stabilized by the column max.
pub fn column_softmax(weights: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Contract(format!("non-finite weight {bad}")));
    }
    let mut out = weights.clone();
    for mut col in out.columns_mut() {
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|w| (w - max).exp());
        let total: f64 = col.iter().sum();
        col.mapv_inplace(|e| e / total);
    }
    Ok(out)
}

/// Concept scores `g[c] = x · E_C[c]`.
pub fn concept_scores(image: &[f32], model: &BottleneckModel) -> Result<Vec<f64>> {
    let e_c = model.concept_embeddings();
    if image.len() != e_c.dim() {
        return Err(Error::Contract(format!(
            "image dimension {} does not match concept dimension {}",
            image.len(),
            e_c.dim()
        )));
    }
    Ok(e_c.iter_rows().map(|row| dot(image, row)).collect())
}

/// Class logits `g · sigma(W)^T` for concept scores `g`.
pub fn logits_from_scores(scores: &[f64], sigma: &Array2<f64>) -> Vec<f64> {
    sigma
        .rows()
        .into_iter()
        .map(|row| scores.iter().zip(row).map(|(g, s)| g * s).sum())
        .collect()
}

pub fn forward(image: &[f32], model: &BottleneckModel) -> Result<Vec<f64>> {
    let g = concept_scores(image, model)?;
    Ok(logits_from_scores(&g, model.sigma()))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(image: &[f32], model: &BottleneckModel) -> Result<usize> {
    Ok(argmax(&forward(image, model)?))
}

/// Fraction of `test_set` whose predicted class equals its label.
pub fn evaluate(test_set: &LabeledImageSet, model: &BottleneckModel) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty set".into()));
    }
    let emb = test_set.embeddings();
    let mut correct = 0usize;
    for (i, &label) in test_set.labels().iter().enumerate() {
        if predict(emb.row(i), model)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}
