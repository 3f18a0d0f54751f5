//! Per-concept scores consumed by selection: class similarity, conditional likelihood,
//! discriminability, visual activation, and the concept-concept kernel.
//!
//! All reductions run sequentially in index order with `f64` accumulators, so a score table
//! is a pure function of its inputs down to the last bit.

use ndarray::Array2;
use rayon::prelude::*;

use crate::dataset::LabeledImageSet;
use crate::embedding::{dot, EmbeddingMatrix, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::pool::ConceptPool;

/// Floor applied to class similarities before they are normalized into a distribution.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Allowed deviation of a likelihood column from a proper distribution.
const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Mean image-concept dot product per class: entry `(y, c)` averages `x · c` over images labeled `y`.
pub fn class_concept_similarity(
    images: &LabeledImageSet,
    concepts: &EmbeddingMatrix,
) -> Result<Array2<f64>> {
    let emb = images.embeddings();
    if emb.dim() != concepts.dim() {
        return Err(Error::Contract(format!(
            "image dimension {} does not match concept dimension {}",
            emb.dim(),
            concepts.dim()
        )));
    }
    let d = emb.dim();
    let mut out = Array2::zeros((images.num_classes(), concepts.rows()));
    for class in 0..images.num_classes() {
        let members = images.class_members(class);
        if members.is_empty() {
            return Err(Error::EmptyClass {
                class: images.class_names()[class].clone(),
            });
        }
        let mut mean = vec![0.0f64; d];
        for &i in &members {
            for (m, &x) in mean.iter_mut().zip(emb.row(i)) {
                *m += f64::from(x);
            }
        }
        let n = members.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        for (c, row) in concepts.iter_rows().enumerate() {
            out[[class, c]] = mean
                .iter()
                .zip(row)
                .map(|(m, &t)| m * f64::from(t))
                .sum();
        }
    }
    Ok(out)
}

/// Clamps every entry to at least `epsilon`, then normalizes each column to sum to one.
pub fn conditional_likelihood(sim: &Array2<f64>, epsilon: f64) -> Array2<f64> {
    let mut out = sim.mapv(|v| v.max(epsilon));
    for mut col in out.columns_mut() {
        let total: f64 = col.iter().sum();
        col.mapv_inplace(|v| v / total);
    }
    out
}

/// Negative entropy `Σ p ln p` of each column, with `0 ln 0 = 0`.
pub fn discriminability(cond: &Array2<f64>) -> Result<Vec<f64>> {
    cond.columns()
        .into_iter()
        .enumerate()
        .map(|(c, col)| {
            let total: f64 = col.iter().sum();
            if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE || col.iter().any(|&p| p < 0.0) {
                return Err(Error::Contract(format!(
                    "likelihood column {c} is not a distribution (sum {total})"
                )));
            }
            Ok(col
                .iter()
                .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
                .sum())
        })
        .collect()
}

/// Population standard deviation of `concept · x` over the target images.
pub fn visual_activation(concept: &[f32], target: &EmbeddingMatrix) -> Result<f64> {
    if target.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "visual activation needs at least 2 target images, got {}",
            target.rows()
        )));
    }
    if concept.len() != target.dim() {
        return Err(Error::Contract(format!(
            "concept dimension {} does not match target dimension {}",
            concept.len(),
            target.dim()
        )));
    }
    let scores: Vec<f64> = target.iter_rows().map(|x| dot(concept, x)).collect();
    // Two passes over scores shifted by the first one; a constant set yields exactly zero.
    let shift = scores[0];
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s - shift).sum::<f64>() / n;
    let var = scores
        .iter()
        .map(|s| {
            let d = (s - shift) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(var.sqrt())
}

/// Visual activation for every row of `concepts`. Rows are independent, so this runs in parallel.
pub fn visual_activations(concepts: &EmbeddingMatrix, target: &EmbeddingMatrix) -> Result<Vec<f64>> {
    (0..concepts.rows())
        .into_par_iter()
        .map(|c| visual_activation(concepts.row(c), target))
        .collect()
}

/// Cosine kernel between unit-norm concept embeddings.
pub fn concept_similarity_kernel(concepts: &EmbeddingMatrix) -> Result<Array2<f64>> {
    concepts.check_unit_norm(UNIT_NORM_TOLERANCE)?;
    let n = concepts.rows();
    let mut phi = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = dot(concepts.row(i), concepts.row(j));
            phi[[i, j]] = v;
            phi[[j, i]] = v;
        }
    }
    Ok(phi)
}

/// Scores for the candidates of a single class, indexed locally `0..|S_y|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub class: usize,
    /// Pool indices of the candidates, in pool order.
    pub concepts: Vec<usize>,
    /// |Y|×|S_y| class-concept similarity.
    pub class_concept_sim: Array2<f64>,
    /// |Y|×|S_y| conditional likelihood of each class given the concept.
    pub cond_likelihood: Array2<f64>,
    pub discriminability: Vec<f64>,
    pub visual_activation: Vec<f64>,
    /// |S_y|×|S_y| concept similarity.
    pub phi: Array2<f64>,
}

impl ScoreTable {
    /// A table with only the terms the selection objective reads. Used for synthetic instances.
    pub fn from_terms(
        discriminability: Vec<f64>,
        visual_activation: Vec<f64>,
        phi: Array2<f64>,
    ) -> Result<Self> {
        let n = discriminability.len();
        if visual_activation.len() != n || phi.dim() != (n, n) {
            return Err(Error::Contract(format!(
                "inconsistent term sizes: |D| = {n}, |V| = {}, phi {:?}",
                visual_activation.len(),
                phi.dim()
            )));
        }
        Ok(Self {
            class: 0,
            concepts: (0..n).collect(),
            class_concept_sim: Array2::zeros((0, n)),
            cond_likelihood: Array2::zeros((0, n)),
            discriminability,
            visual_activation,
            phi,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Scores for every concept in a pool. Column `c` of each matrix is pool concept `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolScores {
    pub class_concept_sim: Array2<f64>,
    pub cond_likelihood: Array2<f64>,
    pub discriminability: Vec<f64>,
    pub visual_activation: Vec<f64>,
}

impl PoolScores {
    /// Computes similarity and discriminability from the labeled `images` and visual activation
    /// over the unlabeled `target` set.
    pub fn compute(
        pool: &ConceptPool,
        concept_embeddings: &EmbeddingMatrix,
        images: &LabeledImageSet,
        target: &EmbeddingMatrix,
        epsilon: f64,
    ) -> Result<Self> {
        if pool.num_classes() != images.num_classes() {
            return Err(Error::Reference(format!(
                "pool has {} classes, image labels declare {}",
                pool.num_classes(),
                images.num_classes()
            )));
        }
        let embs = concept_embeddings.select_rows(&pool.embedding_rows())?;
        let class_concept_sim = class_concept_similarity(images, &embs)?;
        let cond_likelihood = conditional_likelihood(&class_concept_sim, epsilon);
        let discriminability = discriminability(&cond_likelihood)?;
        let visual_activation = visual_activations(&embs, target)?;
        Ok(Self {
            class_concept_sim,
            cond_likelihood,
            discriminability,
            visual_activation,
        })
    }

    /// Restricts the pool scores to the candidates of `class` and adds their cosine kernel.
    ///
    /// The kernel is always taken between unit-normalized copies of the text embeddings, so it
    /// is a cosine whether or not the embeddings were normalized at load.
    pub fn class_table(
        &self,
        class: usize,
        pool: &ConceptPool,
        concept_embeddings: &EmbeddingMatrix,
    ) -> Result<ScoreTable> {
        let concepts = pool.class_concepts(class).to_vec();
        let rows: Vec<usize> = concepts
            .iter()
            .map(|&c| pool.concept(c).embedding_row)
            .collect();
        let phi = if concepts.is_empty() {
            Array2::zeros((0, 0))
        } else {
            concept_similarity_kernel(&concept_embeddings.select_rows(&rows)?.normalized()?)?
        };
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(1), &concepts);
        Ok(ScoreTable {
            class,
            class_concept_sim: pick(&self.class_concept_sim),
            cond_likelihood: pick(&self.cond_likelihood),
            discriminability: concepts.iter().map(|&c| self.discriminability[c]).collect(),
            visual_activation: concepts.iter().map(|&c| self.visual_activation[c]).collect(),
            concepts,
            phi,
        })
    }
}
