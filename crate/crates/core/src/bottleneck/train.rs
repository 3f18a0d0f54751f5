use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, column_softmax, concept_scores, logits_from_scores, BottleneckModel};
use crate::dataset::{few_shot_sample, LabeledImageSet, Shots};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pool::{ConceptPool, ConceptSubset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub shots: Shots,
    pub seed: u64,
    /// One update per epoch on the mean loss. When false, one update per image in a
    /// seeded shuffled order.
    pub full_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            shots: Shots::Full,
            seed: 0,
            full_batch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Selection(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss before each epoch, followed by the loss after the last one.
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
    /// Number of training images after few-shot sampling.
    pub train_images: usize,
}

/// N×|C| matrix of concept scores for every image in `images`.
pub fn score_matrix(images: &EmbeddingMatrix, model: &BottleneckModel) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((images.rows(), model.num_concepts()));
    for (i, x) in images.iter_rows().enumerate() {
        let g = concept_scores(x, model)?;
        out.row_mut(i).iter_mut().zip(g).for_each(|(o, v)| *o = v);
    }
    Ok(out)
}

fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits[label];
    let probs = exps.into_iter().map(|e| e / total).collect();
    (loss, probs)
}

/// Mean softmax cross-entropy of the logits `scores · softmax_classes(W)^T`.
pub fn loss(scores: &Array2<f64>, labels: &[usize], weights: &Array2<f64>) -> Result<f64> {
    let sigma = column_softmax(weights)?;
    let mut total = 0.0;
    for (row, &label) in scores.rows().into_iter().zip(labels) {
        let g: Vec<f64> = row.to_vec();
        total += cross_entropy(&logits_from_scores(&g, &sigma), label).0;
    }
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to `W`.
///
/// With `S = softmax_classes(W)` and `G = dL/dS`, the column softmax backward pass is
/// `dL/dW[y][c] = S[y][c] * (G[y][c] - sum_y' S[y'][c] G[y'][c])`.
pub fn loss_and_gradient(
    scores: &Array2<f64>,
    labels: &[usize],
    weights: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let n = labels.len();
    if n == 0 || scores.nrows() != n {
        return Err(Error::Contract(format!(
            "{} score rows for {n} labels",
            scores.nrows()
        )));
    }
    let sigma = column_softmax(weights)?;
    let (n_classes, n_concepts) = sigma.dim();
    let mut grad_sigma = Array2::<f64>::zeros((n_classes, n_concepts));
    let mut total = 0.0;
    for (row, &label) in scores.rows().into_iter().zip(labels) {
        let g: Vec<f64> = row.to_vec();
        let (l, probs) = cross_entropy(&logits_from_scores(&g, &sigma), label);
        total += l;
        for (y, p) in probs.iter().enumerate() {
            let dz = (p - if y == label { 1.0 } else { 0.0 }) / n as f64;
            for (c, gc) in g.iter().enumerate() {
                grad_sigma[[y, c]] += dz * gc;
            }
        }
    }
    let mut grad = Array2::zeros((n_classes, n_concepts));
    for c in 0..n_concepts {
        let inner: f64 = (0..n_classes)
            .map(|y| sigma[[y, c]] * grad_sigma[[y, c]])
            .sum();
        for y in 0..n_classes {
            grad[[y, c]] = sigma[[y, c]] * (grad_sigma[[y, c]] - inner);
        }
    }
    Ok((total / n as f64, grad))
}

/// Trains `W` on a few-shot sample of `train_set`. See [`train_observed`].
pub fn train(
    train_set: &LabeledImageSet,
    subset: &ConceptSubset,
    pool: &ConceptPool,
    concept_embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<(BottleneckModel, TrainReport)> {
    train_observed(train_set, subset, pool, concept_embeddings, config, |_, _| {})
}

/// Samples `config.shots` images per class, initializes `W` from class membership and runs
/// gradient descent on the mean cross-entropy. `E_C` stays fixed.
///
/// `observer` is called with `(0, W_init)` and then `(epoch, W)` after every epoch.
pub fn train_observed(
    train_set: &LabeledImageSet,
    subset: &ConceptSubset,
    pool: &ConceptPool,
    concept_embeddings: &EmbeddingMatrix,
    config: &TrainConfig,
    mut observer: impl FnMut(usize, &Array2<f64>),
) -> Result<(BottleneckModel, TrainReport)> {
    config.validate()?;
    let sample = few_shot_sample(train_set, config.shots, config.seed)?;
    if sample.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut model = BottleneckModel::initialize(subset, pool, concept_embeddings)?;
    model.set_train_config(config.clone());
    let scores = score_matrix(sample.embeddings(), &model)?;
    let labels = sample.labels();

    let mut weights = model.weights().clone();
    let mut trace = Vec::with_capacity(config.epochs + 1);
    observer(0, &weights);
    // Separate stream from the sampler so changing the batch mode never changes the sample.
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..config.epochs {
        let (l, grad) = loss_and_gradient(&scores, labels, &weights)?;
        if !l.is_finite() {
            return Err(Error::Divergence { epoch, loss: l });
        }
        trace.push(l);
        if config.full_batch {
            weights.scaled_add(-config.learning_rate, &grad);
        } else {
            order.shuffle(&mut order_rng);
            for &i in &order {
                let row = scores.select(ndarray::Axis(0), &[i]);
                let (_, g) = loss_and_gradient(&row, &labels[i..=i], &weights)?;
                weights.scaled_add(-config.learning_rate, &g);
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        observer(epoch + 1, &weights);
    }
    let final_loss = loss(&scores, labels, &weights)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            loss: final_loss,
        });
    }
    trace.push(final_loss);

    let model = model.with_weights(weights)?;
    let correct = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(g, &y)| argmax(&logits_from_scores(&g.to_vec(), model.sigma())) == y)
        .count();
    let report = TrainReport {
        loss_trace: trace,
        train_accuracy: correct as f64 / labels.len() as f64,
        train_images: labels.len(),
    };
    Ok((model, report))
}
