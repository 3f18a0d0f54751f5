use serde::Serialize;

use super::{argmax, concept_scores, logits_from_scores, BottleneckModel};
use crate::error::{Error, Result};

/// Per-concept contribution to one class logit: `P_y[c] = g[c] * sigma(W)[y][c]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceVector {
    pub class: usize,
    pub values: Vec<f64>,
    /// Concept indices by descending influence, ties by index.
    pub ranking: Vec<usize>,
}

impl InfluenceVector {
    /// Sum of all contributions, accumulated in concept order. Equals the class logit.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut ranking: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps index order among equal values.
    ranking.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    ranking
}

fn influence_from_scores(g: &[f64], class: usize, model: &BottleneckModel) -> InfluenceVector {
    let values: Vec<f64> = g
        .iter()
        .zip(model.sigma().row(class))
        .map(|(g, s)| g * s)
        .collect();
    let ranking = rank_descending(&values);
    InfluenceVector {
        class,
        values,
        ranking,
    }
}

pub fn influence(image: &[f32], class: usize, model: &BottleneckModel) -> Result<InfluenceVector> {
    if class >= model.num_classes() {
        return Err(Error::Contract(format!(
            "class {class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let g = concept_scores(image, model)?;
    Ok(influence_from_scores(&g, class, model))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptRecord {
    pub id: String,
    pub text: String,
    pub g: f64,
    pub sigma_w: f64,
    pub influence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassLogit {
    pub class: String,
    pub logit: f64,
}

/// Prediction with the most influential concepts for the predicted class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub predicted_index: usize,
    pub predicted_class: String,
    pub logits: Vec<ClassLogit>,
    /// Sum of influence over every concept for the predicted class.
    pub total_influence: f64,
    pub top_concepts: Vec<ConceptRecord>,
}

pub fn explain(image: &[f32], model: &BottleneckModel, top_k: usize) -> Result<Explanation> {
    if top_k > model.num_concepts() {
        return Err(Error::Contract(format!(
            "top_k = {top_k} exceeds the {} concepts in the model",
            model.num_concepts()
        )));
    }
    let g = concept_scores(image, model)?;
    let logits = logits_from_scores(&g, model.sigma());
    let predicted = argmax(&logits);
    let infl = influence_from_scores(&g, predicted, model);
    let top_concepts = infl.ranking[..top_k]
        .iter()
        .map(|&c| ConceptRecord {
            id: model.concept_ids()[c].clone(),
            text: model.concept_texts()[c].clone(),
            g: g[c],
            sigma_w: model.sigma()[[predicted, c]],
            influence: infl.values[c],
        })
        .collect();
    Ok(Explanation {
        predicted_index: predicted,
        predicted_class: model.class_names()[predicted].clone(),
        logits: model
            .class_names()
            .iter()
            .zip(&logits)
            .map(|(name, &logit)| ClassLogit {
                class: name.clone(),
                logit,
            })
            .collect(),
        total_influence: infl.total(),
        top_concepts,
    })
}
