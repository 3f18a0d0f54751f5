//! JSON/CSV report types. Every report echoes the resolved configuration.

use std::fs;
use std::path::Path;

use cbm_core::bottleneck::Explanation;
use cbm_core::Shots;
use indexmap::IndexMap;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types always serialize");
    out.push(b'\n');
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Output {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Output {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json(value))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConceptScore {
    pub class: String,
    pub text: String,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSim {
    /// `sim(y, c)` for every pool concept, in `concept_order`.
    pub sim: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActivationEntry {
    pub id: String,
    pub text: String,
    pub class: String,
    #[serde(rename = "V")]
    pub v: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub config: PipelineConfig,
    pub shots: Shots,
    pub seed: u64,
    pub scored_images: usize,
    pub target_images: usize,
    pub concept_order: Vec<String>,
    pub concepts: IndexMap<String, ConceptScore>,
    pub classes: IndexMap<String, ClassSim>,
    pub highest_v: Vec<ActivationEntry>,
    pub lowest_v: Vec<ActivationEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectedConcept {
    pub id: String,
    pub text: String,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub candidates: usize,
    pub concepts: Vec<SelectedConcept>,
    /// Objective value after each pick.
    pub objective_trace: Vec<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnionEntry {
    pub id: String,
    pub text: String,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub config: PipelineConfig,
    pub shots: Shots,
    pub seed: u64,
    pub classes: Vec<ClassReport>,
    pub num_concepts: usize,
    pub union: Vec<UnionEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub config: PipelineConfig,
    pub shots: Shots,
    pub seed: u64,
    pub num_concepts: usize,
    pub train_images: usize,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub shots: Shots,
    pub seed: u64,
    pub num_concepts: usize,
    pub train_images: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: PipelineConfig,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("shots,seed,num_concepts,train_images,train_accuracy,test_accuracy,final_loss\n");
        for r in &self.rows {
            let test = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.shots, r.seed, r.num_concepts, r.train_images, r.train_accuracy, test, r.final_loss
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub id: String,
    pub predicted_index: usize,
    pub predicted_class: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub config: PipelineConfig,
    pub model: String,
    pub class_names: Vec<String>,
    /// Present when every image has a label.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplanationReport {
    pub config: PipelineConfig,
    pub model: String,
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub explanation: Explanation,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub images: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub model: String,
    pub images: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
}
