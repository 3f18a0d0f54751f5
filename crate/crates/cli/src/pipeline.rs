//! The subcommands, as functions from a resolved configuration to reports on disk.

use std::path::{Path, PathBuf};

use cbm_core::bottleneck::{self, evaluate, explain, forward, argmax};
use cbm_core::selection::SelectionOutcome;
use cbm_core::{
    few_shot_sample, select_all, BottleneckModel, ConceptPool, EmbeddingMatrix, Error, LabelFile,
    LabeledImageSet, PoolScores, Shots,
};
use indexmap::IndexMap;

use crate::config::{PipelineConfig, Settings};
use crate::error::{CliError, Result};
use crate::report::*;

/// Training data, concepts and target set, loaded and validated.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub images: LabeledImageSet,
    pub labels: LabelFile,
    pub concepts: EmbeddingMatrix,
    pub pool: ConceptPool,
    pub target: EmbeddingMatrix,
    pub test: Option<LabeledImageSet>,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let p = &cfg.paths;
        let normalize = cfg.scoring.normalize;
        let labels = LabelFile::load(p.require("labels")?)?;
        let images = LabeledImageSet::from_label_file(
            EmbeddingMatrix::load(p.require("images")?, normalize)?,
            &labels,
        )?;
        let concepts = EmbeddingMatrix::load(p.require("concepts")?, normalize)?;
        let pool = ConceptPool::load(p.require("pool")?, &concepts)?.align_classes(images.class_names())?;
        let target = match &p.target_set {
            Some(_) => EmbeddingMatrix::load(p.require("target_set")?, normalize)?,
            None => images.embeddings().clone(),
        };
        if target.dim() != images.embeddings().dim() || concepts.dim() != target.dim() {
            return Err(Error::Data(format!(
                "embedding dimensions differ: images {}, concepts {}, target set {}",
                images.embeddings().dim(),
                concepts.dim(),
                target.dim()
            ))
            .into());
        }
        let test = match &p.test_images {
            Some(_) => Some(LabeledImageSet::from_label_file(
                EmbeddingMatrix::load(p.require("test_images")?, normalize)?,
                &labels,
            )?),
            None => None,
        };
        Ok(Self {
            images,
            labels,
            concepts,
            pool,
            target,
            test,
        })
    }

    /// The labeled images scoring and training see for the configured shots and seed.
    pub fn sample(&self, cfg: &PipelineConfig) -> Result<LabeledImageSet> {
        Ok(few_shot_sample(&self.images, cfg.train.shots, cfg.train.seed)?)
    }
}

fn output(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.output_dir().join(name)
}

/// Indices ordered by `key`, ties kept in index order.
fn ranked(values: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    idx
}

pub fn score_report(cfg: &PipelineConfig, inputs: &Inputs, scores: &PoolScores, scored_images: usize) -> ScoreReport {
    let pool = &inputs.pool;
    let classes = pool.class_names();
    let mut concepts = IndexMap::new();
    for (i, c) in pool.concepts().iter().enumerate() {
        concepts.insert(
            c.id.clone(),
            ConceptScore {
                class: classes[c.class_index].clone(),
                text: c.text.clone(),
                d: scores.discriminability[i],
                v: scores.visual_activation[i],
            },
        );
    }
    let sims = classes
        .iter()
        .enumerate()
        .map(|(y, name)| {
            (
                name.clone(),
                ClassSim {
                    sim: scores.class_concept_sim.row(y).to_vec(),
                },
            )
        })
        .collect();
    let n = cfg.report.extremes.min(pool.len());
    let entry = |i: usize| {
        let c = pool.concept(i);
        ActivationEntry {
            id: c.id.clone(),
            text: c.text.clone(),
            class: classes[c.class_index].clone(),
            v: scores.visual_activation[i],
        }
    };
    ScoreReport {
        config: cfg.clone(),
        shots: cfg.train.shots,
        seed: cfg.train.seed,
        scored_images,
        target_images: inputs.target.rows(),
        concept_order: pool.concepts().iter().map(|c| c.id.clone()).collect(),
        concepts,
        classes: sims,
        highest_v: ranked(&scores.visual_activation, true)[..n].iter().map(|&i| entry(i)).collect(),
        lowest_v: ranked(&scores.visual_activation, false)[..n].iter().map(|&i| entry(i)).collect(),
    }
}

pub fn compute_scores(cfg: &PipelineConfig, inputs: &Inputs) -> Result<ScoreReport> {
    let sample = inputs.sample(cfg)?;
    let scores = PoolScores::compute(
        &inputs.pool,
        &inputs.concepts,
        &sample,
        &inputs.target,
        cfg.scoring.epsilon,
    )?;
    Ok(score_report(cfg, inputs, &scores, sample.len()))
}

pub fn cmd_score(settings: &Settings) -> Result<PathBuf> {
    let cfg = settings.single("score")?;
    let inputs = Inputs::load(cfg)?;
    let report = compute_scores(cfg, &inputs)?;
    let path = output(cfg, "score-table.json");
    write_json(&path, &report)?;
    Ok(path)
}

pub fn run_selection(cfg: &PipelineConfig, inputs: &Inputs) -> Result<(SelectionOutcome, usize)> {
    let sample = inputs.sample(cfg)?;
    let outcome = select_all(
        &inputs.pool,
        &inputs.concepts,
        &sample,
        &inputs.target,
        &cfg.selection,
        cfg.scoring.epsilon,
    )?;
    Ok((outcome, sample.len()))
}

pub fn selection_report(cfg: &PipelineConfig, inputs: &Inputs, outcome: &SelectionOutcome) -> SelectionReport {
    let pool = &inputs.pool;
    let names = pool.class_names();
    let scores = &outcome.scores;
    let classes = outcome
        .classes
        .iter()
        .map(|sel| ClassReport {
            class: names[sel.class].clone(),
            candidates: pool.class_concepts(sel.class).len(),
            concepts: sel
                .concepts
                .iter()
                .zip(&sel.gains)
                .map(|(&i, &gain)| {
                    let c = pool.concept(i);
                    SelectedConcept {
                        id: c.id.clone(),
                        text: c.text.clone(),
                        d: scores.discriminability[i],
                        v: scores.visual_activation[i],
                        gain,
                    }
                })
                .collect(),
            objective_trace: sel.objective.clone(),
            monotone: sel.is_monotone(),
        })
        .collect();
    let subset = &outcome.subset;
    let union = subset
        .union()
        .iter()
        .zip(subset.memberships())
        .map(|(&i, members)| {
            let c = pool.concept(i);
            UnionEntry {
                id: c.id.clone(),
                text: c.text.clone(),
                classes: members.iter().map(|&y| names[y].clone()).collect(),
            }
        })
        .collect();
    SelectionReport {
        config: cfg.clone(),
        shots: cfg.train.shots,
        seed: cfg.train.seed,
        classes,
        num_concepts: subset.len(),
        union,
    }
}

pub fn cmd_select(settings: &Settings) -> Result<PathBuf> {
    let cfg = settings.single("select")?;
    let inputs = Inputs::load(cfg)?;
    let (outcome, scored) = run_selection(cfg, &inputs)?;
    if cfg.report.emit_score_table {
        write_json(&output(cfg, "score-table.json"), &score_report(cfg, &inputs, &outcome.scores, scored))?;
    }
    let path = output(cfg, "selection.json");
    write_json(&path, &selection_report(cfg, &inputs, &outcome))?;
    Ok(path)
}

/// Result of select + train + evaluate for one shot setting.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub selection: SelectionOutcome,
    /// The model exactly as stored in `model.cbm`.
    pub model: BottleneckModel,
    pub metrics: Metrics,
    pub scored_images: usize,
}

pub fn run_train(cfg: &PipelineConfig, inputs: &Inputs) -> Result<TrainOutcome> {
    let (selection, scored_images) = run_selection(cfg, inputs)?;
    let (model, report) = bottleneck::train(
        &inputs.images,
        &selection.subset,
        &inputs.pool,
        &inputs.concepts,
        &cfg.train,
    )?;
    // Accuracies are measured on the stored (f32) weights so they match a reloaded model.
    let model = model.round_weights_to_f32()?;
    let sample = inputs.sample(cfg)?;
    let train_accuracy = evaluate(&sample, &model)?;
    let test_accuracy = match &inputs.test {
        Some(t) => Some(evaluate(t, &model)?),
        None => None,
    };
    let metrics = Metrics {
        config: cfg.clone(),
        shots: cfg.train.shots,
        seed: cfg.train.seed,
        num_concepts: model.num_concepts(),
        train_images: report.train_images,
        train_accuracy,
        test_images: inputs.test.as_ref().map(|t| t.len()),
        test_accuracy,
        final_loss: *report.loss_trace.last().expect("trace holds the final loss"),
        loss_trace: report.loss_trace,
    };
    Ok(TrainOutcome {
        selection,
        model,
        metrics,
        scored_images,
    })
}

fn write_train_outputs(cfg: &PipelineConfig, dir: &Path, inputs: &Inputs, out: &TrainOutcome) -> Result<()> {
    if cfg.report.emit_score_table {
        write_json(
            &dir.join("score-table.json"),
            &score_report(cfg, inputs, &out.selection.scores, out.scored_images),
        )?;
    }
    write_json(&dir.join("selection.json"), &selection_report(cfg, inputs, &out.selection))?;
    write_bytes(&dir.join("model.cbm"), &out.model.encode()?)?;
    write_json(&dir.join("metrics.json"), &out.metrics)
}

fn shots_dir(shots: Shots) -> String {
    format!("shots-{shots}")
}

/// Trains one model, or one per shot setting when sweeping. Returns the written metrics.
pub fn cmd_train(settings: &Settings) -> Result<Vec<Metrics>> {
    let base = &settings.config;
    let inputs = Inputs::load(base)?;
    let out_dir = base.output_dir();
    if !settings.is_sweep() {
        let out = run_train(base, &inputs)?;
        write_train_outputs(base, &out_dir, &inputs, &out)?;
        return Ok(vec![out.metrics]);
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &shots in &settings.shots {
        let mut cfg = base.clone();
        cfg.train.shots = shots;
        let out = run_train(&cfg, &inputs)?;
        write_train_outputs(&cfg, &out_dir.join(shots_dir(shots)), &inputs, &out)?;
        let m = &out.metrics;
        rows.push(SweepRow {
            shots,
            seed: m.seed,
            num_concepts: m.num_concepts,
            train_images: m.train_images,
            train_accuracy: m.train_accuracy,
            test_accuracy: m.test_accuracy,
            final_loss: m.final_loss,
        });
        all.push(out.metrics);
    }
    let sweep = SweepReport {
        config: base.clone(),
        rows,
    };
    write_json(&out_dir.join("sweep.json"), &sweep)?;
    write_bytes(&out_dir.join("sweep.csv"), sweep.to_csv().as_bytes())?;
    Ok(all)
}

fn load_model(cfg: &PipelineConfig) -> Result<(BottleneckModel, PathBuf)> {
    let path = cfg.model_path();
    if !path.exists() {
        return Err(CliError::Config(format!(
            "model {} does not exist; run `train` first or set paths.model",
            path.display()
        )));
    }
    Ok((BottleneckModel::load(&path)?, path))
}

fn check_classes(labels: &LabelFile, model: &BottleneckModel) -> Result<()> {
    if labels.class_names != model.class_names() {
        return Err(Error::Data(format!(
            "label file classes {:?} differ from model classes {:?}",
            labels.class_names,
            model.class_names()
        ))
        .into());
    }
    Ok(())
}

/// Images to run the model on: the test set when configured, else the training images.
fn inference_images(cfg: &PipelineConfig) -> Result<EmbeddingMatrix> {
    let key = if cfg.paths.test_images.is_some() { "test_images" } else { "images" };
    Ok(EmbeddingMatrix::load(cfg.paths.require(key)?, cfg.scoring.normalize)?)
}

fn optional_labels(cfg: &PipelineConfig, model: &BottleneckModel) -> Result<Option<LabelFile>> {
    match &cfg.paths.labels {
        Some(_) => {
            let labels = LabelFile::load(cfg.paths.require("labels")?)?;
            check_classes(&labels, model)?;
            Ok(Some(labels))
        }
        None => Ok(None),
    }
}

pub fn cmd_predict(settings: &Settings) -> Result<PathBuf> {
    let cfg = settings.single("predict")?;
    let (model, model_path) = load_model(cfg)?;
    let images = inference_images(cfg)?;
    let labels = optional_labels(cfg, &model)?;
    let names = model.class_names();
    let mut predictions = Vec::with_capacity(images.rows());
    let mut correct = 0usize;
    let mut labeled = 0usize;
    for (i, x) in images.iter_rows().enumerate() {
        let logits = forward(x, &model)?;
        let y = argmax(&logits);
        let label = labels.as_ref().and_then(|l| l.labels.get(images.id(i))).copied();
        if let Some(l) = label {
            labeled += 1;
            correct += usize::from(l == y);
        }
        predictions.push(Prediction {
            id: images.id(i).to_string(),
            predicted_index: y,
            predicted_class: names[y].clone(),
            label: label.map(|l| names.get(l).cloned().unwrap_or_else(|| l.to_string())),
            logits,
        });
    }
    let report = PredictionReport {
        config: cfg.clone(),
        model: model_path.display().to_string(),
        class_names: names.to_vec(),
        accuracy: (labeled == images.rows()).then(|| correct as f64 / labeled as f64),
        predictions,
    };
    let path = output(cfg, "predictions.json");
    write_json(&path, &report)?;
    Ok(path)
}

pub fn cmd_explain(settings: &Settings, image_id: &str) -> Result<PathBuf> {
    let cfg = settings.single("explain")?;
    let (model, model_path) = load_model(cfg)?;
    let mut found = None;
    for (key, set) in [("test_images", &cfg.paths.test_images), ("images", &cfg.paths.images)] {
        if set.is_none() {
            continue;
        }
        let images = EmbeddingMatrix::load(cfg.paths.require(key)?, cfg.scoring.normalize)?;
        if let Some(i) = images.position(image_id) {
            found = Some(images.row(i).to_vec());
            break;
        }
    }
    let image = found.ok_or_else(|| Error::Lookup(format!("no image with id {image_id:?}")))?;
    let labels = optional_labels(cfg, &model)?;
    let label = labels
        .as_ref()
        .and_then(|l| l.labels.get(image_id))
        .and_then(|&l| model.class_names().get(l).cloned());
    let top_k = cfg.report.top_k.min(model.num_concepts());
    let report = ExplanationReport {
        config: cfg.clone(),
        model: model_path.display().to_string(),
        image_id: image_id.to_string(),
        label,
        explanation: explain(&image, &model, top_k)?,
    };
    let path = output(cfg, "explanation.json");
    write_json(&path, &report)?;
    Ok(path)
}

pub fn cmd_eval(settings: &Settings) -> Result<EvalReport> {
    let cfg = settings.single("eval")?;
    let (model, model_path) = load_model(cfg)?;
    let labels = LabelFile::load(cfg.paths.require("labels")?)?;
    check_classes(&labels, &model)?;
    let set = LabeledImageSet::from_label_file(inference_images(cfg)?, &labels)?;
    if set.is_empty() {
        return Err(Error::Data("no images to evaluate".into()).into());
    }
    let mut per_class: Vec<ClassAccuracy> = model
        .class_names()
        .iter()
        .map(|c| ClassAccuracy {
            class: c.clone(),
            images: 0,
            correct: 0,
            accuracy: None,
        })
        .collect();
    for (i, &y) in set.labels().iter().enumerate() {
        per_class[y].images += 1;
        if bottleneck::predict(set.embeddings().row(i), &model)? == y {
            per_class[y].correct += 1;
        }
    }
    for c in &mut per_class {
        c.accuracy = (c.images > 0).then(|| c.correct as f64 / c.images as f64);
    }
    let correct = per_class.iter().map(|c| c.correct).sum();
    let report = EvalReport {
        config: cfg.clone(),
        model: model_path.display().to_string(),
        images: set.len(),
        correct,
        accuracy: correct as f64 / set.len() as f64,
        per_class,
    };
    write_json(&output(cfg, "eval.json"), &report)?;
    Ok(report)
}
