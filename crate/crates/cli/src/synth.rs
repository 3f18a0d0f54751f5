//! Synthetic datasets with known visual and non-visual concepts.
//!
//! The embedding space is split into an *image subspace*, holding class prototypes, images and
//! visual concepts, and an orthogonal *distractor subspace* that only non-visual concepts live
//! in. With `leak = 0` a distractor's score against every image is exactly zero, so its
//! visual activation is exactly zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cbm_core::pool::{PoolClass, PoolEntry, PoolFile};
use cbm_core::{EmbeddingMatrix, LabelFile, SelectionConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{PipelineConfig, Paths};
use crate::error::{CliError, Result};
use crate::report::{to_json, write_bytes};

#[derive(Debug, Clone, PartialEq, Serialize, clap::Args)]
pub struct SynthConfig {
    #[arg(long, default_value_t = 4)]
    pub n_classes: usize,
    /// Visual concepts per class.
    #[arg(long, default_value_t = 4)]
    pub n_concepts_per_class: usize,
    /// Non-visual distractor concepts per class.
    #[arg(long, default_value_t = 4)]
    pub distractors: usize,
    /// Labeled training images per class.
    #[arg(long, default_value_t = 20)]
    pub n_images_per_class: usize,
    /// Labeled test images per class.
    #[arg(long, default_value_t = 20)]
    pub test_images_per_class: usize,
    /// Unlabeled target images, drawn round-robin over classes.
    #[arg(long, default_value_t = 80)]
    pub target_images: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Norm of the noise added to prototypes, relative to the prototype norm.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Weight of a random image-subspace direction mixed into each distractor.
    #[arg(long, default_value_t = 0.0)]
    pub leak: f64,
    /// Weight of a direction common to every prototype.
    #[arg(long, default_value_t = 0.0)]
    pub shared: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_concepts_per_class: 4,
            distractors: 4,
            n_images_per_class: 20,
            test_images_per_class: 20,
            target_images: 80,
            dim: 32,
            noise: 0.5,
            leak: 0.0,
            shared: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Dimensions reserved for images; the rest host distractors.
    pub fn image_dims(&self) -> usize {
        if self.distractors == 0 {
            self.dim
        } else {
            (self.dim + self.n_classes) / 2
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_classes", self.n_classes),
            ("n_concepts_per_class", self.n_concepts_per_class),
            ("n_images_per_class", self.n_images_per_class),
            ("test_images_per_class", self.test_images_per_class),
            ("dim", self.dim),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.target_images < 2 {
            return Err(CliError::Config("target_images must be at least 2".into()));
        }
        if self.dim < self.n_classes {
            return Err(CliError::Config(format!(
                "dim = {} is smaller than n_classes = {}",
                self.dim, self.n_classes
            )));
        }
        if self.distractors > 0 && self.dim <= self.n_classes {
            return Err(CliError::Config(format!(
                "dim = {} leaves no room for distractors orthogonal to {} class prototypes",
                self.dim, self.n_classes
            )));
        }
        for (name, v) in [("noise", self.noise), ("leak", self.leak), ("shared", self.shared)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything `generate` produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: EmbeddingMatrix,
    pub test: EmbeddingMatrix,
    pub target: EmbeddingMatrix,
    pub concepts: EmbeddingMatrix,
    pub pool: PoolFile,
    pub labels: LabelFile,
    /// Ids of the non-visual concepts.
    pub distractor_ids: Vec<String>,
}

pub fn class_name(y: usize) -> String {
    format!("class{y}")
}

pub fn is_distractor_id(id: &str) -> bool {
    id.contains("-d")
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    /// Gaussian vector over `range` scaled so its expected norm is about `scale`.
    fn gaussian(&mut self, dim: usize, range: std::ops::Range<usize>, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        let s = scale / (range.len() as f64).sqrt();
        for x in &mut v[range] {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = z * s;
        }
        v
    }

    fn unit(&mut self, dim: usize, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut v = self.gaussian(dim, range, 1.0);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

fn add(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * y).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let dim = cfg.dim;
    let img = 0..cfg.image_dims();
    let dis = cfg.image_dims()..dim;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };

    // Common direction: first image axis.
    let mut common = vec![0.0; dim];
    common[0] = 1.0;
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| {
            let r = s.unit(dim, img.clone());
            let p = add(&r, &common, cfg.shared);
            let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            p.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let noisy = |s: &mut Sampler, y: usize| -> Vec<f32> {
        let e = s.gaussian(dim, img.clone(), 1.0);
        to_f32(&add(&prototypes[y], &e, cfg.noise))
    };

    let mut labels = BTreeMap::new();
    let images = |s: &mut Sampler, split: &str, per_class: usize, labels: &mut BTreeMap<String, usize>| {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for y in 0..cfg.n_classes {
            for i in 0..per_class {
                let id = format!("{split}-{y}-{i}");
                labels.insert(id.clone(), y);
                ids.push(id);
                rows.push(noisy(s, y));
            }
        }
        (ids, rows)
    };
    let (train_ids, train_rows) = images(&mut s, "train", cfg.n_images_per_class, &mut labels);
    let (test_ids, test_rows) = images(&mut s, "test", cfg.test_images_per_class, &mut labels);
    let mut target_ids = Vec::new();
    let mut target_rows = Vec::new();
    for i in 0..cfg.target_images {
        target_ids.push(format!("target-{i}"));
        target_rows.push(noisy(&mut s, i % cfg.n_classes));
    }

    let mut concept_ids = Vec::new();
    let mut concept_rows = Vec::new();
    let mut classes = Vec::new();
    let mut distractor_ids = Vec::new();
    for y in 0..cfg.n_classes {
        let name = class_name(y);
        let mut entries = Vec::new();
        for j in 0..cfg.n_concepts_per_class {
            let id = format!("{name}-v{j}");
            concept_rows.push(noisy(&mut s, y));
            entries.push(PoolEntry {
                id: id.clone(),
                text: format!("visual attribute {j} of {name}"),
            });
            concept_ids.push(id);
        }
        for j in 0..cfg.distractors {
            let id = format!("{name}-d{j}");
            let base = s.unit(dim, dis.clone());
            let leak = s.unit(dim, img.clone());
            concept_rows.push(to_f32(&add(&base, &leak, cfg.leak)));
            entries.push(PoolEntry {
                id: id.clone(),
                text: format!("non-visual remark {j} about {name}"),
            });
            distractor_ids.push(id.clone());
            concept_ids.push(id);
        }
        classes.push(PoolClass {
            name,
            concepts: entries,
        });
    }

    Ok(SynthData {
        train: EmbeddingMatrix::from_rows(train_ids, &train_rows)?,
        test: EmbeddingMatrix::from_rows(test_ids, &test_rows)?,
        target: EmbeddingMatrix::from_rows(target_ids, &target_rows)?,
        concepts: EmbeddingMatrix::from_rows(concept_ids, &concept_rows)?,
        pool: PoolFile { classes },
        labels: LabelFile {
            class_names: (0..cfg.n_classes).map(class_name).collect(),
            labels,
        },
        distractor_ids,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'a SynthConfig,
    image_dims: usize,
    distractor_ids: &'a [String],
}

/// Generates a dataset and writes it under `out`, together with a `config.toml` that points at
/// the files. Returns the path of that config.
pub fn write(cfg: &SynthConfig, out: &Path) -> Result<PathBuf> {
    let data = generate(cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::Output {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_bytes(&out.join("images_train.cbv"), &data.train.encode())?;
    write_bytes(&out.join("images_test.cbv"), &data.test.encode())?;
    write_bytes(&out.join("target.cbv"), &data.target.encode())?;
    write_bytes(&out.join("concepts.cbv"), &data.concepts.encode())?;
    write_bytes(&out.join("pool.json"), &to_json(&data.pool))?;
    write_bytes(&out.join("labels.json"), &to_json(&data.labels))?;
    write_bytes(
        &out.join("synth.json"),
        &to_json(&Manifest {
            generator: cfg,
            image_dims: cfg.image_dims(),
            distractor_ids: &data.distractor_ids,
        }),
    )?;

    let pipeline = PipelineConfig {
        paths: Paths {
            images: Some("images_train.cbv".into()),
            labels: Some("labels.json".into()),
            concepts: Some("concepts.cbv".into()),
            pool: Some("pool.json".into()),
            target_set: Some("target.cbv".into()),
            test_images: Some("images_test.cbv".into()),
            model: None,
            output_dir: Some("run".into()),
        },
        // One pick per visual concept; the default of 50 rarely fits a synthetic pool.
        selection: SelectionConfig {
            k: cfg.n_concepts_per_class,
            ..SelectionConfig::default()
        },
        ..PipelineConfig::default()
    };
    let config_path = out.join("config.toml");
    write_bytes(&config_path, pipeline.to_toml().as_bytes())?;
    Ok(config_path)
}
