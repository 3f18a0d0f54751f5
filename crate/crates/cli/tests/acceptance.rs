//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! Everything runs on generated data; reference values come from the independent oracles in
//! `core/tests/common/oracles.rs`.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use cbm_cli::pipeline::{run_train, Inputs};
use cbm_cli::synth::{self, is_distractor_id, SynthConfig};
use cbm_cli::PipelineConfig;
use cbm_core::bottleneck::{
    column_softmax, forward, influence, loss_and_gradient, train_observed, BottleneckModel, TrainConfig,
};
use cbm_core::pool::{PoolClass, PoolEntry, PoolFile};
use cbm_core::scoring::{conditional_likelihood, discriminability, visual_activation, DEFAULT_EPSILON};
use cbm_core::selection::evaluate_objective;
use cbm_core::{
    greedy_select, select_all, union_subset, ConceptPool, EmbeddingMatrix, LabeledImageSet, ScoreTable,
    SelectionConfig, Shots,
};
use ndarray::Array2;
use oracles::*;
use rand::Rng;

// Tolerances and budgets.
const ENTROPY_TOL: f64 = 1e-9;
const ENTROPY_BUDGET: Duration = Duration::from_secs(1);
const V_TOL: f64 = 1e-9;
const V_BUDGET: Duration = Duration::from_secs(1);
const GREEDY_BUDGET: Duration = Duration::from_secs(30);
const FILTER_MIN_GAIN: f64 = 0.10;
const FILTER_BUDGET: Duration = Duration::from_secs(60);
const FD_STEP: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-4;
const FD_ABS_FLOOR: f64 = 1e-8;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const STOCHASTIC_TOL: f64 = 1e-9;
const INFLUENCE_TOL: f64 = 1e-10;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    check(took < budget, || format!("took {took:.2?}, budget {budget:?}"))?;
    Ok(took)
}

fn entropy_bounds() -> Outcome {
    let start = Instant::now();
    let classes = 7;
    let columns = 10_000;
    let mut r = rng(1);
    // Mix of signed, positive and sparse columns.
    let sim = Array2::from_shape_fn((classes, columns), |(_, c)| match c % 3 {
        0 => r.random::<f64>() * 2.0 - 1.0,
        1 => r.random::<f64>(),
        _ => {
            if r.random::<f64>() < 0.3 {
                r.random::<f64>()
            } else {
                -r.random::<f64>()
            }
        }
    });
    let d = discriminability(&conditional_likelihood(&sim, DEFAULT_EPSILON)).map_err(|e| e.to_string())?;
    let floor = -(classes as f64).ln();
    for (c, &v) in d.iter().enumerate() {
        check(v <= 0.0 && v >= floor - ENTROPY_TOL, || format!("D[{c}] = {v} outside [{floor}, 0]"))?;
        // Reference: clamp, normalize and take the entropy directly.
        let col: Vec<f64> = (0..classes).map(|y| sim[[y, c]].max(DEFAULT_EPSILON)).collect();
        let total: f64 = col.iter().sum();
        let p: Vec<f64> = col.iter().map(|x| x / total).collect();
        let expected = naive_neg_entropy(&p);
        check((v - expected).abs() < ENTROPY_TOL, || format!("D[{c}] = {v}, reference {expected}"))?;
    }
    let uniform = Array2::from_elem((classes, 1), 0.37);
    let du = discriminability(&conditional_likelihood(&uniform, DEFAULT_EPSILON)).map_err(|e| e.to_string())?[0];
    check((du - floor).abs() < ENTROPY_TOL, || format!("uniform column D = {du}"))?;
    check(format!("{du:.6}") == "-1.945910", || format!("uniform column D = {du:.9}"))?;
    let took = within_budget(start, ENTROPY_BUDGET)?;
    Ok(format!("{columns} columns in bounds, uniform D = {du:.9}, {took:.2?}"))
}

fn activation_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let dim = 16;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let concept = unit_f32(&mut r, dim);
        let images: Vec<Vec<f32>> = (0..100).map(|_| unit_f32(&mut r, dim)).collect();
        let ids: Vec<String> = (0..100).map(|j| format!("x{j}")).collect();
        let target = EmbeddingMatrix::from_rows(ids, &images).map_err(|e| e.to_string())?;
        let v = visual_activation(&concept, &target).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = images.iter().map(|x| naive_dot(&concept, x)).collect();
        let expected = naive_std(&scores);
        worst = worst.max((v - expected).abs());
        check((v - expected).abs() < V_TOL, || format!("instance {i}: V = {v}, oracle {expected}"))?;

        let same = vec![images[0].clone(); 100];
        let ids: Vec<String> = (0..100).map(|j| format!("x{j}")).collect();
        let constant = EmbeddingMatrix::from_rows(ids, &same).map_err(|e| e.to_string())?;
        let v0 = visual_activation(&concept, &constant).map_err(|e| e.to_string())?;
        check(v0 == 0.0, || format!("instance {i}: constant set gives V = {v0:e}"))?;
    }
    let took = within_budget(start, V_BUDGET)?;
    Ok(format!("1000 instances, max |error| {worst:.1e}, constant sets exactly 0, {took:.2?}"))
}

fn greedy_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst_ratio = f64::INFINITY;
    for i in 0..200 {
        let k = r.random_range(1..=4);
        let n = r.random_range(k.max(2)..=12);
        let (alpha, beta, gamma) = (r.random::<f64>() * 2.0, r.random::<f64>() * 2.0, r.random::<f64>() * 2.0);
        let cfg = SelectionConfig { alpha, beta, gamma, k, ..SelectionConfig::default() };

        let inst = Instance::random(&mut r, n, 6);
        let table = ScoreTable::from_terms(inst.d.clone(), inst.v.clone(), inst.phi_array()).map_err(|e| e.to_string())?;
        let got = greedy_select(&table, &cfg).map_err(|e| e.to_string())?.local;
        let expected = naive_greedy(&inst, k, alpha, beta, gamma);
        check(got == expected, || format!("instance {i}: greedy {got:?}, naive {expected:?}"))?;

        // Nonnegative terms and kernel: every marginal contribution is >= 0.
        let inst = Instance::random_nonnegative(&mut r, n);
        let table = ScoreTable::from_terms(inst.d.clone(), inst.v.clone(), inst.phi_array()).map_err(|e| e.to_string())?;
        let sel = greedy_select(&table, &cfg).map_err(|e| e.to_string())?;
        let expected = naive_greedy(&inst, k, alpha, beta, gamma);
        check(sel.local == expected, || format!("nonnegative instance {i}: greedy {:?}, naive {expected:?}", sel.local))?;
        check(sel.all_gains_nonnegative(), || format!("nonnegative instance {i}: negative gain"))?;
        let value = evaluate_objective(&sel.local, &table, &cfg).map_err(|e| e.to_string())?;
        let optimum = exhaustive_optimum(&inst, k, alpha, beta, gamma);
        let bound = (1.0 - (-1.0f64).exp()) * optimum;
        check(value >= bound - 1e-12, || format!("nonnegative instance {i}: {value} < (1-1/e) * {optimum}"))?;
        if optimum > 0.0 {
            worst_ratio = worst_ratio.min(value / optimum);
        }
    }
    let took = within_budget(start, GREEDY_BUDGET)?;
    Ok(format!("200 + 200 instances identical, worst greedy/optimum {worst_ratio:.4}, {took:.2?}"))
}

/// Random world, with D and phi recomputed by hand for the reference.
fn gamma_zero_baseline() -> Outcome {
    let mut r = rng(4);
    for i in 0..50 {
        let classes = r.random_range(2..=5);
        let per_class = r.random_range(3..=8);
        let k = r.random_range(1..=per_class.min(3));
        let dim = r.random_range(6..=12);
        let per_image = r.random_range(1..=4);
        let (alpha, beta) = (r.random::<f64>() * 2.0 + 0.1, r.random::<f64>() * 2.0 + 0.1);

        let concept_rows: Vec<Vec<f32>> = (0..classes * per_class).map(|_| unit_f32(&mut r, dim)).collect();
        let image_rows: Vec<Vec<f32>> = (0..classes * per_image).map(|_| unit_f32(&mut r, dim)).collect();
        let labels: Vec<usize> = (0..classes * per_image).map(|j| j / per_image).collect();
        let target_rows: Vec<Vec<f32>> = (0..10).map(|_| unit_f32(&mut r, dim)).collect();

        let ids: Vec<String> = (0..concept_rows.len()).map(|c| format!("c{c}")).collect();
        let concepts = EmbeddingMatrix::from_rows(ids.clone(), &concept_rows).map_err(|e| e.to_string())?;
        let file = PoolFile {
            classes: (0..classes)
                .map(|y| PoolClass {
                    name: format!("y{y}"),
                    concepts: (0..per_class)
                        .map(|j| PoolEntry { id: ids[y * per_class + j].clone(), text: String::new() })
                        .collect(),
                })
                .collect(),
        };
        let pool = ConceptPool::from_file(&file, &concepts).map_err(|e| e.to_string())?;
        let images = LabeledImageSet::new(
            EmbeddingMatrix::from_rows((0..image_rows.len()).map(|j| format!("x{j}")).collect(), &image_rows)
                .map_err(|e| e.to_string())?,
            labels.clone(),
            (0..classes).map(|y| format!("y{y}")).collect(),
        )
        .map_err(|e| e.to_string())?;
        let target = EmbeddingMatrix::from_rows((0..10).map(|j| format!("t{j}")).collect(), &target_rows)
            .map_err(|e| e.to_string())?;
        let cfg = SelectionConfig { alpha, beta, gamma: 0.0, k, ..SelectionConfig::default() };
        let out = select_all(&pool, &concepts, &images, &target, &cfg, DEFAULT_EPSILON).map_err(|e| e.to_string())?;

        // Reference D over the whole pool.
        let d_all: Vec<f64> = concept_rows
            .iter()
            .map(|c| {
                let col: Vec<f64> = (0..classes)
                    .map(|y| naive_class_sim(&image_rows, &labels, y, c).max(DEFAULT_EPSILON))
                    .collect();
                let total: f64 = col.iter().sum();
                naive_neg_entropy(&col.iter().map(|x| x / total).collect::<Vec<_>>())
            })
            .collect();
        let mut expected_per_class = Vec::new();
        for y in 0..classes {
            let members: Vec<usize> = (y * per_class..(y + 1) * per_class).collect();
            let d: Vec<f64> = members.iter().map(|&c| d_all[c]).collect();
            let phi: Vec<Vec<f64>> = members
                .iter()
                .map(|&a| members.iter().map(|&b| naive_dot(&concept_rows[a], &concept_rows[b])).collect())
                .collect();
            let picks: Vec<usize> = two_term_greedy(&d, &phi, k, alpha, beta).into_iter().map(|j| members[j]).collect();
            let got = &out.subset.per_class()[y];
            check(*got == picks, || format!("instance {i}, class {y}: select_all {got:?}, reference {picks:?}"))?;
            expected_per_class.push(picks);
        }
        let expected = union_subset(&expected_per_class).map_err(|e| e.to_string())?;
        check(expected.union() == out.subset.union(), || format!("instance {i}: unions differ"))?;
    }
    Ok("50 instances, identical per-class subsets and union".into())
}

/// The rigged instance: few visual concepts per class, many non-visual ones whose small leak
/// into the image subspace inflates their 1-shot discriminability.
fn rigged_instance() -> SynthConfig {
    SynthConfig {
        n_classes: 5,
        n_concepts_per_class: 2,
        distractors: 10,
        n_images_per_class: 10,
        test_images_per_class: 40,
        target_images: 200,
        dim: 64,
        noise: 1.0,
        leak: 0.05,
        shared: 0.5,
        seed: 7,
    }
}

fn synthetic_filtering() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config_path = synth::write(&rigged_instance(), dir.path()).map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::load(&config_path).map_err(|e| e.to_string())?;
    cfg.train.shots = Shots::Count(1);
    cfg.selection.k = 2;
    let inputs = Inputs::load(&cfg).map_err(|e| e.to_string())?;

    let grid = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let seeds = 0..10u64;
    let mut rows = Vec::new();
    for &gamma in &grid {
        let mut acc = 0.0;
        let mut distractors = 0;
        for seed in seeds.clone() {
            let mut c = cfg.clone();
            c.selection.gamma = gamma;
            c.train.seed = seed;
            let out = run_train(&c, &inputs).map_err(|e| e.to_string())?;
            acc += out.metrics.test_accuracy.expect("rigged instance has a test split");
            distractors += out.model.concept_ids().iter().filter(|id| is_distractor_id(id)).count();
        }
        rows.push((gamma, acc / seeds.clone().count() as f64, distractors));
    }
    // Smallest grid value from which every larger grid value also selects no distractor.
    let first_clean = rows.iter().rposition(|r| r.2 > 0).map_or(0, |i| i + 1);
    let (threshold, filtered_acc, _) = *rows.get(first_clean).ok_or("no gamma on the grid removes every distractor")?;
    let (_, baseline_acc, baseline_distractors) = rows[0];
    check(threshold > 0.0, || "gamma = 0 already excludes every distractor; instance is not rigged".into())?;
    check(baseline_distractors > 0, || "gamma = 0 selects no distractor".into())?;
    let gain = filtered_acc - baseline_acc;
    check(gain >= FILTER_MIN_GAIN, || {
        format!("1-shot accuracy gamma={threshold}: {filtered_acc:.3} vs gamma=0: {baseline_acc:.3} (gain {gain:.3})")
    })?;
    let took = within_budget(start, FILTER_BUDGET)?;
    let trace: Vec<String> = rows.iter().map(|(g, a, d)| format!("{g}:{a:.3}/{d}")).collect();
    Ok(format!(
        "threshold gamma = {threshold}; 1-shot mean test accuracy {filtered_acc:.3} vs {baseline_acc:.3} at gamma = 0 \
         (+{:.1} points, {baseline_distractors} distractor picks over 10 seeds); gamma:acc/distractors [{}]; {took:.2?}",
        gain * 100.0,
        trace.join(" ")
    ))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let classes = r.random_range(2..=4);
        let concepts = r.random_range(2..=6);
        let n = r.random_range(3..=8);
        let scores: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut r, concepts)).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let w: Vec<Vec<f64>> = (0..classes).map(|_| gaussian_vec(&mut r, concepts)).collect();
        let s = Array2::from_shape_fn((n, concepts), |(a, b)| scores[a][b]);
        let wa = Array2::from_shape_fn((classes, concepts), |(a, b)| w[a][b]);
        let (_, grad) = loss_and_gradient(&s, &labels, &wa).map_err(|e| e.to_string())?;
        let fd = finite_difference_gradient(&scores, &labels, &w, FD_STEP);
        for y in 0..classes {
            for c in 0..concepts {
                let (a, b) = (grad[[y, c]], fd[y][c]);
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(FD_ABS_FLOOR);
                if a.abs().max(b.abs()) > FD_ABS_FLOOR {
                    worst = worst.max(rel);
                }
                check(rel <= FD_REL_TOL || (a - b).abs() <= FD_ABS_FLOOR, || {
                    format!("instance {i} ({y},{c}): analytic {a}, finite difference {b}")
                })?;
            }
        }
    }
    let took = within_budget(start, GRAD_BUDGET)?;
    Ok(format!("20 instances, worst relative error {worst:.1e}, {took:.2?}"))
}

fn column_stochastic() -> Outcome {
    let data = synth::generate(&SynthConfig { noise: 0.8, leak: 0.2, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let concepts = data.concepts.normalized().map_err(|e| e.to_string())?;
    let pool = ConceptPool::from_file(&data.pool, &concepts).map_err(|e| e.to_string())?;
    let images = LabeledImageSet::from_label_file(data.train.normalized().map_err(|e| e.to_string())?, &data.labels)
        .map_err(|e| e.to_string())?;
    let target = data.target.normalized().map_err(|e| e.to_string())?;
    let sel = SelectionConfig { k: 3, ..SelectionConfig::default() };
    let out = select_all(&pool, &concepts, &images, &target, &sel, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    // A large step keeps the weights moving for the whole run.
    let cfg = TrainConfig { learning_rate: 2.0, epochs: 500, ..TrainConfig::default() };
    let mut worst = 0.0f64;
    let mut epochs_seen = 0;
    let mut failure = None;
    train_observed(&images, &out.subset, &pool, &concepts, &cfg, |epoch, w| {
        epochs_seen += 1;
        let sigma = match column_softmax(w) {
            Ok(s) => s,
            Err(e) => {
                failure.get_or_insert(format!("epoch {epoch}: {e}"));
                return;
            }
        };
        for (c, col) in sigma.columns().into_iter().enumerate() {
            let dev = (col.sum() - 1.0).abs();
            worst = worst.max(dev);
            if dev > STOCHASTIC_TOL {
                failure.get_or_insert(format!("epoch {epoch}, column {c}: sum deviates by {dev:e}"));
            }
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(f) = failure {
        return Err(f);
    }
    check(epochs_seen == 501, || format!("observed {epochs_seen} states, expected 501"))?;
    Ok(format!("init + 500 epochs, {} columns, max deviation {worst:.1e}", out.subset.len()))
}

fn influence_identity() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let classes = r.random_range(2..=7);
        let concepts = r.random_range(1..=40);
        let dim = r.random_range(4..=24);
        let rows: Vec<Vec<f32>> = (0..concepts).map(|_| unit_f32(&mut r, dim)).collect();
        let w = Array2::from_shape_fn((classes, concepts), |_| r.random::<f64>() * 6.0 - 3.0);
        let model = BottleneckModel::from_parts(
            EmbeddingMatrix::from_rows((0..concepts).map(|c| format!("c{c}")).collect(), &rows)
                .map_err(|e| e.to_string())?,
            w.clone(),
            (0..classes).map(|y| format!("y{y}")).collect(),
            vec![String::new(); concepts],
            (0..concepts).map(|c| BTreeSet::from([c % classes])).collect(),
            None,
        )
        .map_err(|e| e.to_string())?;
        let x = unit_f32(&mut r, dim);
        let y = r.random_range(0..classes);
        let p = influence(&x, y, &model).map_err(|e| e.to_string())?;
        let logits = forward(&x, &model).map_err(|e| e.to_string())?;
        let g: Vec<f64> = rows.iter().map(|c| naive_dot(&x, c)).collect();
        let reference = naive_logits(&g, &w.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())[y];
        let err = (p.total() - logits[y]).abs().max((p.total() - reference).abs());
        worst = worst.max(err);
        check(err < INFLUENCE_TOL, || format!("pair {i}: sum of influence {}, logit {}, reference {reference}", p.total(), logits[y]))?;
    }
    Ok(format!("1000 pairs, max |sum - logit| {worst:.1e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = synth::write(&SynthConfig { leak: 0.1, noise: 0.8, ..SynthConfig::default() }, dir.path())
        .map_err(|e| e.to_string())?;
    let run = || -> Result<Vec<Vec<u8>>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_cbm"))
            .args(["train", "--config", config.to_str().unwrap(), "--k", "3", "--shots", "4", "--seed", "3", "--epochs", "100"])
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        ["selection.json", "model.cbm", "metrics.json"]
            .iter()
            .map(|f| fs::read(dir.path().join("run").join(f)).map_err(|e| format!("{f}: {e}")))
            .collect()
    };
    let first = run()?;
    let second = run()?;
    for (name, (a, b)) in ["selection.json", "model.cbm", "metrics.json"].iter().zip(first.iter().zip(&second)) {
        check(a == b, || format!("{name} differs between runs"))?;
    }
    let bytes: usize = first.iter().map(Vec::len).sum();
    Ok(format!("selection.json, model.cbm, metrics.json byte-identical ({bytes} bytes)"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("entropy bounds", entropy_bounds),
        ("visual activation oracle", activation_oracle),
        ("greedy oracle equivalence", greedy_oracle),
        ("gamma=0 baseline equivalence", gamma_zero_baseline),
        ("synthetic filtering", synthetic_filtering),
        ("gradient check", gradient_check),
        ("column-stochastic invariant", column_stochastic),
        ("influence identity", influence_identity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
