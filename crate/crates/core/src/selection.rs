//! Greedy maximization of the concept-set objective
//!
//! ```text
//! F'(C) = alpha * sum_{c in C} D(c)
//!       + beta  * sum_{c1 in S} max_{c2 in C} phi(c1, c2)
//!       + gamma * sum_{c in C} V(c)
//! ```
//!
//! per class, with `F'(empty) = 0`. The coverage term is a facility-location function, so it is
//! monotone submodular whenever `phi >= 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImageSet;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pool::{union_subset, ConceptPool, ConceptSubset};
use crate::scoring::{PoolScores, ScoreTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Among equal marginal gains, the candidate earliest in pool order wins.
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
    pub tie_break: TieBreak,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k: 50,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Selection(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Selection("k must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_subset(subset: &[usize], n: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::Contract(
            "objective is undefined on the empty subset".into(),
        ));
    }
    let mut seen = vec![false; n];
    for &c in subset {
        if c >= n {
            return Err(Error::Contract(format!(
                "concept index {c} out of range for {n} candidates"
            )));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::Contract(format!("concept index {c} repeated in subset")));
        }
    }
    Ok(())
}

/// Evaluates `F'` on a non-empty subset of local candidate indices.
pub fn evaluate_objective(subset: &[usize], table: &ScoreTable, config: &SelectionConfig) -> Result<f64> {
    check_subset(subset, table.len())?;
    let discriminability: f64 = subset.iter().map(|&c| table.discriminability[c]).sum();
    let activation: f64 = subset.iter().map(|&c| table.visual_activation[c]).sum();
    let mut coverage = 0.0;
    for c1 in 0..table.len() {
        coverage += subset
            .iter()
            .map(|&c2| table.phi[[c1, c2]])
            .fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(config.alpha * discriminability + config.beta * coverage + config.gamma * activation)
}

/// Outcome of greedy selection for one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSelection {
    pub class: usize,
    /// Chosen candidates as local indices into the class's score table, in pick order.
    pub local: Vec<usize>,
    /// The same candidates as pool indices.
    pub concepts: Vec<usize>,
    /// Marginal gain of each pick.
    pub gains: Vec<f64>,
    /// `F'` of the selected prefix after each pick.
    pub objective: Vec<f64>,
}

impl ClassSelection {
    /// True when the objective trace never decreases. Guaranteed if every gain is non-negative.
    pub fn is_monotone(&self) -> bool {
        self.objective.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn all_gains_nonnegative(&self) -> bool {
        self.gains.iter().all(|&g| g >= 0.0)
    }
}

/// Picks exactly `k` candidates by repeated argmax of the marginal gain.
///
/// Coverage gains are exact: a running `cover[c1] = max_{c2 in C} phi(c1, c2)` is kept and each
/// accepted concept updates it in `O(|S_y|)`. Selection continues through negative gains.
pub fn greedy_select(table: &ScoreTable, config: &SelectionConfig) -> Result<ClassSelection> {
    config.validate()?;
    let n = table.len();
    if config.k > n {
        return Err(Error::Selection(format!(
            "k = {} exceeds the {n} candidates of class {}",
            config.k, table.class
        )));
    }
    let phi = &table.phi;
    let mut cover = vec![0.0f64; n];
    let mut taken = vec![false; n];
    let mut out = ClassSelection {
        class: table.class,
        local: Vec::with_capacity(config.k),
        concepts: Vec::with_capacity(config.k),
        gains: Vec::with_capacity(config.k),
        objective: Vec::with_capacity(config.k),
    };
    let (mut sum_d, mut sum_v) = (0.0, 0.0);

    for step in 0..config.k {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..n).filter(|&c| !taken[c]) {
            let coverage: f64 = if step == 0 {
                (0..n).map(|c1| phi[[c1, c]]).sum()
            } else {
                (0..n).map(|c1| (phi[[c1, c]] - cover[c1]).max(0.0)).sum()
            };
            let gain = config.alpha * table.discriminability[c]
                + config.beta * coverage
                + config.gamma * table.visual_activation[c];
            // Strict comparison keeps the lowest index on ties.
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (pick, gain) = best.expect("k <= n leaves a candidate");
        taken[pick] = true;
        for (c1, cv) in cover.iter_mut().enumerate() {
            let v = phi[[c1, pick]];
            if step == 0 || v > *cv {
                *cv = v;
            }
        }
        sum_d += table.discriminability[pick];
        sum_v += table.visual_activation[pick];
        let coverage: f64 = cover.iter().sum();
        out.objective
            .push(config.alpha * sum_d + config.beta * coverage + config.gamma * sum_v);
        out.local.push(pick);
        out.concepts.push(table.concepts[pick]);
        out.gains.push(gain);
    }
    Ok(out)
}

/// Everything produced by selecting concepts for all classes.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub scores: PoolScores,
    pub tables: Vec<ScoreTable>,
    pub classes: Vec<ClassSelection>,
    pub subset: ConceptSubset,
}

/// Scores the pool and runs greedy selection independently for each class.
///
/// Discriminability comes from the labeled `images`; visual activation from the unlabeled
/// `target` set, which may be from any domain.
pub fn select_all(
    pool: &ConceptPool,
    concept_embeddings: &EmbeddingMatrix,
    images: &LabeledImageSet,
    target: &EmbeddingMatrix,
    config: &SelectionConfig,
    epsilon: f64,
) -> Result<SelectionOutcome> {
    config.validate()?;
    for class in 0..pool.num_classes() {
        let available = pool.class_concepts(class).len();
        if config.k > available {
            return Err(Error::Selection(format!(
                "k = {} exceeds the {available} candidates of class {:?}",
                config.k,
                pool.class_names()[class]
            )));
        }
    }
    let scores = PoolScores::compute(pool, concept_embeddings, images, target, epsilon)?;
    let tables = (0..pool.num_classes())
        .into_par_iter()
        .map(|class| scores.class_table(class, pool, concept_embeddings))
        .collect::<Result<Vec<_>>>()?;
    let classes = tables
        .par_iter()
        .map(|t| greedy_select(t, config))
        .collect::<Result<Vec<_>>>()?;
    let per_class: Vec<Vec<usize>> = classes.iter().map(|s| s.concepts.clone()).collect();
    let subset = union_subset(&per_class)?;
    Ok(SelectionOutcome {
        scores,
        tables,
        classes,
        subset,
    })
}
