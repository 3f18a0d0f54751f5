//! Reference implementations used only by tests. Each one is written directly from the
//! defining formula, with no shared code path into the library.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Unit vector stored as f32, renormalized so the f32 values themselves have unit norm
/// to within f32 rounding.
pub fn unit_f32(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let v = gaussian_vec(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Mean over images of class `y` of `x · c`, by an explicit double loop.
pub fn naive_class_sim(images: &[Vec<f32>], labels: &[usize], y: usize, concept: &[f32]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for (x, &l) in images.iter().zip(labels) {
        if l == y {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += x[j] as f64 * concept[j] as f64;
            }
            total += s;
            count += 1;
        }
    }
    total / count as f64
}

/// Textbook two-pass population standard deviation.
pub fn naive_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Two-pass population standard deviation with compensated sums in both passes.
pub fn compensated_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    (compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n).sqrt()
}

/// Shannon negative entropy with natural log.
pub fn naive_neg_entropy(p: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in p {
        if x > 0.0 {
            s += x * x.ln();
        }
    }
    s
}

/// Plain description of a selection instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub d: Vec<f64>,
    pub v: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Random instance: unit concept vectors give a cosine kernel, D in [-ln 7, 0], V in [0, 0.3].
    pub fn random(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Self {
        let vecs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v = gaussian_vec(rng, dim);
                let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let phi = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        Self {
            d: (0..n).map(|_| -rng.random::<f64>() * 7f64.ln()).collect(),
            v: (0..n).map(|_| rng.random::<f64>() * 0.3).collect(),
            phi,
        }
    }

    /// Same as `random` but with a kernel whose entries are all in [0, 1] and diagonal 1.
    pub fn random_nonnegative(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let mut phi = vec![vec![0.0; n]; n];
        for i in 0..n {
            phi[i][i] = 1.0;
            for j in (i + 1)..n {
                let x = rng.random::<f64>();
                phi[i][j] = x;
                phi[j][i] = x;
            }
        }
        Self {
            d: (0..n).map(|_| rng.random::<f64>()).collect(),
            v: (0..n).map(|_| rng.random::<f64>()).collect(),
            phi,
        }
    }

    pub fn phi_array(&self) -> ndarray::Array2<f64> {
        let n = self.n();
        ndarray::Array2::from_shape_fn((n, n), |(i, j)| self.phi[i][j])
    }
}

/// `F'` by three explicit loops; the empty set scores 0.
pub fn naive_objective(inst: &Instance, subset: &[usize], alpha: f64, beta: f64, gamma: f64) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let mut d_sum = 0.0;
    let mut v_sum = 0.0;
    for &c in subset {
        d_sum += inst.d[c];
        v_sum += inst.v[c];
    }
    let mut cov = 0.0;
    for c1 in 0..inst.n() {
        let mut best = f64::NEG_INFINITY;
        for &c2 in subset {
            if inst.phi[c1][c2] > best {
                best = inst.phi[c1][c2];
            }
        }
        cov += best;
    }
    alpha * d_sum + beta * cov + gamma * v_sum
}

/// Greedy that re-evaluates the objective from scratch for every candidate at every step.
pub fn naive_greedy(inst: &Instance, k: usize, alpha: f64, beta: f64, gamma: f64) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let base = naive_objective(inst, &chosen, alpha, beta, gamma);
        let mut best: Option<(usize, f64)> = None;
        for c in 0..inst.n() {
            if chosen.contains(&c) {
                continue;
            }
            let mut with = chosen.clone();
            with.push(c);
            let gain = naive_objective(inst, &with, alpha, beta, gamma) - base;
            match best {
                Some((_, g)) if gain <= g => {}
                _ => best = Some((c, gain)),
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

/// Two-term objective (discriminability + coverage) written out on its own.
pub fn two_term_objective(d: &[f64], phi: &[Vec<f64>], subset: &[usize], alpha: f64, beta: f64) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let disc: f64 = subset.iter().map(|&c| d[c]).sum();
    let cover: f64 = (0..d.len())
        .map(|c1| {
            subset
                .iter()
                .map(|&c2| phi[c1][c2])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    alpha * disc + beta * cover
}

/// Greedy maximizer of the two-term objective.
pub fn two_term_greedy(d: &[f64], phi: &[Vec<f64>], k: usize, alpha: f64, beta: f64) -> Vec<usize> {
    let mut chosen = Vec::new();
    while chosen.len() < k {
        let base = two_term_objective(d, phi, &chosen, alpha, beta);
        let mut best_c = usize::MAX;
        let mut best_g = f64::NEG_INFINITY;
        for c in 0..d.len() {
            if chosen.contains(&c) {
                continue;
            }
            let mut with = chosen.clone();
            with.push(c);
            let g = two_term_objective(d, phi, &with, alpha, beta) - base;
            if best_c == usize::MAX || g > best_g {
                best_c = c;
                best_g = g;
            }
        }
        chosen.push(best_c);
    }
    chosen
}

/// All k-subsets of 0..n, lexicographic.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn exhaustive_optimum(inst: &Instance, k: usize, alpha: f64, beta: f64, gamma: f64) -> f64 {
    combinations(inst.n(), k)
        .iter()
        .map(|s| naive_objective(inst, s, alpha, beta, gamma))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Logits `g · softmax_over_classes(W)^T` without max-shifting.
pub fn naive_logits(g: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let classes = w.len();
    let concepts = g.len();
    let mut logits = vec![0.0; classes];
    for c in 0..concepts {
        let mut denom = 0.0;
        for row in w {
            denom += row[c].exp();
        }
        for y in 0..classes {
            logits[y] += g[c] * w[y][c].exp() / denom;
        }
    }
    logits
}

/// Mean cross-entropy computed from `naive_logits`.
pub fn naive_loss(scores: &[Vec<f64>], labels: &[usize], w: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (g, &y) in scores.iter().zip(labels) {
        let z = naive_logits(g, w);
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

/// Central finite-difference gradient of `naive_loss` with respect to every weight.
pub fn finite_difference_gradient(
    scores: &[Vec<f64>],
    labels: &[usize],
    w: &[Vec<f64>],
    h: f64,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; w[0].len()]; w.len()];
    for y in 0..w.len() {
        for c in 0..w[0].len() {
            let mut plus = w.to_vec();
            plus[y][c] += h;
            let mut minus = w.to_vec();
            minus[y][c] -= h;
            out[y][c] = (naive_loss(scores, labels, &plus) - naive_loss(scores, labels, &minus)) / (2.0 * h);
        }
    }
    out
}
