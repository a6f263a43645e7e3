//! Brute-force oracles shared by the integration tests and the acceptance
//! report. Each returns a number to compare against a tolerance so that the
//! callers can either assert or print a verdict.
#![allow(dead_code)]

use std::collections::HashMap;

use hetcomp::ensemble::{ensemble_rank, TeacherRanking};
use hetcomp::losses::{grad_fine, grad_overall, loss_fine, loss_overall, ScoredLists};
use hetcomp::metrics::{dcg_at_k, discrepancy, ndcg_eval, RelevanceParams};
use hetcomp::models::{bce_gradients, bce_loss, bpr_gradients, bpr_loss, hinge_gradients, hinge_loss};
use hetcomp::{EmbeddingModel, ModelKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every ordering of `items`, lexicographic in positions.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (idx, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(idx);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// DCG written out term by term: gain 2^rel - 1, discount 1/log2(1 + position).
pub fn hand_dcg(pi: &[usize], target: &[usize], lambda: f64, k: usize) -> f64 {
    let rank: HashMap<usize, usize> = target.iter().take(k).enumerate().map(|(r, &i)| (i, r)).collect();
    let mut total = 0.0;
    for (pos, item) in pi.iter().take(k).enumerate() {
        let rel = match rank.get(item) {
            Some(&r) => (-(r as f64) / lambda).exp(),
            None => 0.0,
        };
        total += (2f64.powf(rel) - 1.0) / (pos as f64 + 2.0).log2();
    }
    total
}

pub fn hand_binary_ndcg(pi: &[usize], held_out: &[usize], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, item) in pi.iter().take(k).enumerate() {
        if held_out.contains(item) {
            dcg += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    let mut ideal = 0.0;
    for pos in 0..k.min(held_out.len()) {
        ideal += 1.0 / (pos as f64 + 2.0).log2();
    }
    dcg / ideal
}

/// Largest deviation between the library metrics and [`hand_dcg`] over all
/// orderings of up to six items, every cutoff and a few lambdas, plus the
/// number of cases checked.
pub fn metric_oracle_max_error() -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut r = rng(11);
    for n in 1..=6usize {
        let items: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
        let mut target = items.clone();
        target.shuffle(&mut r);
        let held_out: Vec<usize> = items.iter().copied().filter(|i| i % 2 == 0).collect();
        for pi in permutations(&items) {
            for k in 1..=n {
                for lambda in [0.5, 1.0, 10.0] {
                    let p = RelevanceParams::new(lambda, k).unwrap();
                    let dcg = hand_dcg(&pi, &target, lambda, k);
                    let ideal = hand_dcg(&target, &target, lambda, k);
                    worst = worst
                        .max((dcg_at_k(&pi, &target, p) - dcg).abs())
                        .max((discrepancy(&pi, &target, p) - (1.0 - dcg / ideal)).abs());
                    cases += 1;
                }
                if !held_out.is_empty() {
                    worst = worst.max((ndcg_eval(&pi, &held_out, k) - hand_binary_ndcg(&pi, &held_out, k)).abs());
                }
            }
        }
    }
    (worst, cases)
}

/// Largest |D@K(pi, pi)| over `trials` random rankings.
pub fn self_discrepancy_max(trials: usize) -> f64 {
    let mut r = rng(12);
    let pool: Vec<usize> = (0..500).collect();
    (0..trials)
        .map(|_| {
            let len = r.gen_range(1..=100);
            let pi: Vec<usize> = pool.choose_multiple(&mut r, len).copied().collect();
            let k = r.gen_range(1..=60);
            discrepancy(&pi, &pi, RelevanceParams::new(10.0, k).unwrap()).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest |1 - Σ_σ exp(-L_F(σ(P), ∅))| over `trials` random score vectors
/// with |P| from 1 to 5.
pub fn plackett_luce_normalization_max_error(trials: usize) -> f64 {
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let m = 1 + t % 5;
        let scores: Vec<f64> = (0..m).map(|_| r.gen_range(-4.0..4.0)).collect();
        let idx: Vec<usize> = (0..m).collect();
        let total: f64 = permutations(&idx)
            .iter()
            .map(|perm| {
                let s = ScoredLists::new(perm.iter().map(|&i| scores[i]).collect(), vec![]).unwrap();
                (-loss_fine(&s)).exp()
            })
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    worst
}

pub const FD_STEP: f64 = 1e-5;

/// `|a - f| / max(|a|, |f|, 1e-3)`: relative error with a floor so that
/// vanishing derivatives are judged on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random_lists(r: &mut ChaCha8Rng) -> ScoredLists {
    let p = (0..r.gen_range(1..=8)).map(|_| r.gen_range(-3.0..3.0)).collect();
    let n = (0..r.gen_range(0..=10)).map(|_| r.gen_range(-3.0..3.0)).collect();
    ScoredLists::new(p, n).unwrap()
}

/// Worst relative error of the loss gradients against central differences
/// over `trials` random instances, for both objectives.
pub fn loss_gradient_max_error(trials: usize) -> f64 {
    let mut r = rng(14);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let s = random_lists(&mut r);
        for (loss, grad) in [
            (loss_fine as fn(&ScoredLists) -> f64, grad_fine as fn(&ScoredLists) -> _),
            (loss_overall, grad_overall),
        ] {
            let g = grad(&s);
            let analytic: Vec<f64> = g.p.iter().chain(&g.n).copied().collect();
            for (idx, a) in analytic.into_iter().enumerate() {
                let at = |delta: f64| {
                    let mut t = s.clone();
                    if idx < t.p.len() {
                        t.p[idx] += delta;
                    } else {
                        t.n[idx - s.p.len()] += delta;
                    }
                    loss(&t)
                };
                let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(a, numeric));
            }
        }
    }
    worst
}

fn perturbed(model: &EmbeddingModel, idx: usize, delta: f64) -> EmbeddingModel {
    let mut m = model.clone();
    m.set_param(idx, m.param(idx) + delta);
    m
}

fn check_dense(model: &EmbeddingModel, analytic: &[f64], loss: &dyn Fn(&EmbeddingModel) -> f64) -> f64 {
    analytic
        .iter()
        .enumerate()
        .map(|(idx, &a)| {
            let numeric =
                (loss(&perturbed(model, idx, FD_STEP)) - loss(&perturbed(model, idx, -FD_STEP))) / (2.0 * FD_STEP);
            rel_err(a, numeric)
        })
        .fold(0.0, f64::max)
}

/// Gradient of `Σ L(P, N)` through the model's scores, accumulated with the
/// same chain rule the student update uses.
fn listwise_loss(model: &EmbeddingModel, u: usize, p: &[usize], n: &[usize], fine: bool) -> f64 {
    let s = ScoredLists::new(
        p.iter().map(|&i| model.score(u, i)).collect(),
        n.iter().map(|&i| model.score(u, i)).collect(),
    )
    .unwrap();
    if fine {
        loss_fine(&s)
    } else {
        loss_overall(&s)
    }
}

fn listwise_dense(model: &EmbeddingModel, u: usize, p: &[usize], n: &[usize], fine: bool) -> Vec<f64> {
    let s = ScoredLists::new(
        p.iter().map(|&i| model.score(u, i)).collect(),
        n.iter().map(|&i| model.score(u, i)).collect(),
    )
    .unwrap();
    let g = if fine { grad_fine(&s) } else { grad_overall(&s) };
    let mut grads = hetcomp::models::Gradients::default();
    for (&i, &gi) in p.iter().zip(&g.p).chain(n.iter().zip(&g.n)) {
        model.accumulate(u, i, gi, &mut grads);
    }
    grads.to_dense(model)
}

/// Worst relative error of every model gradient (training objective of each
/// kind, plus both listwise objectives through each kind) over `trials`
/// random toy models with 3 users and 6 items.
pub fn model_gradient_max_error(trials: usize) -> f64 {
    let mut r = rng(15);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let kind = [ModelKind::Mf, ModelKind::Ml, ModelKind::Dnn][t % 3];
        let mut model = EmbeddingModel::new(kind, 3, 6, 4, t as u64);
        // move away from the tiny initial scale so the checks are not trivial
        let embeddings = model.user_vectors.len() + model.item_vectors.len();
        for idx in 0..model.num_params() {
            let scale = if idx < embeddings { 20.0 } else { 1.0 };
            let v = model.param(idx) * scale + r.gen_range(-0.3..0.3);
            model.set_param(idx, v);
        }
        let u = r.gen_range(0..3);
        let mut items: Vec<usize> = (0..6).collect();
        items.shuffle(&mut r);
        let triples = vec![(u, items[0], items[1]), (r.gen_range(0..3), items[2], items[3])];
        match kind {
            ModelKind::Mf => {
                let reg = 0.01;
                let g = bpr_gradients(&model, &triples, reg).unwrap().to_dense(&model);
                worst = worst.max(check_dense(&model, &g, &|m| bpr_loss(m, &triples, reg)));
            }
            ModelKind::Ml => {
                let margin = 0.5;
                // skip instances that sit on the hinge
                let near_kink = triples
                    .iter()
                    .any(|&(u, i, j)| (margin - model.score(u, i) + model.score(u, j)).abs() < 1e-3);
                if !near_kink {
                    let g = hinge_gradients(&model, &triples, margin).unwrap().to_dense(&model);
                    worst = worst.max(check_dense(&model, &g, &|m| hinge_loss(m, &triples, margin)));
                }
            }
            ModelKind::Dnn => {
                let pairs = vec![(u, items[0], 1.0), (u, items[1], 0.0), (r.gen_range(0..3), items[2], 1.0)];
                let g = bce_gradients(&model, &pairs).unwrap().to_dense(&model);
                worst = worst.max(check_dense(&model, &g, &|m| bce_loss(m, &pairs)));
            }
        }
        let (p, n) = (&items[..2], &items[2..]);
        for fine in [true, false] {
            let g = listwise_dense(&model, u, p, n, fine);
            worst = worst.max(check_dense(&model, &g, &|m| listwise_loss(m, u, p, n, fine)));
        }
    }
    worst
}

/// Mean importance accumulated item by item over all teachers (0 where a
/// teacher does not rank the item), sorted by score, then by how many
/// teachers rank the item, then by id.
pub fn brute_force_ensemble(teachers: &[(Vec<usize>, Vec<f64>)], lambda: f64, k_out: usize, num_items: usize) -> Vec<usize> {
    let mut rows = Vec::new();
    for item in 0..num_items {
        let mut contributions = Vec::new();
        for (items, stds) in teachers {
            if let Some(rank) = items.iter().position(|&i| i == item) {
                contributions.push((-(rank as f64) / lambda).exp() + (-stds[rank] / lambda).exp());
            }
        }
        if contributions.is_empty() {
            continue;
        }
        // the library sums in ascending order so the mean is independent of
        // teacher order; exact ties would otherwise depend on rounding
        contributions.sort_by(f64::total_cmp);
        let mean = contributions.iter().sum::<f64>() / teachers.len() as f64;
        rows.push((item, mean, contributions.len()));
    }
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    rows.into_iter().take(k_out).map(|r| r.0).collect()
}

/// Number of random 3-teacher, 30-item instances (out of `trials`) where the
/// library ensemble differs from [`brute_force_ensemble`].
pub fn ensemble_mismatches(trials: usize) -> usize {
    let mut r = rng(16);
    let pool: Vec<usize> = (0..30).collect();
    (0..trials)
        .filter(|_| {
            let teachers: Vec<(Vec<usize>, Vec<f64>)> = (0..3)
                .map(|_| {
                    let len = r.gen_range(1..=30);
                    let items: Vec<usize> = pool.choose_multiple(&mut r, len).copied().collect();
                    // coarse stds make exact ties common
                    let stds = (0..len).map(|_| r.gen_range(0..4) as f64 * 2.5).collect();
                    (items, stds)
                })
                .collect();
            let k_out = r.gen_range(1..=35);
            let rankings: Vec<TeacherRanking> = teachers.iter().map(|(i, s)| TeacherRanking::new(i, s)).collect();
            ensemble_rank(&rankings, 10.0, k_out).items != brute_force_ensemble(&teachers, 10.0, k_out, 30)
        })
        .count()
}

/// Number of strict decreases between consecutive values.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}
