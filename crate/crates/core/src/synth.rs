//! Seeded synthetic implicit-feedback data for smoke runs.
//!
//! Items carry a heavy-tailed popularity and a latent vector. Each user has
//! two interest prototypes and prefers items close to either of them, so
//! preferences are a max over two bilinear forms rather than a single low-rank
//! product. Interactions are drawn without replacement with Gumbel-top-k.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::RawInteraction;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Weight of log-popularity in the item logit.
    pub popularity_weight: f64,
    /// Weight of the latent affinity in the item logit.
    pub affinity_weight: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 1000,
            latent_dim: 8,
            min_interactions: 15,
            max_interactions: 40,
            popularity_weight: 1.0,
            affinity_weight: 10.0,
            seed: 0,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generates interactions with tokens `u<id>` / `i<id>`.
pub fn generate(cfg: &SynthConfig) -> Vec<RawInteraction> {
    assert!(cfg.min_interactions <= cfg.max_interactions);
    assert!(cfg.max_interactions <= cfg.num_items);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.latent_dim;

    let mut pop_rank: Vec<usize> = (0..cfg.num_items).collect();
    pop_rank.shuffle(&mut rng);
    let log_pop: Vec<f64> = pop_rank.iter().map(|&r| -0.8 * ((r + 1) as f64).ln()).collect();
    let items: Vec<Vec<f64>> = (0..cfg.num_items).map(|_| normal_vec(&mut rng, d)).collect();

    let count = Uniform::new_inclusive(cfg.min_interactions, cfg.max_interactions);
    let unit = Uniform::new(f64::EPSILON, 1.0);
    let mut out = Vec::new();
    for u in 0..cfg.num_users {
        let a = normal_vec(&mut rng, d);
        let b = normal_vec(&mut rng, d);
        let n = count.sample(&mut rng);
        let mut keyed: Vec<(f64, usize)> = (0..cfg.num_items)
            .map(|i| {
                let affinity = dot(&a, &items[i]).max(dot(&b, &items[i]));
                let logit = cfg.popularity_weight * log_pop[i] + cfg.affinity_weight * affinity;
                let gumbel = -(-unit.sample(&mut rng).ln()).ln();
                (logit + gumbel, i)
            })
            .collect();
        keyed.select_nth_unstable_by(n - 1, |x, y| y.0.total_cmp(&x.0));
        keyed.truncate(n);
        keyed.sort_by_key(|&(_, i)| i);
        out.extend(
            keyed
                .into_iter()
                .map(|(_, i)| RawInteraction::new(format!("u{u}"), format!("i{i}"))),
        );
    }
    out
}
