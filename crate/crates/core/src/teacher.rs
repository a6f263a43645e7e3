//! Teacher training with early stopping and trajectory capture.
//!
//! Every epoch the teacher's top-K ranking of unobserved items and its
//! ranking of observed items are kept for every user. Once training stops,
//! the converged epoch `T*` (best validation Recall@50) fixes `E` checkpoint
//! epochs at `ceil(T*·e/E)`, and each checkpoint's rank-std is computed over
//! the five epochs ending at it.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ensemble::{rank_std, HISTORY_LEN};
use crate::error::{Error, Result};
use crate::metrics::{mean_defined, recall_at_k};
use crate::models::{self, order_by_scores, topk_from_scores, EmbeddingModel, LabeledPair, ModelKind, Triple};
use crate::trajectory::{Checkpoint, TeacherTrajectory};
use crate::data::InteractionDataset;

/// Which epochs the rank-std of a checkpoint is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyMode {
    /// The five epochs ending at each checkpoint.
    PerCheckpoint,
    /// The five epochs ending at the converged epoch, for every checkpoint.
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub lr: f64,
    pub reg: f64,
    /// Hinge margin (metric learning only).
    pub margin: f64,
    /// Sampled negatives per positive (MLP only).
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// First epoch that may count as converged; defaults to `5·E`.
    pub min_epochs: Option<usize>,
    /// Number of checkpoints `E`.
    pub checkpoints: usize,
    /// Stored ranking cutoff `K`.
    pub k: usize,
    pub seed: u64,
    pub consistency: ConsistencyMode,
}

impl TeacherConfig {
    pub fn new(kind: ModelKind) -> Self {
        // the MLP loses its rectifiers to large summed updates, so it takes
        // smaller batches
        let (lr, reg, batch_size) = match kind {
            ModelKind::Mf => (0.1, 1e-4, 32),
            ModelKind::Ml => (0.01, 0.0, 32),
            ModelKind::Dnn => (0.005, 0.0, 8),
        };
        Self {
            kind,
            dim: 64,
            lr,
            reg,
            margin: 0.5,
            negatives_per_positive: 4,
            batch_size,
            max_epochs: 300,
            patience: 10,
            min_epochs: None,
            checkpoints: 4,
            k: 50,
            seed: 0,
            consistency: ConsistencyMode::PerCheckpoint,
        }
    }

    fn first_eligible_epoch(&self) -> usize {
        self.min_epochs.unwrap_or(HISTORY_LEN * self.checkpoints).max(1)
    }
}

/// `ceil(T*·e/E)` for `e = 1..=E`.
pub fn checkpoint_epochs(converged: usize, checkpoints: usize) -> Vec<usize> {
    (1..=checkpoints)
        .map(|e| (converged * e).div_ceil(checkpoints))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub recall_valid: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    /// Parameters at the converged epoch.
    pub model: EmbeddingModel,
    pub trajectory: TeacherTrajectory,
    pub converged_epoch: usize,
    pub checkpoint_epochs: Vec<usize>,
    pub log: Vec<TeacherEpoch>,
}

/// Per-epoch snapshot of the teacher's rankings.
struct EpochRankings {
    topk: Vec<Vec<u32>>,
    observed: Vec<Vec<u32>>,
}

const VALID_CUTOFF: usize = 50;

pub fn train_teacher(ds: &InteractionDataset, cfg: &TeacherConfig) -> Result<TeacherRun> {
    if cfg.checkpoints == 0 || cfg.k == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "teacher needs E >= 1, K >= 1 and a positive batch size".into(),
        ));
    }
    let needed = HISTORY_LEN * cfg.checkpoints;
    let eligible_from = cfg.first_eligible_epoch();
    if cfg.max_epochs < eligible_from.max(needed) {
        return Err(Error::TooFewEpochs {
            converged: cfg.max_epochs,
            needed: eligible_from.max(needed),
            checkpoints: cfg.checkpoints,
        });
    }

    let mut model = EmbeddingModel::new(cfg.kind, ds.num_users, ds.num_items, cfg.dim, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let masks: Vec<Vec<bool>> = (0..ds.num_users).map(|u| ds.train_mask(u)).collect();
    let mut positives: Vec<(usize, usize)> = ds
        .train_items
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    let item_dist = Uniform::new(0, ds.num_items);
    let sample_negative = |u: usize, rng: &mut ChaCha8Rng| loop {
        let j = item_dist.sample(rng);
        if !masks[u][j] {
            return j;
        }
    };

    let mut history: Vec<EpochRankings> = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, EmbeddingModel)> = None;

    for epoch in 1..=cfg.max_epochs {
        positives.shuffle(&mut rng);
        let mut loss = 0.0;
        for batch in positives.chunks(cfg.batch_size) {
            loss += match cfg.kind {
                ModelKind::Mf | ModelKind::Ml => {
                    let triples: Vec<Triple> = batch
                        .iter()
                        .map(|&(u, i)| (u, i, sample_negative(u, &mut rng)))
                        .collect();
                    if cfg.kind == ModelKind::Mf {
                        models::bpr_step(&mut model, &triples, cfg.lr, cfg.reg)?
                    } else {
                        models::hinge_step(&mut model, &triples, cfg.margin, cfg.lr)?
                    }
                }
                ModelKind::Dnn => {
                    let mut pairs: Vec<LabeledPair> = Vec::with_capacity(batch.len() * (1 + cfg.negatives_per_positive));
                    for &(u, i) in batch {
                        pairs.push((u, i, 1.0));
                        for _ in 0..cfg.negatives_per_positive {
                            pairs.push((u, sample_negative(u, &mut rng), 0.0));
                        }
                    }
                    models::mlp_step(&mut model, &pairs, cfg.lr)?
                }
            };
        }
        if !loss.is_finite() || !model.all_finite() {
            return Err(Error::NonFiniteLoss { user: usize::MAX, epoch });
        }

        let snapshot = rank_all(&model, ds, &masks, cfg.k.max(VALID_CUTOFF));
        let (recall, _) = mean_defined((0..ds.num_users).map(|u| {
            (!ds.valid_items[u].is_empty()).then(|| {
                let top: Vec<usize> = snapshot.topk[u].iter().map(|&i| i as usize).collect();
                recall_at_k(&top, &ds.valid_items[u], VALID_CUTOFF)
            })
        }));
        log::debug!("teacher {} epoch {epoch}: loss {loss:.4} R@50 {recall:.4}", cfg.kind);
        log.push(TeacherEpoch {
            epoch,
            loss: loss / positives.len() as f64,
            recall_valid: recall,
        });
        history.push(EpochRankings {
            topk: snapshot.topk.into_iter().map(|mut l| { l.truncate(cfg.k); l }).collect(),
            observed: snapshot.observed,
        });

        if epoch >= eligible_from {
            let improved = best.as_ref().is_none_or(|(_, r, _)| recall > *r);
            if improved {
                best = Some((epoch, recall, model.clone()));
            } else if epoch - best.as_ref().unwrap().0 >= cfg.patience {
                break;
            }
        }
    }

    let (converged, _, model) = best.expect("max_epochs covers the first eligible epoch");
    if converged < needed {
        return Err(Error::TooFewEpochs {
            converged,
            needed,
            checkpoints: cfg.checkpoints,
        });
    }
    let epochs = checkpoint_epochs(converged, cfg.checkpoints);
    let trajectory = build_trajectory(ds, cfg, &history, &epochs, converged);
    Ok(TeacherRun {
        model,
        trajectory,
        converged_epoch: converged,
        checkpoint_epochs: epochs,
        log,
    })
}

fn rank_all(model: &EmbeddingModel, ds: &InteractionDataset, masks: &[Vec<bool>], k: usize) -> EpochRankings {
    let scorer = model.scorer();
    let (topk, observed): (Vec<Vec<u32>>, Vec<Vec<u32>>) = (0..ds.num_users)
        .into_par_iter()
        .map(|u| {
            let scores = scorer.scores(u);
            let top = topk_from_scores(&scores, &masks[u], k);
            let obs = order_by_scores(&scores, &ds.train_items[u]);
            (
                top.iter().map(|&i| i as u32).collect(),
                obs.iter().map(|&i| i as u32).collect(),
            )
        })
        .unzip();
    EpochRankings { topk, observed }
}

/// Rank-std of each item of `list` over the lists of five epochs.
fn window_std(list: &[u32], window: &[&[u32]], sentinel: usize) -> Vec<f64> {
    list.iter()
        .map(|item| {
            let ranks: Vec<Option<usize>> = window
                .iter()
                .map(|l| l.iter().position(|x| x == item))
                .collect();
            rank_std(&ranks, sentinel)
        })
        .collect()
}

fn build_trajectory(
    ds: &InteractionDataset,
    cfg: &TeacherConfig,
    history: &[EpochRankings],
    epochs: &[usize],
    converged: usize,
) -> TeacherTrajectory {
    // epochs are 1-based, history is 0-based
    let window = |end: usize| end - HISTORY_LEN..end;
    let checkpoints = epochs
        .iter()
        .map(|&t| {
            let std_end = match cfg.consistency {
                ConsistencyMode::PerCheckpoint => t,
                ConsistencyMode::Converged => converged,
            };
            let (lists, rank_std) = (0..ds.num_users)
                .map(|u| {
                    let list = &history[t - 1].topk[u];
                    let win: Vec<&[u32]> = history[window(std_end)].iter().map(|h| h.topk[u].as_slice()).collect();
                    (
                        list.iter().map(|&i| i as usize).collect::<Vec<_>>(),
                        window_std(list, &win, cfg.k),
                    )
                })
                .unzip();
            Checkpoint { lists, rank_std }
        })
        .collect();
    let (observed, observed_std) = (0..ds.num_users)
        .map(|u| {
            let list = &history[converged - 1].observed[u];
            let win: Vec<&[u32]> = history[window(converged)].iter().map(|h| h.observed[u].as_slice()).collect();
            (
                list.iter().map(|&i| i as usize).collect::<Vec<_>>(),
                window_std(list, &win, list.len()),
            )
        })
        .unzip();
    TeacherTrajectory {
        teacher: cfg.kind.to_string(),
        k: cfg.k,
        num_users: ds.num_users,
        checkpoints,
        observed,
        observed_std,
    }
}
