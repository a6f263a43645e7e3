//! Student training against teacher trajectories.
//!
//! Per user the student is trained on two lists: `P⁺`, the teachers'
//! consensus ranking of the user's observed items (fixed), and `P⁻`, the head
//! of the current target ranking `π^d` of unobserved items (moves with the
//! curriculum). Both are contrasted against freshly sampled negatives `N`.
//! While a user's target is still built from intermediate checkpoints the
//! order-free objective is used; once every teacher is at its final
//! checkpoint the user switches to the Plackett-Luce objective.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curriculum::{dkc_update, ensemble_target, final_targets, SelectionState};
use crate::data::InteractionDataset;
use crate::ensemble::{ensemble_rank, TeacherRanking};
use crate::error::{Error, Result};
use crate::losses::{LossMode, ScoredLists};
use crate::metrics::{discrepancy, mean_defined, ndcg_eval, recall_at_k, RelevanceParams};
use crate::models::{EmbeddingModel, Gradients};
use crate::trajectory::{check_compatible, Checkpoint, TeacherTrajectory};

/// Training-procedure ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Curriculum, adaptive objective, both lists.
    Full,
    /// Final-checkpoint ensemble as a fixed target from the start.
    NoDkc,
    /// Plackett-Luce objective throughout.
    NoAdo,
    /// Unobserved-item list only.
    NoPplus,
    /// One list `[P⁺; P⁻]` against `N`.
    MergedPd,
    /// `P⁺` against `P⁻ ∪ N`, plus `P⁻` against `N`.
    Stacked,
    /// Fixed target, Plackett-Luce only, unobserved list only.
    Rrd,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoDkc,
        Variant::NoAdo,
        Variant::NoPplus,
        Variant::MergedPd,
        Variant::Stacked,
        Variant::Rrd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoDkc => "no_dkc",
            Variant::NoAdo => "no_ado",
            Variant::NoPplus => "no_pplus",
            Variant::MergedPd => "merged_pd",
            Variant::Stacked => "stacked",
            Variant::Rrd => "rrd",
        }
    }

    pub fn uses_curriculum(self) -> bool {
        !matches!(self, Variant::NoDkc | Variant::Rrd)
    }

    pub fn uses_adaptive_objective(self) -> bool {
        !matches!(self, Variant::NoAdo | Variant::Rrd)
    }

    pub fn uses_observed(self) -> bool {
        !matches!(self, Variant::NoPplus | Variant::Rrd)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Curriculum period in epochs.
    pub period: usize,
    pub alpha0: f64,
    /// Multiplier applied to alpha every period.
    pub anneal: f64,
    pub lambda: f64,
    /// Cutoff of the discrepancy used by the curriculum.
    pub k_dkc: usize,
    /// Expected number of checkpoints per trajectory.
    pub checkpoints: usize,
    pub n_sample: usize,
    pub p_minus: usize,
    pub lr: f64,
    pub reg: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Validation R@10 patience, counted in evaluations. Only armed once every
    /// user trains on final-checkpoint targets.
    pub patience: Option<usize>,
    /// Evaluate every this many epochs (the last epoch is always evaluated).
    pub eval_every: usize,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            period: 10,
            alpha0: 1.05,
            anneal: 0.995,
            lambda: 10.0,
            k_dkc: 50,
            checkpoints: 4,
            n_sample: 50,
            p_minus: 50,
            lr: 0.05,
            reg: 1e-4,
            max_epochs: 300,
            seed: 0,
            patience: Some(10),
            eval_every: 1,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.period > 0
            && self.alpha0 > 0.0
            && self.anneal > 0.0
            && self.lambda > 0.0
            && self.k_dkc > 0
            && self.checkpoints > 0
            && self.n_sample > 0
            && self.p_minus > 0
            && self.lr > 0.0
            && self.reg >= 0.0
            && self.eval_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }

    fn relevance(&self) -> RelevanceParams {
        RelevanceParams {
            lambda: self.lambda,
            k: self.k_dkc,
        }
    }
}

/// Per-user `P⁺` and current `P⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    pub p_plus: Vec<Vec<usize>>,
    pub p_minus: Vec<Vec<usize>>,
}

/// Consensus ranking of every user's observed items by the final teachers.
pub fn build_p_plus(trajectories: &[TeacherTrajectory], ds: &InteractionDataset, lambda: f64) -> Vec<Vec<usize>> {
    (0..ds.num_users)
        .map(|u| {
            let n = ds.train_items[u].len();
            if n == 0 {
                return Vec::new();
            }
            let rankings: Vec<TeacherRanking<'_>> = trajectories
                .iter()
                .map(|t| TeacherRanking::new(&t.observed[u], &t.observed_std[u]))
                .collect();
            ensemble_rank(&rankings, lambda, n).items
        })
        .collect()
}

pub fn refresh_p_minus(pi_d: &[usize], size: usize) -> Vec<usize> {
    if pi_d.len() < size {
        log::debug!("target has {} items, fewer than |P-| = {size}", pi_d.len());
    }
    pi_d[..size.min(pi_d.len())].to_vec()
}

/// Uniform sample without replacement of `size` unobserved items of `u` that
/// are not in `exclude`. When fewer are available, all of them are returned
/// in random order.
pub fn sample_negatives(
    ds: &InteractionDataset,
    u: usize,
    exclude: &[usize],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut blocked = ds.train_mask(u);
    sample_unblocked(&mut blocked, exclude, size, rng)
}

/// `blocked` marks observed items; it is restored before returning.
fn sample_unblocked(blocked: &mut [bool], exclude: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let newly: Vec<usize> = exclude.iter().copied().filter(|&i| !blocked[i]).collect();
    for &i in &newly {
        blocked[i] = true;
    }
    let mut pool: Vec<usize> = (0..blocked.len()).filter(|&i| !blocked[i]).collect();
    for &i in &newly {
        blocked[i] = false;
    }
    if size >= pool.len() {
        pool.shuffle(rng);
        return pool;
    }
    index::sample(rng, pool.len(), size)
        .into_iter()
        .map(|k| pool[k])
        .collect()
}

/// One evaluated epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Discrepancy to the final-checkpoint ensemble.
    pub d10: f64,
    pub d50: f64,
    pub recall10_valid: f64,
    pub ndcg10_valid: f64,
    pub mean_v: f64,
    pub alpha: f64,
    /// Mean per-user loss over the epoch (NaN before training).
    pub loss: f64,
    /// Fraction of users trained with the Plackett-Luce objective.
    pub frac_fine: f64,
}

pub const LOG_HEADER: &str = "epoch\tD@10\tD@50\tR@10_valid\tN@10_valid\tmean_v\talpha\tloss\tmode_frac_fine";

pub fn render_log(rows: &[EpochRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}",
            r.epoch, r.d10, r.d50, r.recall10_valid, r.ndcg10_valid, r.mean_v, r.alpha, r.loss, r.frac_fine
        );
    }
    out
}

/// When each user's objective changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserTrace {
    /// Epoch at whose start every teacher reached its final checkpoint
    /// (0 = from the start).
    pub converged_epoch: Option<usize>,
    pub first_fine_epoch: Option<usize>,
    pub last_overall_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch run.
    pub model: EmbeddingModel,
    pub log: Vec<EpochRow>,
    pub traces: Vec<UserTrace>,
    /// `v` after every curriculum period, starting with the initial state.
    pub v_history: Vec<(usize, Vec<Vec<usize>>)>,
    pub state: SelectionState,
    pub targets: DistillTargets,
    pub epochs_run: usize,
}

/// Top-`k` unobserved items for every user.
pub fn rank_unobserved(model: &EmbeddingModel, ds: &InteractionDataset, k: usize) -> Vec<Vec<usize>> {
    let scorer = model.scorer();
    (0..ds.num_users)
        .into_par_iter()
        .map(|u| scorer.rank_topk(u, &ds.train_mask(u), k).into_inner())
        .collect()
}

/// Discrepancy of the student to `targets` at K = 10 and 50, plus
/// validation Recall@10 and NDCG@10.
pub fn evaluate_student(
    model: &EmbeddingModel,
    ds: &InteractionDataset,
    targets: &[Vec<usize>],
    lambda: f64,
) -> (f64, f64, f64, f64) {
    let lists = rank_unobserved(model, ds, 50);
    let d = |k: usize| {
        let p = RelevanceParams { lambda, k };
        mean_defined(
            lists
                .iter()
                .zip(targets)
                .map(|(l, t)| (!t.is_empty()).then(|| discrepancy(l, t, p))),
        )
        .0
    };
    let valid = |f: fn(&[usize], &[usize], usize) -> f64| {
        mean_defined(
            lists
                .iter()
                .zip(&ds.valid_items)
                .map(|(l, v)| (!v.is_empty()).then(|| f(l, v, 10))),
        )
        .0
    };
    (d(10), d(50), valid(recall_at_k), valid(ndcg_eval))
}

fn check_trajectories(trajectories: &[TeacherTrajectory], ds: &InteractionDataset, cfg: &TrainConfig) -> Result<()> {
    check_compatible(trajectories, ds.num_users)?;
    let mut problems = Vec::new();
    for t in trajectories {
        t.validate()?;
        if t.num_checkpoints() != cfg.checkpoints {
            problems.push(format!(
                "{} has {} checkpoints, config expects {}",
                t.teacher,
                t.num_checkpoints(),
                cfg.checkpoints
            ));
            continue;
        }
        'users: for u in 0..ds.num_users {
            let mask = ds.train_mask(u);
            for (e, c) in t.checkpoints.iter().enumerate() {
                if let Some(&i) = c.lists[u].iter().find(|&&i| i >= ds.num_items || mask[i]) {
                    problems.push(format!(
                        "{} checkpoint {} user {u}: item {i} is observed or out of range",
                        t.teacher,
                        e + 1
                    ));
                    break 'users;
                }
            }
            if t.observed[u].iter().any(|&i| i >= ds.num_items || !mask[i]) {
                problems.push(format!("{} user {u}: observed ranking has unobserved items", t.teacher));
                break;
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::TrajectoryMismatch(problems.join("; ")))
    }
}

struct StepLists<'a> {
    p_plus: &'a [usize],
    p_minus: &'a [usize],
    negatives: &'a [usize],
}

/// Adds `weight · L(p, n)` and its gradient; returns the weighted loss.
fn add_term(
    model: &EmbeddingModel,
    u: usize,
    p: &[usize],
    n: &[usize],
    mode: LossMode,
    grads: &mut Gradients,
) -> Result<f64> {
    if p.is_empty() {
        return Ok(0.0);
    }
    let weight = 1.0 / p.len() as f64;
    let s = ScoredLists::new(
        p.iter().map(|&i| model.score(u, i)).collect(),
        n.iter().map(|&i| model.score(u, i)).collect(),
    )
    .map_err(|_| Error::NonFiniteGradient {
        user: u,
        items: p.iter().chain(n).copied().collect(),
    })?;
    let g = mode.grad(&s);
    for (&i, gi) in p.iter().zip(&g.p).chain(n.iter().zip(&g.n)) {
        model.accumulate(u, i, weight * gi, grads);
    }
    Ok(weight * mode.loss(&s))
}

fn user_step(
    model: &mut EmbeddingModel,
    u: usize,
    lists: &StepLists<'_>,
    variant: Variant,
    mode: LossMode,
    lr: f64,
    reg: f64,
) -> Result<f64> {
    let mut grads = Gradients::default();
    let mut loss = 0.0;
    let StepLists { p_plus, p_minus, negatives } = *lists;
    match variant {
        Variant::Full | Variant::NoDkc | Variant::NoAdo => {
            loss += add_term(model, u, p_plus, negatives, mode, &mut grads)?;
            loss += add_term(model, u, p_minus, negatives, mode, &mut grads)?;
        }
        Variant::NoPplus | Variant::Rrd => {
            loss += add_term(model, u, p_minus, negatives, mode, &mut grads)?;
        }
        Variant::MergedPd => {
            let merged: Vec<usize> = p_plus.iter().chain(p_minus).copied().collect();
            loss += add_term(model, u, &merged, negatives, mode, &mut grads)?;
        }
        Variant::Stacked => {
            let below: Vec<usize> = p_minus.iter().chain(negatives).copied().collect();
            loss += add_term(model, u, p_plus, &below, mode, &mut grads)?;
            loss += add_term(model, u, p_minus, negatives, mode, &mut grads)?;
        }
    }
    model.add_l2(&mut grads, reg);
    loss += model.l2_penalty(&grads, reg);
    if !grads.is_finite() {
        let mut items: Vec<usize> = grads.items.keys().copied().collect();
        items.truncate(8);
        return Err(Error::NonFiniteGradient { user: u, items });
    }
    model.apply(&grads, lr);
    Ok(loss)
}

/// Trains `student` against `trajectories` with the configured variant.
pub fn train_student(
    student: EmbeddingModel,
    trajectories: &[TeacherTrajectory],
    ds: &InteractionDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_trajectories(trajectories, ds, cfg)?;
    if student.num_users != ds.num_users || student.num_items != ds.num_items {
        return Err(Error::InvalidArgument(format!(
            "student covers {}x{} but the dataset is {}x{}",
            student.num_users, student.num_items, ds.num_users, ds.num_items
        )));
    }
    let variant = cfg.variant;
    let params = cfg.relevance();
    let k_target = trajectories.iter().map(|t| t.k).max().unwrap_or(0).max(cfg.p_minus);
    let k_student = cfg.k_dkc.max(cfg.p_minus);

    let mut model = student;
    let student_lists = rank_unobserved(&model, ds, k_student);
    let mut state = SelectionState::new(trajectories, &student_lists, params, cfg.alpha0, !variant.uses_curriculum());
    let final_target = final_targets(trajectories, cfg.lambda, k_target);
    let p_plus = if variant.uses_observed() {
        build_p_plus(trajectories, ds, cfg.lambda)
    } else {
        vec![Vec::new(); ds.num_users]
    };
    let mut p_minus: Vec<Vec<usize>> = (0..ds.num_users)
        .map(|u| refresh_p_minus(&ensemble_target(trajectories, u, &state.v[u], cfg.lambda, k_target), cfg.p_minus))
        .collect();
    let mut traces: Vec<UserTrace> = (0..ds.num_users)
        .map(|u| UserTrace {
            converged_epoch: state.all_converged(u).then_some(0),
            ..Default::default()
        })
        .collect();
    let mut v_history = vec![(0, state.v.clone())];
    let mut log = Vec::new();

    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log,
            traces,
            v_history,
            state,
            targets: DistillTargets { p_plus, p_minus },
            epochs_run: 0,
        });
    }

    let row = |model: &EmbeddingModel, epoch, state: &SelectionState, loss, frac_fine| {
        let (d10, d50, recall10_valid, ndcg10_valid) = evaluate_student(model, ds, &final_target, cfg.lambda);
        EpochRow {
            epoch,
            d10,
            d50,
            recall10_valid,
            ndcg10_valid,
            mean_v: state.mean_v(),
            alpha: state.alpha,
            loss,
            frac_fine,
        }
    };
    log.push(row(&model, 0, &state, f64::NAN, 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut masks: Vec<Vec<bool>> = (0..ds.num_users).map(|u| ds.train_mask(u)).collect();
    let mut order: Vec<usize> = (0..ds.num_users).collect();
    let mut best_recall = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        if variant.uses_curriculum() && epoch % cfg.period == 0 {
            let pending: Vec<usize> = (0..ds.num_users).filter(|&u| !state.all_converged(u)).collect();
            if !pending.is_empty() {
                let lists = rank_unobserved(&model, ds, k_student);
                for (u, target) in dkc_update(&mut state, &pending, &lists, trajectories, params, k_target, epoch) {
                    p_minus[u] = refresh_p_minus(&target, cfg.p_minus);
                }
                for &u in &pending {
                    if state.all_converged(u) {
                        traces[u].converged_epoch = Some(epoch);
                    }
                }
            }
            state.anneal_alpha(cfg.anneal);
            v_history.push((epoch, state.v.clone()));
        }

        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut fine = 0usize;
        for &u in &order {
            let mode = if !variant.uses_adaptive_objective() || state.all_converged(u) {
                LossMode::Fine
            } else {
                LossMode::Overall
            };
            let trace = &mut traces[u];
            match mode {
                LossMode::Fine => {
                    fine += 1;
                    trace.first_fine_epoch.get_or_insert(epoch);
                }
                LossMode::Overall => trace.last_overall_epoch = Some(epoch),
            }
            let negatives = sample_unblocked(&mut masks[u], &p_minus[u], cfg.n_sample, &mut rng);
            let lists = StepLists {
                p_plus: &p_plus[u],
                p_minus: &p_minus[u],
                negatives: &negatives,
            };
            let loss = user_step(&mut model, u, &lists, variant, mode, cfg.lr, cfg.reg)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { user: u, epoch });
            }
            loss_sum += loss;
        }
        epochs_run = epoch;

        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let r = row(
                &model,
                epoch,
                &state,
                loss_sum / ds.num_users as f64,
                fine as f64 / ds.num_users as f64,
            );
            log::debug!("epoch {epoch}: D@50 {:.4} R@10 {:.4} mean_v {:.3}", r.d50, r.recall10_valid, r.mean_v);
            let recall = r.recall10_valid;
            log.push(r);
            let armed = (0..ds.num_users).all(|u| state.all_converged(u));
            if let (Some(patience), true) = (cfg.patience, armed) {
                if recall > best_recall {
                    best_recall = recall;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        log::info!("validation R@10 stalled for {patience} evaluations; stopping at epoch {epoch}");
                        break;
                    }
                }
            }
        }
    }

    Ok(TrainOutcome {
        model,
        log,
        traces,
        v_history,
        state,
        targets: DistillTargets { p_plus, p_minus },
        epochs_run,
    })
}

/// Same as [`train_student`] with `cfg.variant` overridden.
pub fn distill_ablation(
    variant: Variant,
    student: EmbeddingModel,
    trajectories: &[TeacherTrajectory],
    ds: &InteractionDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig { variant, ..cfg.clone() };
    train_student(student, trajectories, ds, &cfg)
}

/// Wraps fixed per-user target lists as a one-checkpoint trajectory with
/// zero rank-std, so that its ensemble is the lists themselves.
pub fn fixed_target_trajectory(name: &str, lists: &[Vec<usize>], ds: &InteractionDataset) -> TeacherTrajectory {
    TeacherTrajectory {
        teacher: name.to_string(),
        k: lists.iter().map(Vec::len).max().unwrap_or(0),
        num_users: lists.len(),
        checkpoints: vec![Checkpoint {
            rank_std: lists.iter().map(|l| vec![0.0; l.len()]).collect(),
            lists: lists.to_vec(),
        }],
        observed: ds.train_items.clone(),
        observed_std: ds.train_items.iter().map(|l| vec![0.0; l.len()]).collect(),
    }
}

/// Distils `student` towards fixed targets with the Plackett-Luce objective
/// over the top `cfg.p_minus` of each target.
pub fn distill_fixed(
    student: EmbeddingModel,
    targets: &[Vec<usize>],
    ds: &InteractionDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let traj = fixed_target_trajectory("fixed", targets, ds);
    let cfg = TrainConfig {
        variant: Variant::Rrd,
        checkpoints: 1,
        ..cfg.clone()
    };
    train_student(student, &[traj], ds, &cfg)
}
