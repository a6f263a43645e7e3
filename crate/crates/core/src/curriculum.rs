//! Dynamic knowledge construction.
//!
//! For every user and teacher, `v` says which checkpoint of that teacher's
//! trajectory currently supervises the student. `d` is the student's
//! discrepancy to the *next* checkpoint, frozen when `v` last moved. Every
//! period the ratio `d / D@K(student, next)` is compared with `alpha`; once
//! the student has closed enough of the gap, `v` advances and the target
//! ranking is rebuilt as the ensemble of the selected checkpoints.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::ensemble::{ensemble_rank, TeacherRanking};
use crate::metrics::{discrepancy, RelevanceParams};
use crate::trajectory::TeacherTrajectory;

/// Lower clamp on the current discrepancy in the ratio.
pub const DISCREPANCY_FLOOR: f64 = 1e-12;

pub fn discrepancy_ratio(d_frozen: f64, current: f64) -> f64 {
    d_frozen / current.max(DISCREPANCY_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    /// Number of checkpoints per teacher.
    pub checkpoints: usize,
    /// `v[u][x]`, 1-based.
    pub v: Vec<Vec<usize>>,
    /// `d[u][x]`.
    pub d: Vec<Vec<f64>>,
    pub alpha: f64,
    pub epoch_of_last_update: usize,
}

/// `params.k` limited to the length of the target, so short stored lists
/// remain comparable.
fn params_for(target: &[usize], params: RelevanceParams) -> RelevanceParams {
    params.with_k(params.k.min(target.len()).max(1))
}

fn next_checkpoint(v: usize, e: usize) -> usize {
    (v + 1).min(e)
}

impl SelectionState {
    /// Fresh state with every `v = 1` (or every `v = E` when `start_converged`),
    /// and `d` frozen against the next checkpoint for the given student lists.
    pub fn new(
        trajectories: &[TeacherTrajectory],
        student: &[Vec<usize>],
        params: RelevanceParams,
        alpha: f64,
        start_converged: bool,
    ) -> Self {
        let e = trajectories[0].num_checkpoints();
        let start = if start_converged { e } else { 1 };
        let d = student
            .par_iter()
            .enumerate()
            .map(|(u, pi)| {
                trajectories
                    .iter()
                    .map(|t| {
                        let target = t.list(next_checkpoint(start, e), u);
                        discrepancy(pi, target, params_for(target, params))
                    })
                    .collect()
            })
            .collect();
        Self {
            checkpoints: e,
            v: vec![vec![start; trajectories.len()]; student.len()],
            d,
            alpha,
            epoch_of_last_update: 0,
        }
    }

    pub fn num_users(&self) -> usize {
        self.v.len()
    }

    pub fn all_converged(&self, u: usize) -> bool {
        self.v[u].iter().all(|&v| v == self.checkpoints)
    }

    pub fn anneal_alpha(&mut self, factor: f64) {
        self.alpha *= factor;
    }

    pub fn mean_v(&self) -> f64 {
        let n: usize = self.v.iter().map(Vec::len).sum();
        self.v.iter().flatten().sum::<usize>() as f64 / n.max(1) as f64
    }

    /// Tab-separated `user teacher v d` rows preceded by the current alpha.
    pub fn dump(&self, teacher_names: &[String]) -> String {
        let mut out = format!("# alpha\t{}\nuser\tteacher\tv\td\n", self.alpha);
        for (u, (vs, ds)) in self.v.iter().zip(&self.d).enumerate() {
            for (x, (v, d)) in vs.iter().zip(ds).enumerate() {
                let _ = writeln!(out, "{u}\t{}\t{v}\t{d}", teacher_names[x]);
            }
        }
        out
    }
}

/// `π^d_u`: ensemble of the checkpoints currently selected for `u`.
pub fn ensemble_target(
    trajectories: &[TeacherTrajectory],
    u: usize,
    v: &[usize],
    lambda: f64,
    k_out: usize,
) -> Vec<usize> {
    let rankings: Vec<TeacherRanking<'_>> = trajectories
        .iter()
        .zip(v)
        .map(|(t, &e)| TeacherRanking::new(t.list(e, u), t.stds(e, u)))
        .collect();
    ensemble_rank(&rankings, lambda, k_out).items
}

/// Ensemble of the final checkpoints for every user.
pub fn final_targets(trajectories: &[TeacherTrajectory], lambda: f64, k_out: usize) -> Vec<Vec<usize>> {
    let e = trajectories[0].num_checkpoints();
    let v = vec![e; trajectories.len()];
    (0..trajectories[0].num_users)
        .into_par_iter()
        .map(|u| ensemble_target(trajectories, u, &v, lambda, k_out))
        .collect()
}

/// Runs one selection step for user `u`. Returns the rebuilt target if any
/// teacher advanced.
pub fn dkc_update_user(
    state: &mut SelectionState,
    u: usize,
    student_pi: &[usize],
    trajectories: &[TeacherTrajectory],
    params: RelevanceParams,
    k_out: usize,
) -> Option<Vec<usize>> {
    let (changed, v) = dkc_step(state.alpha, state.checkpoints, &mut state.v[u], &mut state.d[u], student_pi, trajectories, u, params);
    changed.then(|| ensemble_target(trajectories, u, &v, params.lambda, k_out))
}

#[allow(clippy::too_many_arguments)]
fn dkc_step(
    alpha: f64,
    e: usize,
    v: &mut [usize],
    d: &mut [f64],
    student_pi: &[usize],
    trajectories: &[TeacherTrajectory],
    u: usize,
    params: RelevanceParams,
) -> (bool, Vec<usize>) {
    let mut changed = false;
    for (x, t) in trajectories.iter().enumerate() {
        if v[x] >= e {
            continue;
        }
        let next = t.list(v[x] + 1, u);
        let current = discrepancy(student_pi, next, params_for(next, params));
        if discrepancy_ratio(d[x], current) > alpha {
            v[x] += 1;
            let target = t.list(next_checkpoint(v[x], e), u);
            d[x] = discrepancy(student_pi, target, params_for(target, params));
            changed = true;
        }
    }
    (changed, v.to_vec())
}

/// Selection step over a set of users in parallel. `student[u]` is only read
/// for users in `users`; the result pairs each changed user with its new target.
pub fn dkc_update(
    state: &mut SelectionState,
    users: &[usize],
    student: &[Vec<usize>],
    trajectories: &[TeacherTrajectory],
    params: RelevanceParams,
    k_out: usize,
    epoch: usize,
) -> Vec<(usize, Vec<usize>)> {
    let alpha = state.alpha;
    let e = state.checkpoints;
    let mut rows: Vec<(usize, Vec<usize>, Vec<f64>)> = users
        .iter()
        .map(|&u| (u, state.v[u].clone(), state.d[u].clone()))
        .collect();
    let changed: Vec<Option<(usize, Vec<usize>)>> = rows
        .par_iter_mut()
        .map(|(u, v, d)| {
            let (moved, v) = dkc_step(alpha, e, v, d, &student[*u], trajectories, *u, params);
            moved.then(|| (*u, ensemble_target(trajectories, *u, &v, params.lambda, k_out)))
        })
        .collect();
    for (u, v, d) in rows {
        state.v[u] = v;
        state.d[u] = d;
    }
    state.epoch_of_last_update = epoch;
    changed.into_iter().flatten().collect()
}
