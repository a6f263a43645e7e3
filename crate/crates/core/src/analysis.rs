//! Trajectory diversity statistics and the fixed-target discrepancy study.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::curriculum::final_targets;
use crate::data::InteractionDataset;
use crate::distill::{distill_fixed, evaluate_student, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{loss_fine, ScoredLists};
use crate::models::{EmbeddingModel, ModelKind};
use crate::trajectory::TeacherTrajectory;

/// Share of items, by train interaction count, that counts as unpopular.
pub const UNPOPULAR_SHARE: f64 = 0.3;

/// Marks the `floor(share · |I|)` least-interacted items (ties to lower id).
pub fn unpopular_items(ds: &InteractionDataset, share: f64) -> Vec<bool> {
    let counts = ds.item_train_counts();
    let mut order: Vec<usize> = (0..ds.num_items).collect();
    order.sort_by_key(|&i| (counts[i], i));
    let mut flags = vec![false; ds.num_items];
    for &i in order.iter().take((share * ds.num_items as f64).floor() as usize) {
        flags[i] = true;
    }
    flags
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityRow {
    pub checkpoint: usize,
    /// Distinct items over all users' top-K lists.
    pub unique: usize,
    /// Distinct unpopular items among them.
    pub unique_unpopular: usize,
    /// Fraction of all list entries that are unpopular items.
    pub unpopular_fraction: f64,
    /// `unique` relative to the last checkpoint.
    pub unique_ratio: f64,
    /// `unpopular_fraction` relative to the last checkpoint.
    pub unpopular_ratio: f64,
}

pub fn trajectory_diversity(traj: &TeacherTrajectory, unpopular: &[bool], k: usize) -> Vec<DiversityRow> {
    let mut rows: Vec<DiversityRow> = traj
        .checkpoints
        .iter()
        .enumerate()
        .map(|(e, c)| {
            let mut seen = BTreeSet::new();
            let (mut entries, mut unpop) = (0usize, 0usize);
            for list in &c.lists {
                for &i in list.iter().take(k) {
                    seen.insert(i);
                    entries += 1;
                    unpop += usize::from(unpopular[i]);
                }
            }
            DiversityRow {
                checkpoint: e + 1,
                unique: seen.len(),
                unique_unpopular: seen.iter().filter(|&&i| unpopular[i]).count(),
                unpopular_fraction: if entries == 0 { 0.0 } else { unpop as f64 / entries as f64 },
                unique_ratio: 0.0,
                unpopular_ratio: 0.0,
            }
        })
        .collect();
    let last = rows.last().cloned().expect("trajectory has checkpoints");
    let ratio = |a: f64, b: f64| if b == 0.0 { f64::NAN } else { a / b };
    for r in &mut rows {
        r.unique_ratio = ratio(r.unique as f64, last.unique as f64);
        r.unpopular_ratio = ratio(r.unpopular_fraction, last.unpopular_fraction);
    }
    rows
}

pub fn render_diversity(teacher: &str, rows: &[DiversityRow]) -> String {
    let mut out = String::from("teacher\tcheckpoint\tunique\tunique_unpopular\tunpopular_fraction\tunique_ratio\tunpopular_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{teacher}\tE{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.checkpoint, r.unique, r.unique_unpopular, r.unpopular_fraction, r.unique_ratio, r.unpopular_ratio
        );
    }
    out
}

/// A named set of per-user target rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub name: String,
    pub targets: Vec<Vec<usize>>,
}

/// The supervisions of the study: every teacher's converged ranking, every
/// teacher's individual checkpoints, the ensemble of each group of
/// `homogeneous` teachers of one kind, and the ensemble of all
/// `heterogeneous` teachers.
pub fn standard_supervisions(
    heterogeneous: &[TeacherTrajectory],
    homogeneous: &[TeacherTrajectory],
    lambda: f64,
) -> Vec<Supervision> {
    let mut out = Vec::new();
    for t in heterogeneous {
        for e in 1..=t.num_checkpoints() {
            out.push(Supervision {
                name: format!("{}@E{e}", t.teacher),
                targets: t.checkpoints[e - 1].lists.clone(),
            });
        }
    }
    if !homogeneous.is_empty() {
        let k = homogeneous.iter().map(|t| t.k).max().unwrap_or(0);
        out.push(Supervision {
            name: format!("homogeneous:{}x{}", homogeneous[0].teacher, homogeneous.len()),
            targets: final_targets(homogeneous, lambda, k),
        });
    }
    if heterogeneous.len() > 1 {
        let k = heterogeneous.iter().map(|t| t.k).max().unwrap_or(0);
        out.push(Supervision {
            name: "heterogeneous".into(),
            targets: final_targets(heterogeneous, lambda, k),
        });
    }
    out
}

/// Mean per-user Plackett-Luce loss of the top `p_size` target items against
/// every other unobserved item, averaged over the list length.
pub fn nll(model: &EmbeddingModel, ds: &InteractionDataset, targets: &[Vec<usize>], p_size: usize) -> f64 {
    let scorer = model.scorer();
    let per_user: Vec<Option<f64>> = (0..ds.num_users)
        .into_par_iter()
        .map(|u| {
            let p: Vec<usize> = targets[u].iter().take(p_size).copied().collect();
            if p.is_empty() {
                return None;
            }
            let scores = scorer.scores(u);
            let mut blocked = ds.train_mask(u);
            for &i in &p {
                blocked[i] = true;
            }
            let n: Vec<f64> = (0..ds.num_items).filter(|&i| !blocked[i]).map(|i| scores[i]).collect();
            let s = ScoredLists {
                p: p.iter().map(|&i| scores[i]).collect(),
                n,
            };
            Some(loss_fine(&s) / p.len() as f64)
        })
        .collect();
    crate::metrics::mean_defined(per_user).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub supervision: String,
    pub d10: f64,
    pub d50: f64,
    pub nll: f64,
}

/// The student trained in the study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub seed: u64,
}

/// Distils a fresh student towards each supervision and measures how far it
/// ends up from that supervision.
pub fn study_discrepancy(
    supervisions: &[Supervision],
    ds: &InteractionDataset,
    student: StudentSpec,
    cfg: &TrainConfig,
) -> Result<Vec<StudyRow>> {
    if supervisions.is_empty() {
        return Err(Error::InvalidArgument("no supervision to study".into()));
    }
    supervisions
        .iter()
        .map(|s| {
            let model = EmbeddingModel::new(student.kind, ds.num_users, ds.num_items, student.dim, student.seed);
            let out = distill_fixed(model, &s.targets, ds, cfg)?;
            let (d10, d50, _, _) = evaluate_student(&out.model, ds, &s.targets, cfg.lambda);
            Ok(StudyRow {
                supervision: s.name.clone(),
                d10,
                d50,
                nll: nll(&out.model, ds, &s.targets, cfg.p_minus),
            })
        })
        .collect()
}

pub fn render_study(rows: &[StudyRow]) -> String {
    let mut out = String::from("supervision\tD@10\tD@50\tNLL\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}", r.supervision, r.d10, r.d50, r.nll);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Checkpoint;

    fn traj(lists_per_e: Vec<Vec<Vec<usize>>>) -> TeacherTrajectory {
        let users = lists_per_e[0].len();
        TeacherTrajectory {
            teacher: "t".into(),
            k: lists_per_e[0][0].len(),
            num_users: users,
            checkpoints: lists_per_e
                .into_iter()
                .map(|lists| Checkpoint {
                    rank_std: lists.iter().map(|l| vec![0.0; l.len()]).collect(),
                    lists,
                })
                .collect(),
            observed: vec![vec![]; users],
            observed_std: vec![vec![]; users],
        }
    }

    #[test]
    fn shared_list_has_list_length_unique_items() {
        let list: Vec<usize> = (0..50).collect();
        let t = traj(vec![vec![list.clone(); 3], vec![list; 3]]);
        let rows = trajectory_diversity(&t, &[false; 60], 50);
        assert_eq!(rows[0].unique, 50);
        assert_eq!(rows[1].unique_ratio, 1.0);
    }

    #[test]
    fn hand_built_union() {
        let t = traj(vec![
            vec![vec![0, 1, 2], vec![1, 2, 3]],
            vec![vec![0, 4, 5], vec![6, 7, 2]],
        ]);
        let mut unpop = vec![false; 8];
        unpop[5] = true;
        unpop[6] = true;
        let rows = trajectory_diversity(&t, &unpop, 3);
        assert_eq!(rows[0].unique, 4);
        assert_eq!(rows[1].unique, 6);
        assert_eq!(rows[1].unique_unpopular, 2);
        assert!((rows[1].unpopular_fraction - 2.0 / 6.0).abs() < 1e-15);
        assert!((rows[0].unique_ratio - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(rows[0].unpopular_ratio, 0.0);
        assert_eq!((rows[1].unique_ratio, rows[1].unpopular_ratio), (1.0, 1.0));
    }

    #[test]
    fn unpopular_share_breaks_ties_by_id() {
        let ds = InteractionDataset::from_splits(
            10,
            vec![vec![0, 1, 2, 3], vec![0, 1, 2]],
            vec![vec![]; 2],
            vec![vec![]; 2],
        )
        .unwrap();
        let flags = unpopular_items(&ds, 0.3);
        let chosen: Vec<usize> = (0..10).filter(|&i| flags[i]).collect();
        assert_eq!(chosen, vec![4, 5, 6]);
    }
}
