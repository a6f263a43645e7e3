//! Consistency-weighted rank aggregation.
//!
//! Each teacher contributes, for every item of its stored top-K, an
//! importance `exp(-rank/lambda) + exp(-std/lambda)` where `std` is the
//! spread of that item's rank over the teacher's last five epochs. Items a
//! teacher did not rank get importance 0 from that teacher. The aggregate
//! ranking sorts the union of items by mean importance over all teachers.

use std::cmp::Ordering;
use std::collections::HashMap;

/// Number of consecutive epochs a rank history spans.
pub const HISTORY_LEN: usize = 5;

/// Population standard deviation (divisor 5) of an item's rank over five
/// epochs. `None` means the item was outside the top-`k` that epoch and is
/// counted at rank `k`.
pub fn rank_std(history: &[Option<usize>], k: usize) -> f64 {
    assert_eq!(
        history.len(),
        HISTORY_LEN,
        "rank history must span exactly {HISTORY_LEN} epochs"
    );
    let ranks: Vec<f64> = history.iter().map(|r| r.unwrap_or(k) as f64).collect();
    let mean = ranks.iter().sum::<f64>() / HISTORY_LEN as f64;
    let var = ranks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / HISTORY_LEN as f64;
    var.sqrt()
}

pub fn importance(rank: usize, std: f64, lambda: f64) -> f64 {
    (-(rank as f64) / lambda).exp() + (-std / lambda).exp()
}

/// One teacher's ranking together with the rank-std of each position.
#[derive(Debug, Clone, Copy)]
pub struct TeacherRanking<'a> {
    pub items: &'a [usize],
    pub rank_std: &'a [f64],
}

impl<'a> TeacherRanking<'a> {
    pub fn new(items: &'a [usize], rank_std: &'a [f64]) -> Self {
        assert_eq!(items.len(), rank_std.len(), "one std per ranked item");
        Self { items, rank_std }
    }
}

/// Outcome of [`ensemble_rank`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRanking {
    pub items: Vec<usize>,
    /// True when fewer than `k_out` distinct items were available.
    pub truncated: bool,
}

/// Aggregates the teachers' rankings into the `k_out` items with the highest
/// mean importance. Ties go to the item ranked by more teachers, then to the
/// lower item id.
pub fn ensemble_rank(teachers: &[TeacherRanking<'_>], lambda: f64, k_out: usize) -> EnsembleRanking {
    assert!(!teachers.is_empty(), "ensemble needs at least one teacher");
    let m = teachers.len() as f64;

    let mut contributions: HashMap<usize, Vec<f64>> = HashMap::new();
    for t in teachers {
        for (rank, (&item, &std)) in t.items.iter().zip(t.rank_std).enumerate() {
            contributions
                .entry(item)
                .or_default()
                .push(importance(rank, std, lambda));
        }
    }

    let mut scored: Vec<(usize, f64, usize)> = contributions
        .into_iter()
        .map(|(item, mut c)| {
            // summation order must not depend on teacher order
            c.sort_by(f64::total_cmp);
            (item, c.iter().sum::<f64>() / m, c.len())
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| b.2.cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });

    let truncated = scored.len() < k_out;
    if truncated {
        log::debug!(
            "ensemble union has {} items, fewer than the requested {k_out}",
            scored.len()
        );
    }
    scored.truncate(k_out);
    EnsembleRanking {
        items: scored.into_iter().map(|(item, _, _)| item).collect(),
        truncated,
    }
}

/// Total order used for ranking by score: higher score first, then lower id.
pub(crate) fn by_score_then_id(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_std_examples() {
        assert_eq!(rank_std(&[Some(5); 5], 50), 0.0);
        let s = rank_std(&[Some(1), Some(2), Some(3), Some(4), Some(5)], 50);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        let s = rank_std(&[Some(0), Some(0), Some(0), Some(0), None], 50);
        assert!((s - 20.0).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn rank_std_needs_five_values() {
        rank_std(&[Some(1), Some(2)], 10);
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance(0, 0.0, 10.0), 2.0);
        assert!((importance(10, 5.0, 10.0) - 0.974_410_100_884_075_8).abs() < 1e-12);
        assert!((importance(100_000, 3.0, 10.0) - (-0.3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn single_teacher_is_identity_on_prefix() {
        let items = [4, 9, 1, 7, 3];
        let std = [0.0; 5];
        let out = ensemble_rank(&[TeacherRanking::new(&items, &std)], 10.0, 3);
        assert_eq!(out.items, vec![4, 9, 1]);
        assert!(!out.truncated);
    }

    #[test]
    fn identical_teachers_give_shared_list() {
        let items = [2, 0, 5];
        let std = [0.0; 3];
        let t = TeacherRanking::new(&items, &std);
        assert_eq!(ensemble_rank(&[t, t], 10.0, 3).items, items.to_vec());
    }

    #[test]
    fn oversized_request_truncates() {
        let items = [2, 0];
        let std = [0.0; 2];
        let out = ensemble_rank(&[TeacherRanking::new(&items, &std)], 10.0, 5);
        assert_eq!(out.items, vec![2, 0]);
        assert!(out.truncated);
    }

    fn brute_force(lists: &[Vec<usize>], stds: &[Vec<f64>], lambda: f64, k_out: usize) -> Vec<usize> {
        let universe: usize = lists.iter().flatten().max().unwrap() + 1;
        let mut rows = Vec::new();
        for item in 0..universe {
            let mut seen = 0;
            let mut c = Vec::new();
            for (l, s) in lists.iter().zip(stds) {
                if let Some(r) = l.iter().position(|&x| x == item) {
                    seen += 1;
                    c.push((-(r as f64) / lambda).exp() + (-s[r] / lambda).exp());
                }
            }
            if seen > 0 {
                c.sort_by(f64::total_cmp);
                rows.push((item, c.iter().sum::<f64>() / lists.len() as f64, seen));
            }
        }
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
        rows.into_iter().take(k_out).map(|r| r.0).collect()
    }

    #[test]
    fn matches_brute_force_and_ignores_teacher_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut lists = Vec::new();
            let mut stds = Vec::new();
            for _ in 0..3 {
                let mut items: Vec<usize> = (0..10).collect();
                items.shuffle(&mut rng);
                items.truncate(rng.gen_range(1..=6));
                stds.push(items.iter().map(|_| rng.gen_range(0.0..5.0)).collect::<Vec<f64>>());
                lists.push(items);
            }
            let teachers: Vec<_> = lists
                .iter()
                .zip(&stds)
                .map(|(l, s)| TeacherRanking::new(l, s))
                .collect();
            let out = ensemble_rank(&teachers, 10.0, 5);
            assert_eq!(out.items, brute_force(&lists, &stds, 10.0, 5));
            let mut rev = teachers.clone();
            rev.reverse();
            assert_eq!(ensemble_rank(&rev, 10.0, 5), out);
        }
    }
}
