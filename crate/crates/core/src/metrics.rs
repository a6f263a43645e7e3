//! Ranking metrics.
//!
//! Two families live here: the discrepancy `D@K = 1 - NDCG@K` of a ranking
//! measured against a target ranking with geometric relevance
//! `exp(-rank/lambda)`, and the usual held-out Recall@K / NDCG@K with binary
//! relevance. Positions are 1-based inside the DCG sum and the log is base 2.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};

/// An ordered list of distinct item ids; index 0 is the top of the ranking.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RankedList(Vec<usize>);

impl RankedList {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("ranked list must not be empty".into()));
        }
        let mut sorted = items.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "ranked list contains duplicate items: {items:?}"
            )));
        }
        Ok(Self(items))
    }

    /// Wraps `items` without checking for duplicates. Callers that build the
    /// list from a sort over distinct ids use this.
    pub fn from_sorted_unchecked(items: Vec<usize>) -> Self {
        Self(items)
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// 0-based rank of `item`, if present.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.0.iter().position(|&i| i == item)
    }

    /// The first `k` entries (or all of them when shorter).
    pub fn top(&self, k: usize) -> &[usize] {
        &self.0[..k.min(self.0.len())]
    }

    pub fn truncated(&self, k: usize) -> RankedList {
        Self(self.top(k).to_vec())
    }
}

impl Deref for RankedList {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for RankedList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Sharpness `lambda` of the geometric relevance and cutoff `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceParams {
    pub lambda: f64,
    pub k: usize,
}

impl RelevanceParams {
    pub fn new(lambda: f64, k: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "relevance needs lambda > 0 and K >= 1, got lambda={lambda}, K={k}"
            )));
        }
        Ok(Self { lambda, k })
    }

    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }
}

impl Default for RelevanceParams {
    fn default() -> Self {
        Self { lambda: 10.0, k: 50 }
    }
}

/// `exp(-r(target, item)/lambda)` inside the target's top-K, else 0.
pub fn relevance(target: &[usize], item: usize, params: RelevanceParams) -> f64 {
    match target.iter().take(params.k).position(|&i| i == item) {
        Some(rank) => (-(rank as f64) / params.lambda).exp(),
        None => 0.0,
    }
}

fn discount(position: usize) -> f64 {
    // position is 1-based
    1.0 / ((position + 1) as f64).log2()
}

/// DCG@K of `pi` with relevance taken from `target`. Positions past the end
/// of `pi` contribute nothing.
pub fn dcg_at_k(pi: &[usize], target: &[usize], params: RelevanceParams) -> f64 {
    pi.iter()
        .take(params.k)
        .enumerate()
        .map(|(idx, &item)| {
            let y = relevance(target, item, params);
            (y.exp2() - 1.0) * discount(idx + 1)
        })
        .sum()
}

/// `D@K(pi, target) = 1 - DCG@K(pi) / DCG@K(target)`.
///
/// The target must be non-empty so that its ideal DCG is positive. Targets
/// shorter than K are normalised by their own (shorter) ideal DCG.
pub fn discrepancy(pi: &[usize], target: &[usize], params: RelevanceParams) -> f64 {
    assert!(!target.is_empty(), "discrepancy needs a non-empty target");
    let ideal = dcg_at_k(target, target, params);
    debug_assert!(ideal > 0.0);
    1.0 - dcg_at_k(pi, target, params) / ideal
}

/// `|top-K(pi) ∩ held_out| / |held_out|`.
pub fn recall_at_k(pi: &[usize], held_out: &[usize], k: usize) -> f64 {
    assert!(!held_out.is_empty(), "recall needs a non-empty held-out set");
    let hits = pi.iter().take(k).filter(|i| held_out.contains(i)).count();
    hits as f64 / held_out.len() as f64
}

/// Binary-relevance NDCG@K against a held-out item set.
pub fn ndcg_eval(pi: &[usize], held_out: &[usize], k: usize) -> f64 {
    assert!(!held_out.is_empty(), "ndcg needs a non-empty held-out set");
    let dcg: f64 = pi
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| held_out.contains(i))
        .map(|(idx, _)| discount(idx + 1))
        .sum();
    let ideal: f64 = (1..=k.min(held_out.len())).map(discount).sum();
    dcg / ideal
}

/// One row of a metric report: `metric  K  value  n_users`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub value: f64,
    pub n_users: usize,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, k: usize, value: f64, n_users: usize) -> Self {
        Self {
            metric: metric.into(),
            k,
            value,
            n_users,
        }
    }
}

pub fn render_metric_rows(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric\tK\tvalue\tn_users\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{:.6}\t{}\n", r.metric, r.k, r.value, r.n_users));
    }
    out
}

/// Mean of the `Some` entries and how many there were; users with nothing to
/// evaluate are skipped rather than counted as zero.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> (f64, usize) {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P3: RelevanceParams = RelevanceParams { lambda: 10.0, k: 3 };

    #[test]
    fn ranked_list_rejects_duplicates_and_empty() {
        assert!(RankedList::new(vec![]).is_err());
        assert!(RankedList::new(vec![1, 2, 1]).is_err());
        assert_eq!(RankedList::new(vec![4, 2]).unwrap().rank_of(2), Some(1));
    }

    #[test]
    fn relevance_values() {
        let target: Vec<usize> = (0..20).collect();
        let p = RelevanceParams::new(10.0, 50).unwrap();
        assert_eq!(relevance(&target, 0, p), 1.0);
        assert!((relevance(&target, 10, p) - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert_eq!(relevance(&target, 10, p.with_k(10)), 0.0);
        assert_eq!(relevance(&target, 99, p), 0.0);
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_at_k(&[7, 8, 9], &[0, 1, 2], P3), 0.0);
        assert_eq!(dcg_at_k(&[0], &[0, 1], P3.with_k(1)), 1.0);
        // target=[a,b,c], pi=[b,a,c]
        let v = dcg_at_k(&[1, 0, 2], &[0, 1, 2], P3);
        assert!((v - 1.885_189_995_078_563).abs() < 1e-12, "{v}");
    }

    #[test]
    fn discrepancy_examples() {
        assert_eq!(discrepancy(&[0, 1, 2], &[0, 1, 2], P3), 0.0);
        assert_eq!(discrepancy(&[5, 6, 7], &[0, 1, 2], P3), 1.0);
        let d = discrepancy(&[1, 0, 2], &[0, 1, 2], P3);
        assert!((d - 0.024_384_267_359_126).abs() < 1e-12, "{d}");
    }

    #[test]
    fn recall_and_ndcg_examples() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[1, 2], 3), 1.0);
        assert_eq!(recall_at_k(&[1, 5, 3], &[1, 2], 3), 0.5);
        assert_eq!(ndcg_eval(&[1, 2, 9], &[1, 2], 3), 1.0);
        assert_eq!(ndcg_eval(&[7, 8, 9], &[1, 2], 3), 0.0);
        // hits at positions 2 and 4 of K=5
        let got = ndcg_eval(&[9, 1, 8, 2, 7], &[1, 2], 5);
        let want = (1.0 / 3f64.log2() + 1.0 / 5f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn mean_defined_skips_missing() {
        assert_eq!(mean_defined([Some(1.0), None, Some(3.0)]), (2.0, 2));
        assert_eq!(mean_defined([None]), (0.0, 0));
    }

    proptest! {
        #[test]
        fn self_discrepancy_is_zero(perm in Just((0..60usize).collect::<Vec<_>>()).prop_shuffle(),
                                    k in 1usize..60, lambda in 0.5f64..50.0) {
            let p = RelevanceParams::new(lambda, k).unwrap();
            prop_assert!(discrepancy(&perm, &perm, p).abs() < 1e-12);
        }

        #[test]
        fn tail_order_is_irrelevant(perm in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(),
                                    target in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(),
                                    k in 1usize..20) {
            let p = RelevanceParams::new(10.0, k).unwrap();
            let mut other = perm.clone();
            other[k..].reverse();
            prop_assert_eq!(discrepancy(&perm, &target, p), discrepancy(&other, &target, p));
            let d = discrepancy(&perm, &target, p);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        }

        #[test]
        fn recall_matches_set_count(pi in Just((0..40usize).collect::<Vec<_>>()).prop_shuffle(),
                                    held in proptest::collection::btree_set(0usize..40, 1..10),
                                    k in 1usize..40) {
            let held: Vec<usize> = held.into_iter().collect();
            let top: std::collections::BTreeSet<_> = pi[..k].iter().copied().collect();
            let want = held.iter().filter(|i| top.contains(i)).count() as f64 / held.len() as f64;
            prop_assert_eq!(recall_at_k(&pi, &held, k), want);
        }
    }
}
