//! Listwise distillation objectives over a ranked prefix `P` and a set of
//! remaining items `N`.
//!
//! * [`loss_fine`] is the Plackett-Luce negative log-likelihood of `P` in
//!   its given order, where every item of `N` sits in every denominator.
//! * [`loss_overall`] only asks each item of `P` to beat all of `N`; the
//!   order inside `P` is free.
//!
//! Everything is evaluated in max-shifted log-sum-exp form.

use crate::error::{Error, Result};

/// Student scores for the items of `P` (in `P`'s ranked order) and `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLists {
    pub p: Vec<f64>,
    pub n: Vec<f64>,
}

impl ScoredLists {
    pub fn new(p: Vec<f64>, n: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("P must not be empty".into()));
        }
        if p.iter().chain(&n).any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(Self { p, n })
    }
}

/// Gradients of a loss with respect to the `P` and `N` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrads {
    pub p: Vec<f64>,
    pub n: Vec<f64>,
}

/// Which listwise objective to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    Overall,
    Fine,
}

impl LossMode {
    pub fn loss(self, s: &ScoredLists) -> f64 {
        match self {
            LossMode::Overall => loss_overall(s),
            LossMode::Fine => loss_fine(s),
        }
    }

    pub fn grad(self, s: &ScoredLists) -> ScoreGrads {
        match self {
            LossMode::Overall => grad_overall(s),
            LossMode::Fine => grad_fine(s),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Overall => "overall",
            LossMode::Fine => "fine",
        }
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `lse[k] = log(sum_{j>=k} exp p_j + sum_l exp n_l)`.
fn suffix_log_denominators(s: &ScoredLists) -> Vec<f64> {
    let mut lse = vec![0.0; s.p.len()];
    let mut acc = log_sum_exp(&s.n);
    for k in (0..s.p.len()).rev() {
        acc = log_add_exp(acc, s.p[k]);
        lse[k] = acc;
    }
    lse
}

/// Plackett-Luce negative log-likelihood of `P` ranked above `N`.
pub fn loss_fine(s: &ScoredLists) -> f64 {
    suffix_log_denominators(s)
        .iter()
        .zip(&s.p)
        .map(|(lse, p)| lse - p)
        .sum()
}

pub fn grad_fine(s: &ScoredLists) -> ScoreGrads {
    let lse = suffix_log_denominators(s);
    // log of the prefix sums  sum_{k<=j} exp(-lse[k])
    let mut prefix = Vec::with_capacity(lse.len());
    let mut acc = f64::NEG_INFINITY;
    for l in &lse {
        acc = log_add_exp(acc, -l);
        prefix.push(acc);
    }
    let p = s
        .p
        .iter()
        .zip(&prefix)
        .map(|(pj, lp)| (pj + lp).exp() - 1.0)
        .collect();
    let total = prefix.last().copied().unwrap_or(f64::NEG_INFINITY);
    let n = s.n.iter().map(|nl| (nl + total).exp()).collect();
    ScoreGrads { p, n }
}

/// Sum over `P` of `-log softmax` of each item against `N` alone.
pub fn loss_overall(s: &ScoredLists) -> f64 {
    let lse_n = log_sum_exp(&s.n);
    s.p.iter().map(|&p| log_add_exp(p, lse_n) - p).sum()
}

pub fn grad_overall(s: &ScoredLists) -> ScoreGrads {
    let lse_n = log_sum_exp(&s.n);
    let denominators: Vec<f64> = s.p.iter().map(|&p| log_add_exp(p, lse_n)).collect();
    let p = s
        .p
        .iter()
        .zip(&denominators)
        .map(|(pk, d)| (pk - d).exp() - 1.0)
        .collect();
    let inv = denominators
        .iter()
        .fold(f64::NEG_INFINITY, |acc, d| log_add_exp(acc, -d));
    let n = s.n.iter().map(|nl| (nl + inv).exp()).collect();
    ScoreGrads { p, n }
}

/// `L(P⁺, N) + L(P⁻, N)` with the two lists kept out of each other's
/// denominators.
pub fn hetcomp_loss(p_plus: &ScoredLists, p_minus: &ScoredLists, mode: LossMode) -> Result<f64> {
    if p_plus.n != p_minus.n {
        return Err(Error::InvalidArgument(
            "P+ and P- terms must share the same N scores".into(),
        ));
    }
    Ok(mode.loss(p_plus) + mode.loss(p_minus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lists(p: &[f64], n: &[f64]) -> ScoredLists {
        ScoredLists::new(p.to_vec(), n.to_vec()).unwrap()
    }

    fn naive_fine(s: &ScoredLists) -> f64 {
        let mut prob = 1.0;
        for k in 0..s.p.len() {
            let denom: f64 = s.p[k..].iter().chain(&s.n).map(|x| x.exp()).sum();
            prob *= s.p[k].exp() / denom;
        }
        -prob.ln()
    }

    fn naive_overall(s: &ScoredLists) -> f64 {
        let rest: f64 = s.n.iter().map(|x| x.exp()).sum();
        -s.p.iter().map(|p| (p.exp() / (p.exp() + rest)).ln()).sum::<f64>()
    }

    #[test]
    fn fine_examples() {
        assert_eq!(loss_fine(&lists(&[0.3], &[])), 0.0);
        let v = loss_fine(&lists(&[0.0, 0.0], &[0.0]));
        assert!((v - (3f64.ln() + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn overall_examples() {
        assert_eq!(loss_overall(&lists(&[0.3, -1.0], &[])), 0.0);
        let v = loss_overall(&lists(&[0.0, 0.0], &[0.0]));
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
        let a = loss_overall(&lists(&[0.1, 0.9, -0.4], &[0.2, 0.5]));
        let b = loss_overall(&lists(&[-0.4, 0.1, 0.9], &[0.2, 0.5]));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn stable_forms_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p: Vec<f64> = (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let n: Vec<f64> = (0..rng.gen_range(0..=4)).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = lists(&p, &n);
            assert!((loss_fine(&s) - naive_fine(&s)).abs() < 1e-9);
            assert!((loss_overall(&s) - naive_overall(&s)).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let s = lists(&[900.0, 800.0], &[1000.0]);
        assert!(loss_fine(&s).is_finite());
        assert!(grad_fine(&s).p.iter().all(|g| g.is_finite()));
        assert!(loss_overall(&s).is_finite());
    }

    #[test]
    fn gradient_examples() {
        let g = grad_fine(&lists(&[1.0], &[]));
        assert_eq!(g.p, vec![0.0]);
        let g = grad_fine(&lists(&[0.0], &[0.0]));
        assert!((g.p[0] + 0.5).abs() < 1e-12 && (g.n[0] - 0.5).abs() < 1e-12);
        let g = grad_overall(&lists(&[0.0, 0.0], &[0.0]));
        assert!(g.p.iter().all(|x| (x + 0.5).abs() < 1e-12));
        assert!((g.n[0] - 1.0).abs() < 1e-12);
        let g = grad_overall(&lists(&[2.0, -3.0], &[]));
        assert_eq!(g.p, vec![0.0, 0.0]);
    }

    #[test]
    fn singleton_p_losses_agree() {
        let s = lists(&[0.7], &[0.1, -0.3, 1.2]);
        assert_eq!(loss_fine(&s), loss_overall(&s));
    }

    #[test]
    fn translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let n: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let c = rng.gen_range(-50.0..50.0);
            let s = lists(&p, &n);
            let t = lists(
                &p.iter().map(|x| x + c).collect::<Vec<_>>(),
                &n.iter().map(|x| x + c).collect::<Vec<_>>(),
            );
            assert!((loss_fine(&s) - loss_fine(&t)).abs() < 1e-9);
            assert!((loss_overall(&s) - loss_overall(&t)).abs() < 1e-9);
        }
    }

    #[test]
    fn small_step_along_negative_gradient_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [LossMode::Fine, LossMode::Overall] {
            for _ in 0..100 {
                let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let n: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let s = lists(&p, &n);
                let g = mode.grad(&s);
                let step = 1e-4;
                let moved = lists(
                    &p.iter().zip(&g.p).map(|(x, d)| x - step * d).collect::<Vec<_>>(),
                    &n.iter().zip(&g.n).map(|(x, d)| x - step * d).collect::<Vec<_>>(),
                );
                assert!(mode.loss(&moved) < mode.loss(&s));
            }
        }
    }

    #[test]
    fn hetcomp_terms_are_independent() {
        let n = [0.0];
        let both = hetcomp_loss(&lists(&[0.0], &n), &lists(&[0.0], &n), LossMode::Overall).unwrap();
        assert!((both - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(
            hetcomp_loss(&lists(&[1.0], &[]), &lists(&[2.0], &[]), LossMode::Fine).unwrap(),
            0.0
        );
        let plus = lists(&[0.4, 0.1], &n);
        let base = hetcomp_loss(&plus, &lists(&[0.2], &n), LossMode::Fine).unwrap();
        let raised = hetcomp_loss(&plus, &lists(&[3.0], &n), LossMode::Fine).unwrap();
        assert!(raised - loss_fine(&lists(&[3.0], &n)) <= base - loss_fine(&lists(&[0.2], &n)) + 1e-15);
        assert!(hetcomp_loss(&plus, &lists(&[0.2], &[1.0]), LossMode::Fine).is_err());
    }
}
