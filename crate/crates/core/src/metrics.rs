//! Ranking and classification metrics: DCG/NDCG over category distributions,
//! top-k overlap recall, and argmax accuracy.

use serde::Serialize;

use crate::error::{Error, Result};

/// Categories sorted by descending score, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCategories {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedCategories {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self { order, scores: scores.to_vec() }
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }
}

/// `r_1 + Σ_{i≥2} r_i / log2(i)` with 1-based positions.
pub fn dcg(relevances: &[f64]) -> Result<f64> {
    let (first, rest) = relevances.split_first().ok_or(Error::EmptyInput)?;
    Ok(rest.iter().enumerate().fold(*first, |acc, (i, r)| acc + r / ((i + 2) as f64).log2()))
}

/// Relevance at each position is the true probability of the category the
/// prediction ranks there; the normalizer is the DCG of the truth in its own
/// descending order.
pub fn ndcg(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    let ranked = RankedCategories::from_scores(predicted);
    let gains: Vec<f64> = ranked.order.iter().map(|&c| truth[c]).collect();
    let mut ideal = truth.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(&ideal)?;
    if !(best > 0.0) {
        return Err(Error::ZeroIdeal);
    }
    Ok((dcg(&gains)? / best).min(1.0))
}

/// `|top_k(predicted) ∩ top_k(truth)| / k`.
pub fn recall_at_k(predicted: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    let max = predicted.len();
    if k == 0 || k > max {
        return Err(Error::InvalidK { k, max });
    }
    let p = RankedCategories::from_scores(predicted);
    let t = RankedCategories::from_scores(truth);
    let truth_top = t.top(k);
    let shared = p.top(k).iter().filter(|c| truth_top.contains(c)).count();
    Ok(shared as f64 / k as f64)
}

/// Fraction of positions where the predicted label equals the true label.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), count: values.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Independent DCG: explicit positions, discount 1 at position 1.
    fn dcg_oracle(rel: &[f64]) -> f64 {
        let mut total = 0.0;
        for (pos, r) in (1..).zip(rel) {
            let discount = if pos == 1 { 1.0 } else { (pos as f64).ln() / 2f64.ln() };
            total += r / discount;
        }
        total
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg(&[1.0]).unwrap(), 1.0);
        assert_eq!(dcg(&[0.0; 5]).unwrap(), 0.0);
        let v = dcg(&[1.0, 0.5, 0.25]).unwrap();
        assert_abs_diff_eq!(v, dcg_oracle(&[1.0, 0.5, 0.25]), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 1.6577324383928644, epsilon = 1e-12);
        assert!(matches!(dcg(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn ndcg_examples() {
        let truth = [0.6, 0.3, 0.1];
        assert_eq!(ndcg(&[0.5, 0.3, 0.2], &truth).unwrap(), 1.0);
        // K = 2: both orders score 1 since log2(2) = 1
        assert_eq!(ndcg(&[0.1, 0.9], &[0.9, 0.1]).unwrap(), 1.0);
        // predicted order (2, 1, 0)
        let v = ndcg(&[0.1, 0.3, 0.6], &truth).unwrap();
        let expected = dcg_oracle(&[0.1, 0.3, 0.6]) / dcg_oracle(&[0.6, 0.3, 0.1]);
        assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.8083932414252739, epsilon = 1e-12);
        assert!(matches!(ndcg(&[0.5, 0.5], &[0.0, 0.0]), Err(Error::ZeroIdeal)));
        assert!(matches!(ndcg(&[0.5, 0.5], &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn recall_examples() {
        // categories: Sports 0, Art 1, Food 2, Travel 3, Other 4
        let pred = [0.4, 0.3, 0.2, 0.05, 0.05];
        let truth = [0.5, 0.01, 0.3, 0.15, 0.04];
        assert_abs_diff_eq!(recall_at_k(&pred, &truth, 3).unwrap(), 2.0 / 3.0);
        assert_eq!(recall_at_k(&pred, &truth, 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&pred, &pred, 2).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&pred, &truth, 0), Err(Error::InvalidK { .. })));
        assert!(matches!(recall_at_k(&pred, &truth, 6), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.25);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ranking_ties_go_low() {
        let r = RankedCategories::from_scores(&[0.2, 0.4, 0.4, 0.0]);
        assert_eq!(r.order, vec![1, 2, 0, 3]);
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (2.0, 1.0, 2));
        assert!(Summary::of(&[]).is_none());
    }

    fn dist_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..10).prop_flat_map(|k| {
            (proptest::collection::vec(0.0f64..1.0, k), proptest::collection::vec(0.001f64..1.0, k))
        })
    }

    proptest! {
        #[test]
        fn ndcg_bounded_and_scale_free((pred, truth) in dist_pair(), c in 0.01f64..100.0) {
            let v = ndcg(&pred, &truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let scaled: Vec<f64> = pred.iter().map(|p| p * c).collect();
            prop_assert_eq!(ndcg(&scaled, &truth).unwrap(), v);
            prop_assert_eq!(ndcg(&truth, &truth).unwrap(), 1.0);
        }

        #[test]
        fn recall_symmetric((pred, truth) in dist_pair(), k in 1usize..10) {
            let k = k.min(pred.len());
            prop_assert_eq!(recall_at_k(&pred, &truth, k).unwrap(), recall_at_k(&truth, &pred, k).unwrap());
        }

        #[test]
        fn accuracy_label_permutation(labels in proptest::collection::vec((0usize..5, 0usize..5), 1..20), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p, t): (Vec<usize>, Vec<usize>) = labels.into_iter().unzip();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            prop_assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&pp, &tp).unwrap());
        }
    }
}
