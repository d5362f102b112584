//! Per-user interest distributions: predicted (aggregated from image labels)
//! and ground truth (from board labels, smoothed toward a prior).

use ndarray::{Array1, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LabelMatrix, UserCollection};

/// Nonnegative distribution over categories summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct InterestDistribution(Vec<f64>);

impl InterestDistribution {
    /// Normalizes nonnegative finite `mass` to sum to one.
    pub fn from_mass(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (col, &v) in mass.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: 0, col });
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { row: 0, col });
            }
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroTotal);
        }
        Ok(Self(mass.into_iter().map(|v| v / total).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.0[..])
    }
}

/// Column sums of the user's image label rows, normalized.
pub fn aggregate_user_profile(y_user: &LabelMatrix) -> Result<InterestDistribution> {
    if y_user.rows() == 0 {
        return Err(Error::EmptyCollection);
    }
    let sums: Array1<f64> = y_user.values().sum_axis(ndarray::Axis(0));
    InterestDistribution::from_mass(sums.to_vec())
}

/// Empirical category frequency of `labels` over `k` categories.
pub fn prior_distribution(labels: &[usize], k: usize) -> Result<InterestDistribution> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0.0; k];
    for &c in labels {
        if c >= k {
            return Err(Error::DanglingReference(format!("category index {c} >= {k}")));
        }
        counts[c] += 1.0;
    }
    InterestDistribution::from_mass(counts)
}

/// The user's board-category distribution (each labeled board counts once),
/// smoothed as `p + alpha · p0` and renormalized.
pub fn ground_truth_distribution(
    user: &UserCollection,
    prior: &InterestDistribution,
    alpha: f64,
) -> Result<InterestDistribution> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!("smoothing weight must be >= 0, got {alpha}")));
    }
    let k = prior.len();
    let boards = user
        .board_category
        .as_ref()
        .filter(|b| !b.is_empty())
        .ok_or_else(|| Error::NoGroundTruth(user.user_id.clone()))?;
    let mut counts = vec![0.0; k];
    for &c in boards.values() {
        if c >= k {
            return Err(Error::DanglingReference(format!("category index {c} >= {k}")));
        }
        counts[c] += 1.0;
    }
    let n = boards.len() as f64;
    let smoothed = counts.iter().zip(prior.probs()).map(|(c, p)| c / n + alpha * p).collect();
    InterestDistribution::from_mass(smoothed)
}
