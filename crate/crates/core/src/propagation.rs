//! Group-constrained label propagation.
//!
//! One update is
//!
//! ```text
//! Y(t+1) = (I - Λ) · W · Y(t) · G + Λ · Y(0)
//! ```
//!
//! where `W` is the row-stochastic image similarity, `G` the column-stochastic
//! category affinity, and `Λ` a per-image anchor weight taken from the
//! confidence of the initial prediction. Plain label propagation is the same
//! update with `G = I`.
//!
//! Unrolling the recurrence gives a closed form,
//!
//! ```text
//! Y(t+1) = ((I-Λ)W)^(t+1) Y(0) G^(t+1) + Σ_{i=0..t} ((I-Λ)W)^i Λ Y(0) G^i
//! ```
//!
//! which [`closed_form_partial_sum`] evaluates by explicit matrix powers and is
//! used to cross-check the iterative path.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::affinity::{CategoryAffinity, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::linalg;
use crate::model::{normalize_rows, LabelMatrix};

/// Diagonal of `Λ`: `λ_i = max_j Y0[i, j] / Σ_k Y0[i, k]`, in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMatrix(Array1<f64>);

impl AnchorMatrix {
    pub fn diag(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `max_i (1 - λ_i)`: the per-step contraction factor of the update when
    /// `W` is row-stochastic and `G` column-stochastic.
    pub fn contraction(&self) -> f64 {
        self.0.iter().fold(0.0, |m, &l| m.max(1.0 - l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    /// Group-constrained: right-multiply by `G` every step.
    #[default]
    Glp,
    /// Plain label propagation: `G` replaced by the identity.
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub max_iterations: usize,
    /// Stop once `‖Y(t+1) - Y(t)‖_F < tolerance`.
    pub tolerance: f64,
    pub mode: PropagationMode,
    pub exec: Execution,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-9, mode: PropagationMode::Glp, exec: Execution::default() }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    /// Final iterate with rows normalized to sum to one.
    pub labels: LabelMatrix,
    /// Final iterate before normalization.
    pub raw: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius norm of the last update.
    pub final_delta: f64,
    /// Frobenius norm of every update, in order.
    pub update_norms: Vec<f64>,
}

pub fn compute_lambda(y0: &LabelMatrix) -> Result<AnchorMatrix> {
    let mut diag = Array1::zeros(y0.rows());
    for (i, row) in y0.values().rows().into_iter().enumerate() {
        let sum = row.sum();
        if !(sum > 0.0) {
            return Err(Error::ZeroRow(i));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        diag[i] = max / sum;
    }
    Ok(AnchorMatrix(diag))
}

fn check_dims(
    y: ArrayView2<'_, f64>,
    y0: &LabelMatrix,
    w: &SimilarityMatrix,
    g: &CategoryAffinity,
    lambda: &AnchorMatrix,
) -> Result<()> {
    let (n, k) = y0.values().dim();
    if y.dim() != (n, k) {
        return Err(Error::DimensionMismatch(format!(
            "current labels are {:?}, initial labels are {n}x{k}",
            y.dim()
        )));
    }
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!("W is {0}x{0} for {n} images", w.len())));
    }
    if g.len() != k {
        return Err(Error::DimensionMismatch(format!("G is {0}x{0} for {k} categories", g.len())));
    }
    if lambda.len() != n {
        return Err(Error::DimensionMismatch(format!("Λ has {} entries for {n} images", lambda.len())));
    }
    Ok(())
}

fn step(
    exec: Execution,
    y: ArrayView2<'_, f64>,
    y0: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    lambda: &Array1<f64>,
) -> Result<Array2<f64>> {
    // (W · Y) first keeps the cost at O(N²K + NK²)
    let wy = linalg::matmul(exec, w, y)?;
    let mut out = linalg::matmul(exec, wy.view(), g)?;
    for ((mut row, y0_row), &l) in out.axis_iter_mut(Axis(0)).zip(y0.axis_iter(Axis(0))).zip(lambda.iter()) {
        for (o, &a) in row.iter_mut().zip(y0_row.iter()) {
            *o = (1.0 - l) * *o + l * a;
        }
    }
    Ok(out)
}

/// One application of the update to `yt`.
pub fn propagate_step(
    yt: &LabelMatrix,
    y0: &LabelMatrix,
    w: &SimilarityMatrix,
    g: &CategoryAffinity,
    lambda: &AnchorMatrix,
) -> Result<LabelMatrix> {
    check_dims(yt.values(), y0, w, g, lambda)?;
    let out = step(Execution::default(), yt.values(), y0.values(), w.values(), g.values(), lambda.diag())?;
    Ok(LabelMatrix::from_trusted(out))
}

/// Iterates the update from `Y(0)` until the update norm drops below the
/// tolerance or the iteration cap is hit, then row-normalizes once.
pub fn propagate(
    y0: &LabelMatrix,
    w: &SimilarityMatrix,
    g: &CategoryAffinity,
    config: &PropagationConfig,
) -> Result<PropagationResult> {
    config.validate()?;
    let lambda = compute_lambda(y0)?;
    check_dims(y0.values(), y0, w, g, &lambda)?;
    if !w.is_row_stochastic(1e-9) {
        return Err(Error::InvalidConfig("W must be row-stochastic".into()));
    }
    let identity;
    let g = match config.mode {
        PropagationMode::Glp => g.values(),
        PropagationMode::Lp => {
            identity = Array2::<f64>::eye(g.len());
            identity.view()
        }
    };

    let mut y = y0.values().to_owned();
    let mut update_norms = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let next = step(config.exec, y.view(), y0.values(), w.values(), g, lambda.diag())?;
        let delta = linalg::frobenius_diff(next.view(), y.view());
        y = next;
        iterations += 1;
        update_norms.push(delta);
        if delta < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(PropagationResult {
        labels: normalize_rows(y.view())?,
        raw: y,
        iterations,
        converged,
        final_delta: update_norms.last().copied().unwrap_or(0.0),
        update_norms,
    })
}

/// Runs [`propagate`] on many independent problems, in order.
pub fn propagate_many(
    problems: &[(LabelMatrix, SimilarityMatrix)],
    g: &CategoryAffinity,
    config: &PropagationConfig,
) -> Vec<Result<PropagationResult>> {
    let inner = PropagationConfig { exec: Execution::Sequential, ..*config };
    exec::map_slice(config.exec, problems, |(y0, w)| propagate(y0, w, g, &inner))
}

fn transition(w: ArrayView2<'_, f64>, lambda: &AnchorMatrix) -> Array2<f64> {
    let mut m = w.to_owned();
    for (mut row, &l) in m.axis_iter_mut(Axis(0)).zip(lambda.diag().iter()) {
        row.mapv_inplace(|v| (1.0 - l) * v);
    }
    m
}

fn anchored(y0: ArrayView2<'_, f64>, lambda: &AnchorMatrix) -> Array2<f64> {
    let mut a = y0.to_owned();
    for (mut row, &l) in a.axis_iter_mut(Axis(0)).zip(lambda.diag().iter()) {
        row.mapv_inplace(|v| l * v);
    }
    a
}

/// Closed-form value of `Y(t+1)`: the transient term plus the partial sum of
/// the series, built from explicit powers of `(I-Λ)W` and `G`.
pub fn closed_form_partial_sum(
    y0: &LabelMatrix,
    w: &SimilarityMatrix,
    g: &CategoryAffinity,
    lambda: &AnchorMatrix,
    t: usize,
) -> Result<Array2<f64>> {
    check_dims(y0.values(), y0, w, g, lambda)?;
    let (n, k) = y0.values().dim();
    let m = transition(w.values(), lambda);
    let ly0 = anchored(y0.values(), lambda);
    let g = g.values();

    let mut m_pow = Array2::<f64>::eye(n);
    let mut g_pow = Array2::<f64>::eye(k);
    let mut acc = Array2::<f64>::zeros((n, k));
    for _ in 0..=t {
        acc += &m_pow.dot(&ly0).dot(&g_pow);
        m_pow = m.dot(&m_pow);
        g_pow = g_pow.dot(&g);
    }
    acc += &m_pow.dot(&y0.values()).dot(&g_pow);
    Ok(acc)
}

/// Element-wise upper bound on the iterate after `horizon` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperBound {
    pub bound: Array2<f64>,
    /// Infinity norm of `(I-Λ)W`, an upper bound on its spectral radius.
    /// Values below one mean the anchored series converges.
    pub transition_norm: f64,
    pub horizon: usize,
}

/// Product-of-sums bound on `Y(horizon)`.
///
/// With `A_i = ((I-Λ)W)^i Λ Y(0)` and `B_i = G^i`, every term is nonnegative,
/// so `Σ_{i<T} A_i B_i ≤ (Σ_{i≥0} A_i)(Σ_{i<T} B_i)` element-wise. The infinite
/// `A` series is summed exactly by solving `(I - (I-Λ)W) S = Λ Y(0)`. The `G`
/// series is truncated at the horizon because a column-stochastic `G` has
/// spectral radius one and its full series diverges. The transient term
/// `((I-Λ)W)^T Y(0) G^T` is added exactly, so `Y(T) ≤ bound` holds for any
/// `T`, not only in the limit.
pub fn element_wise_upper_bound(
    y0: &LabelMatrix,
    w: &SimilarityMatrix,
    g: &CategoryAffinity,
    lambda: &AnchorMatrix,
    horizon: usize,
) -> Result<UpperBound> {
    check_dims(y0.values(), y0, w, g, lambda)?;
    let (n, k) = y0.values().dim();
    let m = transition(w.values(), lambda);
    let transition_norm =
        m.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if transition_norm >= 1.0 {
        log::warn!("(I-Λ)W has infinity norm {transition_norm} >= 1; series may not converge");
    }
    let a_sum = linalg::solve(Array2::eye(n) - &m, anchored(y0.values(), lambda))?;

    let g = g.values();
    let mut g_pow = Array2::<f64>::eye(k);
    let mut g_sum = Array2::<f64>::zeros((k, k));
    let mut m_pow = Array2::<f64>::eye(n);
    for _ in 0..horizon {
        g_sum += &g_pow;
        g_pow = g_pow.dot(&g);
        m_pow = m.dot(&m_pow);
    }
    let transient = m_pow.dot(&y0.values()).dot(&g_pow);
    let bound = transient + a_sum.dot(&g_sum);
    Ok(UpperBound { bound, transition_norm, horizon })
}
