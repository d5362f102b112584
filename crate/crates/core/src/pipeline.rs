//! End-to-end per-user profiling: similarity, propagation, aggregation and
//! evaluation against board-derived ground truth.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::affinity::{column_normalize, jaccard_affinity, similarity_for_collection, CategoryAffinity};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::metrics::{self, Summary};
use crate::model::{CategorySet, IncidenceRecord, LabelMatrix, UserCollection};
use crate::profiling::{
    aggregate_user_profile, ground_truth_distribution, prior_distribution, InterestDistribution,
};
use crate::propagation::{propagate, PropagationConfig, PropagationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Initial predictions, unchanged.
    Initial,
    Lp,
    Glp,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Initial, Mode::Lp, Mode::Glp];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Initial => "initial",
            Mode::Lp => "lp",
            Mode::Glp => "glp",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "initial" => Ok(Mode::Initial),
            "lp" => Ok(Mode::Lp),
            "glp" => Ok(Mode::Glp),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Weight of the prior when smoothing ground-truth distributions.
    pub smoothing: f64,
    /// Largest k for Recall@k (capped at the number of categories).
    pub max_recall_k: usize,
    pub exec: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Glp,
            max_iterations: 100,
            tolerance: 1e-9,
            smoothing: 0.1,
            max_recall_k: 10,
            exec: Execution::default(),
        }
    }
}

/// Category affinity learned from incidence records: Jaccard index, then
/// column normalization.
pub fn learn_affinity(records: &[IncidenceRecord], k: usize) -> Result<CategoryAffinity> {
    column_normalize(jaccard_affinity(records, k)?.view())
}

/// Affinity from the dataset's training incidence records, optionally adding
/// the evaluation users' own boards.
pub fn dataset_affinity(ds: &Dataset, include_eval_users: bool) -> Result<CategoryAffinity> {
    let mut records: Vec<IncidenceRecord> = ds.incidence.clone().unwrap_or_default();
    if include_eval_users {
        records.extend(ds.user_incidence());
    }
    if records.is_empty() {
        return Err(Error::MissingAffinity(
            "no incidence records; supply incidence.csv, a precomputed affinity, or include evaluation users"
                .into(),
        ));
    }
    learn_affinity(&records, ds.categories.len())
}

/// Result for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    pub user_id: String,
    pub image_ids: Vec<String>,
    /// Final per-image labels (row-normalized).
    pub labels: LabelMatrix,
    pub profile: InterestDistribution,
    pub truth: Option<InterestDistribution>,
    pub ndcg: Option<f64>,
    /// Recall@k for k = 1..=len.
    pub recall: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// (predicted argmax, inherited label) for every labeled image.
    pub image_hits: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub mode: Mode,
    pub users: Vec<UserOutcome>,
    pub ndcg: Option<Summary>,
    /// Mean Recall@k over users with ground truth, k = 1..=len.
    pub recall_at_k: Vec<f64>,
    pub accuracy: Option<f64>,
}

fn run_user(
    ds: &Dataset,
    user: &UserCollection,
    g: Option<&CategoryAffinity>,
    prior: Option<&InterestDistribution>,
    config: &PipelineConfig,
    inner: Execution,
) -> Result<UserOutcome> {
    if user.image_ids.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let rows = ds.user_rows(user);
    let y0 = ds.initial.select(&rows);
    let (labels, iterations, converged) = match config.mode {
        Mode::Initial => (crate::model::normalize_rows(y0.values())?, 0, true),
        Mode::Lp | Mode::Glp => {
            let x = ds.features.select(&rows)?;
            let w = similarity_for_collection(inner, &x)?;
            let identity;
            let (g, mode) = match (config.mode, g) {
                (Mode::Glp, Some(g)) => (g, PropagationMode::Glp),
                (Mode::Glp, None) => {
                    return Err(Error::MissingAffinity("GLP mode needs a category affinity".into()))
                }
                _ => {
                    identity = CategoryAffinity::identity(ds.categories.len());
                    (&identity, PropagationMode::Lp)
                }
            };
            let pc = PropagationConfig {
                max_iterations: config.max_iterations,
                tolerance: config.tolerance,
                mode,
                exec: inner,
            };
            let r = propagate(&y0, &w, g, &pc)?;
            (r.labels, r.iterations, r.converged)
        }
    };
    let profile = aggregate_user_profile(&labels)?;

    let k = ds.categories.len();
    let mut out = UserOutcome {
        user_id: user.user_id.clone(),
        image_ids: user.image_ids.clone(),
        profile,
        truth: None,
        ndcg: None,
        recall: Vec::new(),
        iterations,
        converged,
        image_hits: (0, 0),
        labels,
    };
    let argmax = out.labels.argmax_rows();
    for (id, &pred) in user.image_ids.iter().zip(&argmax) {
        if let Some(c) = user.image_category(id) {
            out.image_hits.1 += 1;
            if c == pred {
                out.image_hits.0 += 1;
            }
        }
    }
    if let (Some(prior), true) = (prior, user.board_category.as_ref().is_some_and(|b| !b.is_empty())) {
        let truth = ground_truth_distribution(user, prior, config.smoothing)?;
        out.ndcg = Some(metrics::ndcg(out.profile.probs(), truth.probs())?);
        out.recall = (1..=config.max_recall_k.min(k))
            .map(|kk| metrics::recall_at_k(out.profile.probs(), truth.probs(), kk))
            .collect::<Result<_>>()?;
        out.truth = Some(truth);
    }
    Ok(out)
}

/// Runs one mode over every user of the dataset. Users are processed
/// independently (in parallel when enabled); the output order follows
/// `ds.users`.
///
/// The prior used to smooth ground truth is the label frequency over all
/// labeled images in the dataset.
pub fn run_pipeline(
    ds: &Dataset,
    g: Option<&CategoryAffinity>,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    if config.max_iterations == 0 || !(config.tolerance > 0.0) {
        return Err(Error::InvalidConfig("max_iterations must be >= 1 and tolerance > 0".into()));
    }
    if let Some(g) = g {
        if g.len() != ds.categories.len() {
            return Err(Error::DimensionMismatch(format!(
                "affinity is {0}x{0} for {1} categories",
                g.len(),
                ds.categories.len()
            )));
        }
    }
    let labels = ds.image_labels();
    let prior =
        if labels.is_empty() { None } else { Some(prior_distribution(&labels, ds.categories.len())?) };
    let inner = if config.exec.is_parallel() { Execution::Sequential } else { config.exec };
    let users =
        exec::map_slice(config.exec, &ds.users, |u| run_user(ds, u, g, prior.as_ref(), config, inner))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

    let ndcgs: Vec<f64> = users.iter().filter_map(|u| u.ndcg).collect();
    let evaluated: Vec<&UserOutcome> = users.iter().filter(|u| !u.recall.is_empty()).collect();
    let recall_at_k = match evaluated.first() {
        Some(first) => (0..first.recall.len())
            .map(|i| evaluated.iter().map(|u| u.recall[i]).sum::<f64>() / evaluated.len() as f64)
            .collect(),
        None => Vec::new(),
    };
    let (hits, total) = users.iter().fold((0, 0), |(h, t), u| (h + u.image_hits.0, t + u.image_hits.1));
    Ok(PipelineOutput {
        mode: config.mode,
        ndcg: Summary::of(&ndcgs),
        recall_at_k,
        accuracy: (total > 0).then(|| hits as f64 / total as f64),
        users,
    })
}

/// JSON-facing report with category names as keys.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub mode: Mode,
    pub users: usize,
    pub ndcg: Option<Summary>,
    pub recall_at_k: IndexMap<String, f64>,
    pub accuracy: Option<f64>,
    pub per_user: Vec<UserReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UserReport {
    pub user_id: String,
    pub images: usize,
    pub iterations: usize,
    pub converged: bool,
    pub ndcg: Option<f64>,
    pub profile: IndexMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<IndexMap<String, f64>>,
}

fn named(categories: &CategorySet, d: &InterestDistribution) -> IndexMap<String, f64> {
    categories.names().iter().cloned().zip(d.probs().iter().copied()).collect()
}

impl PipelineOutput {
    pub fn report(&self, categories: &CategorySet) -> Report {
        Report {
            mode: self.mode,
            users: self.users.len(),
            ndcg: self.ndcg,
            recall_at_k: self
                .recall_at_k
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1).to_string(), *v))
                .collect(),
            accuracy: self.accuracy,
            per_user: self
                .users
                .iter()
                .map(|u| UserReport {
                    user_id: u.user_id.clone(),
                    images: u.image_ids.len(),
                    iterations: u.iterations,
                    converged: u.converged,
                    ndcg: u.ndcg,
                    profile: named(categories, &u.profile),
                    truth: u.truth.as_ref().map(|t| named(categories, t)),
                })
                .collect(),
        }
    }
}
