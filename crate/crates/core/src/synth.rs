//! Seeded synthetic datasets with the users → boards → images structure.
//!
//! Geometry: every category gets a center drawn from `N(0, I)`; every board
//! gets a sub-center `N(category center, cluster_spread²)`; every image is
//! drawn `N(board sub-center, board_spread²)`. With `board_spread <
//! cluster_spread`, images on the same board are closer than images on
//! different boards of the same category.
//!
//! Category choice: categories come in partner pairs `(0,1), (2,3), ...`. A
//! user's first board picks a category uniformly; each further board, with
//! probability `category_correlation`, picks the partner of one of the user's
//! existing categories, otherwise a uniform category. Training users (for the
//! incidence records) follow the same process, so the Jaccard affinity shows
//! the pair structure.
//!
//! Predictions: each board has a distractor category (neither its own nor the
//! partner). With probability `prediction_noise` an image is mispredicted: its
//! row is `(1 - η) · onehot(distractor) + η · softmax(z)` with
//! `η = 1 - error_confidence · U(0, 1)`, so wrong predictions are weak.
//! Otherwise the row is `(1 - η) · onehot(true) + η · softmax(z)` with
//! `η = prediction_noise · U(0, 1)`. In both cases
//! `z = distractor_boost · onehot(distractor) + N(0, I)`.
//! `prediction_noise = 0` gives exact one-hot rows.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{CategorySet, FeatureMatrix, IncidenceRecord, LabelMatrix, UserCollection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub categories: usize,
    pub users: usize,
    /// Extra users that only contribute incidence records.
    pub training_users: usize,
    pub boards_per_user: (usize, usize),
    pub pins_per_board: (usize, usize),
    pub feature_dim: usize,
    pub cluster_spread: f64,
    pub board_spread: f64,
    pub prediction_noise: f64,
    pub distractor_boost: f64,
    pub error_confidence: f64,
    pub category_correlation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            categories: 8,
            users: 30,
            training_users: 200,
            boards_per_user: (3, 6),
            pins_per_board: (10, 30),
            feature_dim: 16,
            cluster_spread: 0.6,
            board_spread: 0.25,
            prediction_noise: 0.8,
            distractor_boost: 1.0,
            error_confidence: 0.3,
            category_correlation: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.categories < 3 {
            return bad(format!("need at least 3 categories, got {}", self.categories));
        }
        if self.users == 0 || self.feature_dim == 0 {
            return bad("users and feature_dim must be at least 1".into());
        }
        for (name, (lo, hi)) in
            [("boards_per_user", self.boards_per_user), ("pins_per_board", self.pins_per_board)]
        {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range {lo}..={hi} is empty or starts at 0"));
            }
        }
        if !(self.cluster_spread > 0.0) || !(self.board_spread > 0.0) {
            return bad("spreads must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.prediction_noise) {
            return bad(format!("prediction_noise must be in [0, 1], got {}", self.prediction_noise));
        }
        if !(0.0..=1.0).contains(&self.error_confidence) {
            return bad(format!("error_confidence must be in [0, 1], got {}", self.error_confidence));
        }
        if !(0.0..=1.0).contains(&self.category_correlation) {
            return bad(format!("category_correlation must be in [0, 1], got {}", self.category_correlation));
        }
        if !(self.distractor_boost >= 0.0) {
            return bad("distractor_boost must be >= 0".into());
        }
        Ok(())
    }
}

fn partner(c: usize, k: usize) -> usize {
    let p = c ^ 1;
    if p < k {
        p
    } else {
        c - 1
    }
}

fn board_categories(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<usize> {
    let k = cfg.categories;
    let n = rng.random_range(cfg.boards_per_user.0..=cfg.boards_per_user.1);
    let mut cats = Vec::with_capacity(n);
    cats.push(rng.random_range(0..k));
    while cats.len() < n {
        let c = if rng.random::<f64>() < cfg.category_correlation {
            partner(*cats.choose(rng).expect("nonempty"), k)
        } else {
            rng.random_range(0..k)
        };
        cats.push(c);
    }
    cats
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, d) = (cfg.categories, cfg.feature_dim);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| gaussian(&mut rng)).collect()).collect();

    let mut ids = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    let mut preds: Vec<f64> = Vec::new();
    let mut users = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let user_id = format!("u{u:03}");
        let mut user = UserCollection::new(user_id.clone(), Vec::new());
        let mut board_of = BTreeMap::new();
        let mut board_category = BTreeMap::new();
        for (b, c) in board_categories(&mut rng, cfg).into_iter().enumerate() {
            let board_id = format!("{user_id}-b{b}");
            board_category.insert(board_id.clone(), c);
            let sub: Vec<f64> =
                centers[c].iter().map(|x| x + cfg.cluster_spread * gaussian(&mut rng)).collect();
            let candidates: Vec<usize> = (0..k).filter(|&j| j != c && j != partner(c, k)).collect();
            let distractor = *candidates.choose(&mut rng).expect("k >= 3");
            let pins = rng.random_range(cfg.pins_per_board.0..=cfg.pins_per_board.1);
            for p in 0..pins {
                let image_id = format!("{board_id}-p{p}");
                feats.extend(sub.iter().map(|x| x + cfg.board_spread * gaussian(&mut rng)));
                let mut logits: Vec<f64> = (0..k).map(|_| gaussian(&mut rng)).collect();
                logits[distractor] += cfg.distractor_boost;
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                let wrong = rng.random::<f64>() < cfg.prediction_noise;
                let (target, blur) = if wrong {
                    (distractor, 1.0 - cfg.error_confidence * rng.random::<f64>())
                } else {
                    (c, cfg.prediction_noise * rng.random::<f64>())
                };
                preds.extend((0..k).map(|j| {
                    let peak = if j == target { 1.0 - blur } else { 0.0 };
                    peak + blur * exp[j] / total
                }));
                board_of.insert(image_id.clone(), board_id.clone());
                user.image_ids.push(image_id.clone());
                ids.push(image_id);
            }
        }
        user.board_of = Some(board_of);
        user.board_category = Some(board_category);
        users.push(user);
    }

    let incidence = (0..cfg.training_users)
        .map(|t| {
            let cats = board_categories(&mut rng, cfg);
            IncidenceRecord {
                user_id: format!("t{t:04}"),
                categories: cats.into_iter().collect::<BTreeSet<_>>(),
            }
        })
        .collect();

    let n = ids.len();
    let features = FeatureMatrix::new(ids, Array2::from_shape_vec((n, d), feats).expect("n*d"))?;
    let initial = LabelMatrix::new(Array2::from_shape_vec((n, k), preds).expect("n*k"))?;
    Dataset::new(CategorySet::numbered(k)?, features, initial, users, Some(incidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::group_distance_report;

    fn tiny(seed: u64) -> SynthConfig {
        SynthConfig { seed, users: 6, training_users: 20, pins_per_board: (3, 6), ..Default::default() }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(synth_generate(&tiny(7)).unwrap(), synth_generate(&tiny(7)).unwrap());
        assert_ne!(synth_generate(&tiny(7)).unwrap(), synth_generate(&tiny(8)).unwrap());
    }

    #[test]
    fn shape_follows_config() {
        let cfg = tiny(1);
        let ds = synth_generate(&cfg).unwrap();
        assert_eq!(ds.users.len(), 6);
        assert_eq!(ds.categories.len(), 8);
        assert_eq!(ds.features.dim(), 16);
        assert_eq!(ds.incidence.as_ref().unwrap().len(), 20);
        for u in &ds.users {
            let boards = u.board_category.as_ref().unwrap().len();
            assert!((3..=6).contains(&boards));
            assert!(u.image_ids.len() >= 3 * boards && u.image_ids.len() <= 6 * boards);
        }
    }

    #[test]
    fn noiseless_predictions_are_one_hot() {
        let ds = synth_generate(&SynthConfig { prediction_noise: 0.0, ..tiny(3) }).unwrap();
        for u in &ds.users {
            for (id, &r) in u.image_ids.iter().zip(&ds.user_rows(u)) {
                let c = u.image_category(id).unwrap();
                let row = ds.initial.row(r);
                assert!(row.iter().enumerate().all(|(j, &v)| v == if j == c { 1.0 } else { 0.0 }));
            }
        }
    }

    #[test]
    fn partners_pair_up() {
        assert_eq!((partner(0, 8), partner(1, 8), partner(6, 8)), (1, 0, 7));
        assert_eq!(partner(4, 5), 3);
    }

    #[test]
    fn boards_are_tighter_than_categories() {
        let ds = synth_generate(&tiny(5)).unwrap();
        let report = group_distance_report(&ds.features, &ds.users, 8).unwrap();
        for r in report.iter().filter(|r| r.within_board.is_some() && r.within_category.is_some()) {
            assert!(r.within_board.unwrap() < r.within_category.unwrap(), "{r:?}");
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig { categories: 2, ..Default::default() },
            SynthConfig { prediction_noise: 1.5, ..Default::default() },
            SynthConfig { pins_per_board: (4, 2), ..Default::default() },
            SynthConfig { board_spread: 0.0, ..Default::default() },
            SynthConfig { error_confidence: -0.1, ..Default::default() },
        ] {
            assert!(matches!(synth_generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
