//! Image-to-image similarity (Gaussian kernel, row-normalized) and
//! category-to-category affinity (Jaccard index over users, column-normalized).

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{FeatureMatrix, IncidenceRecord, UserCollection};

/// Square nonnegative image-affinity matrix, either the raw kernel matrix or
/// its row-stochastic normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Array2<f64>);

impl SimilarityMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_square_nonneg(values.view(), "similarity matrix")?;
        Ok(Self(values.as_standard_layout().into_owned()))
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::eye(n))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.0.rows().into_iter().all(|r| (r.sum() - 1.0).abs() <= tol)
    }
}

/// Column-stochastic category affinity `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAffinity(Array2<f64>);

impl CategoryAffinity {
    /// Accepts an already column-stochastic matrix (columns within `1e-9` of 1).
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_square_nonneg(values.view(), "category affinity")?;
        for (j, col) in values.columns().into_iter().enumerate() {
            let s = col.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "category affinity column {j} sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self(values.as_standard_layout().into_owned()))
    }

    pub fn identity(k: usize) -> Self {
        Self(Array2::eye(k))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

fn check_square_nonneg(values: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    let (r, c) = values.dim();
    if r != c || r == 0 {
        return Err(Error::DimensionMismatch(format!("{what} must be square and nonempty, got {r}x{c}")));
    }
    for ((row, col), &v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        if v < 0.0 {
            return Err(Error::NegativeEntry { row, col });
        }
    }
    Ok(())
}

/// Squared Euclidean distances between all pairs of rows.
pub fn pairwise_sq_distances(x: &FeatureMatrix) -> Array2<f64> {
    pairwise_sq_distances_with(Execution::default(), x)
}

pub fn pairwise_sq_distances_with(exec: Execution, x: &FeatureMatrix) -> Array2<f64> {
    let n = x.rows();
    let d = x.dim();
    let values = x.values();
    let flat = values.as_slice().expect("feature matrix is standard layout");
    let mut out = vec![0.0; n * n];
    exec::fill_rows(exec, &mut out, n, |i, row| {
        let xi = &flat[i * d..(i + 1) * d];
        for (j, o) in row.iter_mut().enumerate() {
            if j == i {
                continue;
            }
            let xj = &flat[j * d..(j + 1) * d];
            *o = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    Array2::from_shape_vec((n, n), out).expect("n*n buffer")
}

/// Kernel bandwidth: population variance of the Euclidean (not squared)
/// distances over all unordered pairs.
pub fn kernel_bandwidth(x: &FeatureMatrix) -> Result<f64> {
    kernel_bandwidth_from_sq(Execution::default(), pairwise_sq_distances(x).view())
}

/// Same as [`kernel_bandwidth`], reusing a precomputed squared-distance matrix.
pub fn kernel_bandwidth_from_sq(exec: Execution, sq: ArrayView2<'_, f64>) -> Result<f64> {
    let n = sq.nrows();
    if n < 2 {
        return Err(Error::DegenerateBandwidth);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    // per-row partials, then an in-order sum: identical on every execution path
    let row_sums = exec::map_indices(exec, n, |i| (i + 1..n).map(|j| sq[[i, j]].sqrt()).sum::<f64>());
    let mean = row_sums.iter().sum::<f64>() / pairs;
    let row_dev = exec::map_indices(exec, n, |i| {
        (i + 1..n)
            .map(|j| {
                let e = sq[[i, j]].sqrt() - mean;
                e * e
            })
            .sum::<f64>()
    });
    let variance = row_dev.iter().sum::<f64>() / pairs;
    if !(variance > 1e-24 * mean * mean) || variance == 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(variance)
}

/// `W'(i, j) = exp(-‖x_i - x_j‖² / (2 δ²))`.
pub fn gaussian_similarity(x: &FeatureMatrix, bandwidth: f64) -> Result<SimilarityMatrix> {
    gaussian_from_sq(pairwise_sq_distances(x).view(), bandwidth)
}

pub fn gaussian_from_sq(sq: ArrayView2<'_, f64>, bandwidth: f64) -> Result<SimilarityMatrix> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let denom = 2.0 * bandwidth * bandwidth;
    SimilarityMatrix::new(sq.mapv(|d| (-d / denom).exp()))
}

/// `W = D⁻¹ W'` with `D_ii = Σ_j W'_ij`.
pub fn row_normalize(raw: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    let mut w = raw.0.clone();
    for (i, mut row) in w.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        if !(s > 0.0) {
            return Err(Error::ZeroRowSum(i));
        }
        row.mapv_inplace(|v| v / s);
    }
    Ok(SimilarityMatrix(w))
}

/// Full image-similarity construction for one collection: distances,
/// bandwidth, kernel, row normalization.
///
/// A collection whose pairwise distances all coincide has no usable variance;
/// it falls back to the mean distance as bandwidth (or 1 when every image is
/// identical, where the kernel is constant anyway).
pub fn similarity_for_collection(exec: Execution, x: &FeatureMatrix) -> Result<SimilarityMatrix> {
    let n = x.rows();
    if n == 1 {
        return Ok(SimilarityMatrix::identity(1));
    }
    let sq = pairwise_sq_distances_with(exec, x);
    let bandwidth = match kernel_bandwidth_from_sq(exec, sq.view()) {
        Ok(b) => b,
        Err(Error::DegenerateBandwidth) => {
            let mean = sq[[0, 1]].sqrt();
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
        Err(e) => return Err(e),
    };
    row_normalize(&gaussian_from_sq(sq.view(), bandwidth)?)
}

/// Raw Jaccard index between categories over the users in `records`.
///
/// Records sharing a `user_id` are merged. An empty union yields 0; the
/// diagonal is 1 for every category owned by at least one user.
pub fn jaccard_affinity(records: &[IncidenceRecord], k: usize) -> Result<Array2<f64>> {
    let mut by_user: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for r in records {
        r.validate(k)?;
        let owned = by_user.entry(r.user_id.as_str()).or_insert_with(|| vec![false; k]);
        for &c in &r.categories {
            owned[c] = true;
        }
    }
    let mut both = Array2::<f64>::zeros((k, k));
    let mut single = vec![0.0; k];
    for owned in by_user.values() {
        let cats: Vec<usize> = (0..k).filter(|&c| owned[c]).collect();
        for &a in &cats {
            single[a] += 1.0;
            for &b in &cats {
                both[[a, b]] += 1.0;
            }
        }
    }
    let mut out = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let union = single[i] + single[j] - both[[i, j]];
            if union > 0.0 {
                out[[i, j]] = both[[i, j]] / union;
            }
        }
    }
    Ok(out)
}

/// Scales every column to sum to one; an all-zero column `j` becomes `e_j`.
pub fn column_normalize(raw: ArrayView2<'_, f64>) -> Result<CategoryAffinity> {
    check_square_nonneg(raw, "raw category affinity")?;
    let mut g = raw.to_owned();
    for (j, mut col) in g.columns_mut().into_iter().enumerate() {
        let s = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|v| v / s);
        } else {
            col[j] = 1.0;
        }
    }
    Ok(CategoryAffinity(g))
}

/// Mean squared feature distance for one category, split by whether the two
/// images share a board.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDistances {
    pub category: usize,
    pub within_board: Option<f64>,
    pub within_category: Option<f64>,
    pub within_board_pairs: u64,
    pub within_category_pairs: u64,
}

/// For every category, the mean squared distance over image pairs on the same
/// board and over pairs on different boards of that category. Boards are
/// distinct per user even if two users reuse a board id. Pairs span all
/// supplied users.
pub fn group_distance_report(
    x: &FeatureMatrix,
    users: &[UserCollection],
    k: usize,
) -> Result<Vec<CategoryDistances>> {
    group_distance_report_with(Execution::default(), x, users, k)
}

pub fn group_distance_report_with(
    exec: Execution,
    x: &FeatureMatrix,
    users: &[UserCollection],
    k: usize,
) -> Result<Vec<CategoryDistances>> {
    let row_of: HashMap<&str, usize> = x.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut board_ids: HashMap<(usize, &str), usize> = HashMap::new();
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for (u, user) in users.iter().enumerate() {
        let (Some(board_of), Some(labels)) = (&user.board_of, &user.board_category) else {
            continue;
        };
        for image in &user.image_ids {
            let Some(board) = board_of.get(image) else { continue };
            let Some(&category) = labels.get(board) else { continue };
            if category >= k {
                return Err(Error::DanglingReference(format!("category index {category} >= {k}")));
            }
            let row = *row_of
                .get(image.as_str())
                .ok_or_else(|| Error::DanglingReference(format!("image {image:?} has no features")))?;
            let next = board_ids.len();
            let board_idx = *board_ids.entry((u, board.as_str())).or_insert(next);
            members[category].push((row, board_idx));
        }
    }
    let values = x.values();
    let sq = |a: usize, b: usize| -> f64 {
        values.row(a).iter().zip(values.row(b).iter()).map(|(p, q)| (p - q) * (p - q)).sum()
    };
    Ok(exec::map_indices(exec, k, |c| {
        let m = &members[c];
        let (mut wb, mut nb, mut wc, mut nc) = (0.0, 0u64, 0.0, 0u64);
        for a in 0..m.len() {
            for b in a + 1..m.len() {
                let d = sq(m[a].0, m[b].0);
                if m[a].1 == m[b].1 {
                    wb += d;
                    nb += 1;
                } else {
                    wc += d;
                    nc += 1;
                }
            }
        }
        CategoryDistances {
            category: c,
            within_board: (nb > 0).then(|| wb / nb as f64),
            within_category: (nc > 0).then(|| wc / nc as f64),
            within_board_pairs: nb,
            within_category_pairs: nc,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn fm(v: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::from_array(v).unwrap()
    }

    #[test]
    fn sq_distance_hand_value() {
        let d = pairwise_sq_distances(&fm(array![[0.0, 0.0], [3.0, 4.0]]));
        assert_eq!(d[[0, 1]], 25.0);
        assert_eq!(d[[1, 0]], 25.0);
        assert_eq!(d[[0, 0]], 0.0);
    }

    #[test]
    fn bandwidth_collinear_points() {
        // distances {1, 1, 2}: mean 4/3, population variance 2/9
        let delta = kernel_bandwidth(&fm(array![[0.0], [1.0], [2.0]])).unwrap();
        assert_abs_diff_eq!(delta, 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn bandwidth_degenerate() {
        assert!(matches!(
            kernel_bandwidth(&fm(array![[1.0, 2.0], [1.0, 2.0]])),
            Err(Error::DegenerateBandwidth)
        ));
        assert!(matches!(kernel_bandwidth(&fm(array![[1.0]])), Err(Error::DegenerateBandwidth)));
        // equilateral triangle: all distances equal
        let h = 3f64.sqrt() / 2.0;
        let tri = fm(array![[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        assert!(matches!(kernel_bandwidth(&tri), Err(Error::DegenerateBandwidth)));
    }

    #[test]
    fn kernel_hand_values() {
        // ‖x_i − x_j‖² = 2δ² → e⁻¹
        let delta: f64 = 1.5;
        let dist = (2.0 * delta * delta).sqrt();
        let w = gaussian_similarity(&fm(array![[0.0], [dist]]), delta).unwrap();
        assert_abs_diff_eq!(w.values()[[0, 1]], (-1.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(w.values()[[0, 1]], 0.367879441171, epsilon = 1e-12);
        assert_eq!(w.values()[[0, 0]], 1.0);
        // ‖x_i − x_j‖² = 4, δ = 1 → e⁻²
        let w = gaussian_similarity(&fm(array![[0.0], [2.0]]), 1.0).unwrap();
        assert_abs_diff_eq!(w.values()[[0, 1]], 0.135335283237, epsilon = 1e-12);
        assert!(gaussian_similarity(&fm(array![[0.0], [2.0]]), 0.0).is_err());
    }

    #[test]
    fn row_normalize_examples() {
        let w = row_normalize(&SimilarityMatrix::new(array![[1.0, 1.0], [1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(w.values(), array![[0.5, 0.5], [0.5, 0.5]].view());
        let w = row_normalize(&SimilarityMatrix::new(array![[1.0, 0.2], [0.2, 1.0]]).unwrap()).unwrap();
        assert_abs_diff_eq!(w.values()[[0, 0]], 1.0 / 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(w.values()[[0, 1]], 0.2 / 1.2, epsilon = 1e-15);
        let w = row_normalize(&SimilarityMatrix::new(array![[1.0]]).unwrap()).unwrap();
        assert_eq!(w.values(), array![[1.0]].view());
        let z = SimilarityMatrix::new(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(row_normalize(&z), Err(Error::ZeroRowSum(0))));
    }

    #[test]
    fn jaccard_examples() {
        let recs = [IncidenceRecord::new("u1", [0, 1]), IncidenceRecord::new("u2", [0])];
        let j = jaccard_affinity(&recs, 3).unwrap();
        assert_eq!(j[[0, 1]], 0.5);
        assert_eq!(j[[1, 0]], 0.5);
        assert_eq!(j[[0, 0]], 1.0);
        // category 2 is owned by nobody
        assert_eq!(j.row(2).sum(), 0.0);
        assert_eq!(j.column(2).sum(), 0.0);

        let j = jaccard_affinity(&[IncidenceRecord::new("u1", [0, 1])], 2).unwrap();
        assert_eq!(j[[0, 1]], 1.0);

        assert!(jaccard_affinity(&[IncidenceRecord::new("u", [5])], 2).is_err());
    }

    #[test]
    fn jaccard_merges_duplicate_users() {
        let split = [IncidenceRecord::new("u1", [0]), IncidenceRecord::new("u1", [1])];
        let joined = [IncidenceRecord::new("u1", [0, 1])];
        assert_eq!(jaccard_affinity(&split, 2).unwrap(), jaccard_affinity(&joined, 2).unwrap());
    }

    #[test]
    fn column_normalize_examples() {
        let g = column_normalize(array![[1.0, 0.5], [0.5, 1.0]].view()).unwrap();
        assert_abs_diff_eq!(g.values()[[0, 0]], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.values()[[1, 0]], 1.0 / 3.0, epsilon = 1e-15);
        let eye: Array2<f64> = Array2::eye(3);
        assert_eq!(column_normalize(eye.view()).unwrap().values(), eye.view());
        let g = column_normalize(array![[1.0, 0.0], [0.0, 0.0]].view()).unwrap();
        assert_eq!(g.values(), eye.slice(ndarray::s![..2, ..2]));
    }

    fn user(id: &str, boards: &[(&str, &str, usize)]) -> UserCollection {
        let mut u = UserCollection::new(id, boards.iter().map(|b| b.0.to_string()).collect());
        u.board_of = Some(boards.iter().map(|b| (b.0.to_string(), b.1.to_string())).collect());
        u.board_category = Some(boards.iter().map(|b| (b.1.to_string(), b.2)).collect());
        u
    }

    #[test]
    fn group_distances() {
        let x = FeatureMatrix::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            array![[1.0, 1.0], [1.0, 1.0], [5.0, 1.0], [5.0, 2.0]],
        )
        .unwrap();
        // one board of two identical images
        let users = [user("u", &[("a", "b1", 0), ("b", "b1", 0)])];
        let r = group_distance_report(&x, &users, 2).unwrap();
        assert_eq!(r[0].within_board, Some(0.0));
        assert_eq!(r[0].within_category, None);
        assert_eq!(r[1].within_board, None);

        let users = [user("u", &[("a", "b1", 0), ("b", "b1", 0), ("c", "b2", 0), ("d", "b2", 0)])];
        let r = group_distance_report(&x, &users, 2).unwrap();
        assert_eq!(r[0].within_board_pairs, 2);
        assert_eq!(r[0].within_category_pairs, 4);
        assert_abs_diff_eq!(r[0].within_board.unwrap(), 0.5);
        assert_abs_diff_eq!(r[0].within_category.unwrap(), (16.0 + 16.0 + 17.0 + 17.0) / 4.0);

        // same board id under two users is two boards
        let users = [user("u", &[("a", "b1", 0)]), user("v", &[("b", "b1", 0)])];
        let r = group_distance_report(&x, &users, 2).unwrap();
        assert_eq!(r[0].within_board_pairs, 0);
        assert_eq!(r[0].within_category_pairs, 1);
    }

    fn features() -> impl Strategy<Value = Array2<f64>> {
        (2usize..7, 1usize..4).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-5.0f64..5.0, n * d)
                .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
        })
    }

    fn incidence() -> impl Strategy<Value = (Vec<IncidenceRecord>, usize)> {
        (2usize..7).prop_flat_map(|k| {
            proptest::collection::vec(proptest::collection::btree_set(0..k, 0..=k), 0..11).prop_map(
                move |sets| {
                    let recs = sets
                        .into_iter()
                        .enumerate()
                        .map(|(u, s)| IncidenceRecord { user_id: format!("u{u}"), categories: s })
                        .collect();
                    (recs, k)
                },
            )
        })
    }

    proptest! {
        #[test]
        fn kernel_properties(x in features(), delta in 0.1f64..10.0) {
            let w = gaussian_similarity(&fm(x), delta).unwrap();
            let v = w.values();
            let n = v.nrows();
            for i in 0..n {
                prop_assert_eq!(v[[i, i]], 1.0);
                for j in 0..n {
                    prop_assert_eq!(v[[i, j]], v[[j, i]]);
                    prop_assert!(v[[i, j]] >= 0.0 && v[[i, j]] <= 1.0);
                }
            }
            let w = row_normalize(&w).unwrap();
            prop_assert!(w.is_row_stochastic(1e-12));
            prop_assert!(w.values().iter().all(|&e| e >= 0.0));
        }

        #[test]
        fn sq_distance_properties(x in features(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let f = fm(x);
            let d = pairwise_sq_distances(&f);
            let n = f.rows();
            for i in 0..n {
                prop_assert_eq!(d[[i, i]], 0.0);
                for j in 0..n {
                    prop_assert_eq!(d[[i, j]], d[[j, i]]);
                    prop_assert!(d[[i, j]] >= 0.0);
                }
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let dp = pairwise_sq_distances(&f.select(&perm).unwrap());
            for a in 0..n {
                for b in 0..n {
                    prop_assert_eq!(dp[[a, b]], d[[perm[a], perm[b]]]);
                }
            }
        }

        #[test]
        fn bandwidth_scaling(x in features(), c in 0.1f64..10.0) {
            let f = fm(x.clone());
            let scaled = fm(x * c);
            if let Ok(delta) = kernel_bandwidth(&f) {
                prop_assume!(delta > 1e-6);
                let ds = kernel_bandwidth(&scaled).unwrap();
                prop_assert!((ds - c * c * delta).abs() <= 1e-9 * ds.max(1.0));
                let d = pairwise_sq_distances(&f);
                let dsq = pairwise_sq_distances(&scaled);
                for (a, b) in d.iter().zip(dsq.iter()) {
                    prop_assert!((b - c * c * a).abs() <= 1e-9 * b.max(1.0));
                }
            }
        }

        #[test]
        fn jaccard_properties((recs, k) in incidence(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let j = jaccard_affinity(&recs, k).unwrap();
            for a in 0..k {
                let owned = recs.iter().any(|r| r.categories.contains(&a));
                prop_assert_eq!(j[[a, a]], if owned { 1.0 } else { 0.0 });
                for b in 0..k {
                    prop_assert_eq!(j[[a, b]], j[[b, a]]);
                    prop_assert!((0.0..=1.0).contains(&j[[a, b]]));
                }
            }
            let g = column_normalize(j.view()).unwrap();
            for col in g.values().columns() {
                prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
            }
            // relabel categories by a permutation
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let relabeled: Vec<IncidenceRecord> = recs
                .iter()
                .map(|r| IncidenceRecord {
                    user_id: r.user_id.clone(),
                    categories: r.categories.iter().map(|&c| perm[c]).collect::<BTreeSet<_>>(),
                })
                .collect();
            let jp = jaccard_affinity(&relabeled, k).unwrap();
            for a in 0..k {
                for b in 0..k {
                    prop_assert_eq!(jp[[perm[a], perm[b]]], j[[a, b]]);
                }
            }
        }
    }
}
