//! Shared data types: category taxonomy, feature and label matrices, and the
//! user curation structure (users → boards → images).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Pinterest board categories, in their canonical order.
pub const PINTEREST_CATEGORIES: [&str; 33] = [
    "Animals",
    "Architecture",
    "Art",
    "Cars & Motorcycles",
    "Celebrities",
    "Design",
    "DIY & Crafts",
    "Education",
    "Film, Music & Books",
    "Food & Drink",
    "Gardening",
    "Geek",
    "Hair & Beauty",
    "Health & Fitness",
    "History",
    "Holidays & Events",
    "Home Decor",
    "Humor",
    "Illustrations & Posters",
    "Kids",
    "Men's Fashion",
    "Outdoors",
    "Photography",
    "Products",
    "Quotes",
    "Science & Nature",
    "Sports",
    "Tattoos",
    "Technology",
    "Travel",
    "Weddings",
    "Women's Fashion",
    "Other",
];

/// Ordered list of category names. Index `i` means `names()[i]` in every
/// matrix column, row of `G`, and distribution in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl CategorySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::InvalidCategories(format!("need at least 2 categories, got {}", names.len())));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidCategories(format!("category {i} has an empty name")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidCategories(format!("duplicate category {name:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// The built-in Pinterest taxonomy.
    pub fn pinterest() -> Self {
        Self::new(PINTEREST_CATEGORIES).expect("built-in taxonomy is valid")
    }

    /// Generic `c0, c1, ...` names, used by the synthetic generator.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| format!("c{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Per-image feature vectors, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 || d == 0 {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix must be at least 1x1, got {n}x{d}"
            )));
        }
        if ids.len() != n {
            return Err(Error::DimensionMismatch(format!("{} image ids for {n} feature rows", ids.len())));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate image id {id:?}")));
            }
        }
        check_finite(values.view())?;
        Ok(Self { ids, values: values.as_standard_layout().into_owned() })
    }

    /// Features without meaningful ids (ids become `"0"`, `"1"`, ...).
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(ids, values)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&i| self.ids[i].clone()).collect();
        Self::new(ids, self.values.select(Axis(0), rows))
    }
}

/// Nonnegative per-image category scores with strictly positive row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Array2<f64>);

impl LabelMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        validate_label_matrix(values)
    }

    /// Wraps a matrix already known to satisfy the invariants.
    pub(crate) fn from_trusted(values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        LabelMatrix(values.as_standard_layout().into_owned())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn select(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix(self.0.select(Axis(0), rows))
    }

    /// Index of the largest entry of each row; ties go to the lower index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.0.rows().into_iter().map(|r| argmax(r)).collect()
    }
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn check_finite(values: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Checks finiteness, nonnegativity and positive row sums, in that order of
/// precedence, reporting the first offending row-major position.
pub fn validate_label_matrix(values: Array2<f64>) -> Result<LabelMatrix> {
    if values.nrows() == 0 || values.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    for ((row, col), &v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        if v < 0.0 {
            return Err(Error::NegativeEntry { row, col });
        }
    }
    for (i, row) in values.rows().into_iter().enumerate() {
        if row.sum() <= 0.0 {
            return Err(Error::ZeroRow(i));
        }
    }
    Ok(LabelMatrix(values.as_standard_layout().into_owned()))
}

/// Scales every row to sum to one.
pub fn normalize_rows(values: ArrayView2<'_, f64>) -> Result<LabelMatrix> {
    let mut out = values.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let sum = row.sum();
        if !(sum > 0.0) {
            return Err(Error::ZeroRow(i));
        }
        row.mapv_inplace(|v| v / sum);
    }
    validate_label_matrix(out)
}

/// One user's images plus the optional board structure used as ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UserCollection {
    pub user_id: String,
    pub image_ids: Vec<String>,
    /// image id → board id
    pub board_of: Option<BTreeMap<String, String>>,
    /// board id → category index
    pub board_category: Option<BTreeMap<String, usize>>,
}

impl UserCollection {
    pub fn new(user_id: impl Into<String>, image_ids: Vec<String>) -> Self {
        Self { user_id: user_id.into(), image_ids, board_of: None, board_category: None }
    }

    pub fn validate(&self, categories: &CategorySet) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.image_ids.len());
        for id in &self.image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "user {:?} lists image {id:?} twice",
                    self.user_id
                )));
            }
        }
        if let Some(board_of) = &self.board_of {
            for (image, board) in board_of {
                if !seen.contains(image.as_str()) {
                    return Err(Error::DanglingReference(format!(
                        "user {:?}: board membership for unknown image {image:?}",
                        self.user_id
                    )));
                }
                if let Some(labels) = &self.board_category {
                    if !labels.contains_key(board) {
                        return Err(Error::DanglingReference(format!(
                            "user {:?}: image {image:?} is on unlabeled board {board:?}",
                            self.user_id
                        )));
                    }
                }
            }
        }
        if let Some(labels) = &self.board_category {
            if let Some((board, &c)) = labels.iter().find(|(_, &c)| c >= categories.len()) {
                return Err(Error::DanglingReference(format!(
                    "board {board:?} has category index {c} outside 0..{}",
                    categories.len()
                )));
            }
        }
        Ok(())
    }

    /// Category inherited by an image from its board, if labeled.
    pub fn image_category(&self, image_id: &str) -> Option<usize> {
        let board = self.board_of.as_ref()?.get(image_id)?;
        self.board_category.as_ref()?.get(board).copied()
    }

    /// Distinct categories of this user's labeled boards.
    pub fn owned_categories(&self) -> BTreeSet<usize> {
        self.board_category.as_ref().map(|m| m.values().copied().collect()).unwrap_or_default()
    }
}

/// The set of categories a user has boards in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceRecord {
    pub user_id: String,
    pub categories: BTreeSet<usize>,
}

impl IncidenceRecord {
    pub fn new(user_id: impl Into<String>, categories: impl IntoIterator<Item = usize>) -> Self {
        Self { user_id: user_id.into(), categories: categories.into_iter().collect() }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self.categories.iter().find(|&&c| c >= k) {
            Some(c) => Err(Error::DanglingReference(format!(
                "user {:?} owns category index {c} outside 0..{k}",
                self.user_id
            ))),
            None => Ok(()),
        }
    }
}
