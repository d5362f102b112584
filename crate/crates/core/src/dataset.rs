//! On-disk dataset layout and loading.
//!
//! A dataset directory holds:
//!
//! | file               | columns                              | required |
//! |--------------------|--------------------------------------|----------|
//! | `categories.txt`   | one category name per line           | no (defaults to the Pinterest taxonomy) |
//! | `features.csv`     | `image_id,f0,...,f{d-1}`             | yes |
//! | `predictions.csv`  | `image_id,p0,...,p{K-1}`             | yes |
//! | `structure.csv`    | `user_id,board_id,image_id`          | yes |
//! | `board_labels.csv` | `board_id,category_name`             | no |
//! | `incidence.csv`    | `user_id,category_name`              | no |
//!
//! All CSV files carry a header row. `board_id` may be empty for images that
//! are not on a board.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::Array2;

use serde::{Deserialize, Serialize};

use crate::affinity::CategoryAffinity;
use crate::error::{Error, Result};
use crate::model::{CategorySet, FeatureMatrix, IncidenceRecord, LabelMatrix, UserCollection};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub categories: CategorySet,
    pub features: FeatureMatrix,
    /// Initial per-image predictions, rows in the same order as `features`.
    pub initial: LabelMatrix,
    pub users: Vec<UserCollection>,
    /// Category ownership of users outside the evaluation set, used to learn
    /// the category affinity.
    pub incidence: Option<Vec<IncidenceRecord>>,
}

impl Dataset {
    pub fn new(
        categories: CategorySet,
        features: FeatureMatrix,
        initial: LabelMatrix,
        users: Vec<UserCollection>,
        incidence: Option<Vec<IncidenceRecord>>,
    ) -> Result<Self> {
        if features.rows() != initial.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} prediction rows",
                features.rows(),
                initial.rows()
            )));
        }
        if initial.cols() != categories.len() {
            return Err(Error::DimensionMismatch(format!(
                "predictions have {} columns for {} categories",
                initial.cols(),
                categories.len()
            )));
        }
        let ds = Self { categories, features, initial, users, incidence };
        let rows = ds.row_index();
        for user in &ds.users {
            user.validate(&ds.categories)?;
            if let Some(missing) = user.image_ids.iter().find(|id| !rows.contains_key(id.as_str())) {
                return Err(Error::DanglingReference(format!(
                    "user {:?} references image {missing:?} with no features",
                    user.user_id
                )));
            }
        }
        if let Some(records) = &ds.incidence {
            for r in records {
                r.validate(ds.categories.len())?;
            }
        }
        Ok(ds)
    }

    /// image id → row in `features` / `initial`.
    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.features.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Rows of `features` / `initial` belonging to `user`, in the user's order.
    pub fn user_rows(&self, user: &UserCollection) -> Vec<usize> {
        let rows = self.row_index();
        user.image_ids.iter().map(|id| rows[id.as_str()]).collect()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.users.iter().any(|u| u.board_category.as_ref().is_some_and(|b| !b.is_empty()))
    }

    /// Inherited (board) label of every labeled image, across all users.
    pub fn image_labels(&self) -> Vec<usize> {
        self.users
            .iter()
            .flat_map(|u| u.image_ids.iter().filter_map(move |id| u.image_category(id)))
            .collect()
    }

    /// Category ownership of the evaluation users, derived from their boards.
    pub fn user_incidence(&self) -> Vec<IncidenceRecord> {
        self.users
            .iter()
            .filter(|u| u.board_category.is_some())
            .map(|u| IncidenceRecord::new(u.user_id.clone(), u.owned_categories()))
            .collect()
    }
}

/// Locations of the dataset files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub categories: Option<PathBuf>,
    pub features: PathBuf,
    pub predictions: PathBuf,
    pub structure: PathBuf,
    pub board_labels: Option<PathBuf>,
    pub incidence: Option<PathBuf>,
}

impl DatasetPaths {
    /// Conventional file names inside `dir`; optional files are used only if
    /// they exist.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            categories: optional("categories.txt"),
            features: dir.join("features.csv"),
            predictions: dir.join("predictions.csv"),
            structure: dir.join("structure.csv"),
            board_labels: optional("board_labels.csv"),
            incidence: optional("incidence.csv"),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { file: path.display().to_string(), line, message: message.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn records(path: &Path, expect_cols: Option<usize>) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut rdr = reader(path)?;
    let header_len = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.len();
    if let Some(n) = expect_cols {
        if header_len != n {
            return Err(parse_err(path, 1, format!("expected {n} columns, header has {header_len}")));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = line_of(&rec);
        if rec.len() != header_len {
            return Err(parse_err(path, line, format!("expected {header_len} fields, got {}", rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// `image_id,v0,...` rows as ids plus a dense matrix of finite values.
fn read_matrix(path: &Path) -> Result<(Vec<String>, Array2<f64>, usize)> {
    let rows = records(path, None)?;
    let width = match rows.first() {
        Some((_, r)) => r.len(),
        None => return Err(parse_err(path, 2, "no data rows")),
    };
    if width < 2 {
        return Err(parse_err(path, 1, "need an id column and at least one value column"));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * (width - 1));
    for (line, rec) in &rows {
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 =
                field.parse().map_err(|_| parse_err(path, *line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, *line, format!("non-finite value {field:?}")));
            }
            values.push(v);
        }
    }
    let n = ids.len();
    let m = Array2::from_shape_vec((n, width - 1), values).expect("rectangular by construction");
    Ok((ids, m, width - 1))
}

pub fn read_categories(path: &Path) -> Result<CategorySet> {
    let text = std::fs::read_to_string(path)?;
    CategorySet::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
}

fn category_index(categories: &CategorySet, name: &str, path: &Path, line: usize) -> Result<usize> {
    categories.index_of(name).ok_or_else(|| {
        Error::DanglingReference(format!("{}:{line}: unknown category {name:?}", path.display()))
    })
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let categories = match &paths.categories {
        Some(p) => read_categories(p)?,
        None => CategorySet::pinterest(),
    };
    let (ids, feats, _) = read_matrix(&paths.features)?;
    let features = FeatureMatrix::new(ids, feats).map_err(|e| match e {
        Error::InvalidConfig(m) => parse_err(&paths.features, 0, m),
        other => other,
    })?;

    let (pred_ids, preds, k) = read_matrix(&paths.predictions)?;
    if k != categories.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {k} probability columns for {} categories",
            paths.predictions.display(),
            categories.len()
        )));
    }
    let rows: HashMap<&str, usize> =
        features.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut initial = Array2::<f64>::zeros((features.rows(), k));
    let mut filled = vec![false; features.rows()];
    for (p, id) in pred_ids.iter().enumerate() {
        let &r = rows.get(id.as_str()).ok_or_else(|| {
            Error::DanglingReference(format!("prediction for image {id:?} with no features"))
        })?;
        if filled[r] {
            return Err(parse_err(&paths.predictions, p + 2, format!("duplicate image {id:?}")));
        }
        filled[r] = true;
        initial.row_mut(r).assign(&preds.row(p));
    }
    if let Some(r) = filled.iter().position(|f| !f) {
        return Err(Error::DanglingReference(format!(
            "image {:?} has features but no prediction",
            features.ids()[r]
        )));
    }
    let initial = LabelMatrix::new(initial)?;

    let labels: Option<HashMap<String, usize>> = match &paths.board_labels {
        Some(path) => {
            let mut map = HashMap::new();
            for (line, rec) in records(path, Some(2))? {
                let c = category_index(&categories, &rec[1], path, line)?;
                if map.insert(rec[0].to_string(), c).is_some() {
                    return Err(parse_err(path, line, format!("board {:?} labeled twice", &rec[0])));
                }
            }
            Some(map)
        }
        None => None,
    };

    let mut users: IndexMap<String, UserCollection> = IndexMap::new();
    for (line, rec) in records(&paths.structure, Some(3))? {
        let (user_id, board, image) = (&rec[0], &rec[1], &rec[2]);
        if !rows.contains_key(image) {
            return Err(Error::DanglingReference(format!(
                "{}:{line}: image {image:?} has no features",
                paths.structure.display()
            )));
        }
        let user =
            users.entry(user_id.to_string()).or_insert_with(|| UserCollection::new(user_id, Vec::new()));
        if user.image_ids.iter().any(|i| i == image) {
            return Err(parse_err(
                &paths.structure,
                line,
                format!("image {image:?} listed twice for user {user_id:?}"),
            ));
        }
        user.image_ids.push(image.to_string());
        if board.is_empty() {
            continue;
        }
        user.board_of.get_or_insert_with(BTreeMap::new).insert(image.to_string(), board.to_string());
        if let Some(labels) = &labels {
            let &c = labels.get(board).ok_or_else(|| {
                Error::DanglingReference(format!(
                    "{}:{line}: image {image:?} is on unknown board {board:?}",
                    paths.structure.display()
                ))
            })?;
            user.board_category.get_or_insert_with(BTreeMap::new).insert(board.to_string(), c);
        }
    }

    let incidence = match &paths.incidence {
        Some(path) => {
            let mut by_user: IndexMap<String, BTreeSet<usize>> = IndexMap::new();
            for (line, rec) in records(path, Some(2))? {
                let c = category_index(&categories, &rec[1], path, line)?;
                by_user.entry(rec[0].to_string()).or_default().insert(c);
            }
            Some(
                by_user
                    .into_iter()
                    .map(|(user_id, categories)| IncidenceRecord { user_id, categories })
                    .collect(),
            )
        }
        None => None,
    };

    Dataset::new(categories, features, initial, users.into_values().collect(), incidence)
}

/// Writes `bytes` to `path` via a temporary file in the same directory and a
/// rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_bytes<F>(header: &[String], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let run = || -> csv::Result<Vec<u8>> {
        w.write_record(header)?;
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error().into())
    };
    run().map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// `image_id,<prefix>0,...` CSV for a matrix with one row per id.
pub fn matrix_csv(ids: &[String], values: ndarray::ArrayView2<'_, f64>, prefix: &str) -> Result<Vec<u8>> {
    let mut header = vec!["image_id".to_string()];
    header.extend((0..values.ncols()).map(|j| format!("{prefix}{j}")));
    csv_bytes(&header, |w| {
        for (id, row) in ids.iter().zip(values.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

/// Writes `ds` into `dir` using the conventional file names.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut cats = ds.categories.names().join("\n");
    cats.push('\n');
    write_atomic(&dir.join("categories.txt"), cats.as_bytes())?;
    write_atomic(&dir.join("features.csv"), &matrix_csv(ds.features.ids(), ds.features.values(), "f")?)?;
    write_atomic(&dir.join("predictions.csv"), &matrix_csv(ds.features.ids(), ds.initial.values(), "p")?)?;

    let header = |a: &str, b: &str| vec![a.to_string(), b.to_string()];
    let structure = csv_bytes(&["user_id".into(), "board_id".into(), "image_id".into()], |w| {
        for u in &ds.users {
            for image in &u.image_ids {
                let board = u.board_of.as_ref().and_then(|b| b.get(image)).map(String::as_str).unwrap_or("");
                w.write_record([u.user_id.as_str(), board, image.as_str()])?;
            }
        }
        Ok(())
    })?;
    write_atomic(&dir.join("structure.csv"), &structure)?;

    let labels_path = dir.join("board_labels.csv");
    if ds.has_ground_truth() {
        let mut boards: IndexMap<&str, usize> = IndexMap::new();
        for u in &ds.users {
            for (b, &c) in u.board_category.iter().flatten() {
                boards.insert(b, c);
            }
        }
        let bytes = csv_bytes(&header("board_id", "category_name"), |w| {
            for (b, c) in &boards {
                w.write_record([*b, ds.categories.name(*c)])?;
            }
            Ok(())
        })?;
        write_atomic(&labels_path, &bytes)?;
    } else if labels_path.exists() {
        std::fs::remove_file(&labels_path)?;
    }

    let incidence_path = dir.join("incidence.csv");
    if let Some(records) = &ds.incidence {
        let bytes = csv_bytes(&header("user_id", "category_name"), |w| {
            for r in records {
                for &c in &r.categories {
                    w.write_record([r.user_id.as_str(), ds.categories.name(c)])?;
                }
            }
            Ok(())
        })?;
        write_atomic(&incidence_path, &bytes)?;
    } else if incidence_path.exists() {
        std::fs::remove_file(&incidence_path)?;
    }
    Ok(())
}

/// JSON form of a category affinity, keyed by category name:
/// `{"categories": [...], "normalized": {row: {col: v}}, "raw": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityFile {
    pub categories: Vec<String>,
    pub normalized: IndexMap<String, IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<IndexMap<String, IndexMap<String, f64>>>,
}

fn named_matrix(
    names: &[String],
    m: ndarray::ArrayView2<'_, f64>,
) -> IndexMap<String, IndexMap<String, f64>> {
    names
        .iter()
        .zip(m.rows())
        .map(|(r, row)| (r.clone(), names.iter().cloned().zip(row.iter().copied()).collect()))
        .collect()
}

impl AffinityFile {
    pub fn new(
        categories: &CategorySet,
        g: &CategoryAffinity,
        raw: Option<ndarray::ArrayView2<'_, f64>>,
    ) -> Self {
        let names = categories.names();
        Self {
            categories: names.to_vec(),
            normalized: named_matrix(names, g.values()),
            raw: raw.map(|r| named_matrix(names, r)),
        }
    }

    /// Rebuilds `G` in the order of `categories`, which must name the same
    /// set of categories as the file.
    pub fn to_affinity(&self, categories: &CategorySet) -> Result<CategoryAffinity> {
        let k = categories.len();
        let file_set: BTreeSet<&str> = self.categories.iter().map(String::as_str).collect();
        let want: BTreeSet<&str> = categories.names().iter().map(String::as_str).collect();
        if file_set != want || self.categories.len() != k {
            return Err(Error::InvalidCategories(format!(
                "affinity file covers {:?}, dataset uses {:?}",
                self.categories,
                categories.names()
            )));
        }
        let mut g = Array2::zeros((k, k));
        for (i, r) in categories.names().iter().enumerate() {
            let row = self
                .normalized
                .get(r)
                .ok_or_else(|| Error::DanglingReference(format!("affinity row {r:?} missing")))?;
            for (j, c) in categories.names().iter().enumerate() {
                g[[i, j]] = *row.get(c).ok_or_else(|| {
                    Error::DanglingReference(format!("affinity entry ({r:?}, {c:?}) missing"))
                })?;
            }
        }
        CategoryAffinity::new(g)
    }
}

pub fn read_affinity(path: &Path, categories: &CategorySet) -> Result<CategoryAffinity> {
    let file: AffinityFile = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
    file.to_affinity(categories)
}
