//! Tabular datasets: CSV loading, train-split min-max normalization and
//! partitioning of the training samples among agents.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column `{0}` not present in header")]
    MissingLabelColumn(String),
    #[error("non-numeric feature value at data row {row}, column `{col}`")]
    NonNumericFeature { row: usize, col: String },
    #[error("dataset has no data rows")]
    EmptyDataset,
    #[error("invalid train/test split: {0}")]
    InvalidSplit(String),
    #[error("class {0} has no sample in the train split")]
    MissingClassInTrain(usize),
    #[error("cannot split {samples} training samples among {agents} agents")]
    TooManyAgents { agents: usize, samples: usize },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// Feature matrix, contiguous class labels and a disjoint train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    /// `n × d`.
    pub features: Matrix<T>,
    /// Values in `0..num_classes`.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Original label text, indexed by class.
    pub class_names: Vec<String>,
    /// Sorted row indices of the training part.
    pub train: Vec<usize>,
    /// Sorted row indices of the test part.
    pub test: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    /// Assembles a dataset, checking the label and split invariants.
    pub fn new(
        name: impl Into<String>,
        features: Matrix<T>,
        labels: Vec<usize>,
        num_classes: usize,
        mut train: Vec<usize>,
        mut test: Vec<usize>,
    ) -> Result<Self, DatasetError> {
        let n = features.rows();
        if n == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        if labels.len() != n {
            return Err(DatasetError::InvalidSplit(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DatasetError::InvalidSplit(format!("label {bad} outside 0..{num_classes}")));
        }
        train.sort_unstable();
        test.sort_unstable();
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n {
                return Err(DatasetError::InvalidSplit(format!("index {i} out of range for {n} rows")));
            }
            if seen[i] {
                return Err(DatasetError::InvalidSplit(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DatasetError::InvalidSplit(format!("index {missing} is in neither split")));
        }
        let mut present = vec![false; num_classes];
        for &i in &train {
            present[labels[i]] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(DatasetError::MissingClassInTrain(c));
        }
        let class_names = (0..num_classes).map(|c| c.to_string()).collect();
        Ok(Dataset { name: name.into(), features, labels, num_classes, class_names, train, test })
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.num_classes);
        self.class_names = names;
        self
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// How the train/test partition is obtained when loading.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Seeded per-class shuffle; `train_fraction` of each class (at least one sample) goes to train.
    Random { seed: u64, train_fraction: f64 },
    /// File listing training row indices, one per line; every other row is test.
    File(PathBuf),
    Explicit { train: Vec<usize>, test: Vec<usize> },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Random { seed: 0, train_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    pub split: SplitSpec,
}

impl CsvSchema {
    pub fn new(label_column: impl Into<String>) -> Self {
        CsvSchema { label_column: label_column.into(), split: SplitSpec::default() }
    }

    pub fn with_split(mut self, split: SplitSpec) -> Self {
        self.split = split;
        self
    }
}

/// Reads a header-bearing CSV file. Features are left unnormalized; labels are
/// re-indexed to `0..L` in order of first appearance.
pub fn load_dataset<T: Real>(path: &Path, schema: &CsvSchema) -> Result<Dataset<T>, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::FileNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_csv(&name, &text, schema)
}

/// [`load_dataset`] on in-memory CSV text.
pub fn parse_csv<T: Real>(name: &str, text: &str, schema: &CsvSchema) -> Result<Dataset<T>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| DatasetError::MissingLabelColumn(schema.label_column.clone()))?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_idx).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for &c in &feature_cols {
            let v: f64 = record
                .get(c)
                .and_then(|s| s.parse().ok())
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DatasetError::NonNumericFeature { row, col: header[c].to_string() })?;
            values.push(T::of(v));
        }
        let raw_label = record.get(label_idx).unwrap_or_default().to_string();
        let next = class_names.len();
        let label = *class_index.entry(raw_label.clone()).or_insert_with(|| {
            class_names.push(raw_label);
            next
        });
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = labels.len();
    let features = Matrix::from_vec(n, feature_cols.len(), values);
    let num_classes = class_names.len();
    let (train, test) = resolve_split(&schema.split, &labels, num_classes)?;
    Ok(Dataset::new(name, features, labels, num_classes, train, test)?.with_class_names(class_names))
}

fn resolve_split(
    split: &SplitSpec,
    labels: &[usize],
    num_classes: usize,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let n = labels.len();
    match split {
        SplitSpec::Random { seed, train_fraction } => Ok(stratified_split(labels, num_classes, *train_fraction, *seed)),
        SplitSpec::Explicit { train, test } => Ok((train.clone(), test.clone())),
        SplitSpec::File(path) => {
            let text = fs::read_to_string(path).map_err(|source| {
                if source.kind() == std::io::ErrorKind::NotFound {
                    DatasetError::FileNotFound(path.clone())
                } else {
                    DatasetError::Io { path: path.clone(), source }
                }
            })?;
            let mut in_train = vec![false; n];
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let i: usize =
                    line.parse().map_err(|_| DatasetError::InvalidSplit(format!("bad index `{line}`")))?;
                if i >= n {
                    return Err(DatasetError::InvalidSplit(format!("index {i} out of range for {n} rows")));
                }
                if in_train[i] {
                    return Err(DatasetError::InvalidSplit(format!("index {i} appears twice")));
                }
                in_train[i] = true;
            }
            let train = (0..n).filter(|&i| in_train[i]).collect();
            let test = (0..n).filter(|&i| !in_train[i]).collect();
            Ok((train, test))
        }
    }
}

/// Per-class shuffle-and-cut so every class keeps at least one training sample.
pub fn stratified_split(labels: &[usize], num_classes: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream(seed, Purpose::TrainTestSplit, &[]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let k = ((members.len() as f64 * train_fraction).round() as usize).clamp(1, members.len());
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Rescales each feature to `[0, 1]` using the train-split range. Test values
/// outside the range are clamped; constant columns become 0.
pub fn normalize_features<T: Real>(raw: &Dataset<T>) -> Dataset<T> {
    let d = raw.num_features();
    let mut lo = vec![T::infinity(); d];
    let mut hi = vec![T::neg_infinity(); d];
    for &i in &raw.train {
        for (j, &v) in raw.features.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let features = Matrix::from_fn(raw.num_samples(), d, |i, j| {
        let span = hi[j] - lo[j];
        if !(span > T::zero()) {
            return T::zero();
        }
        ((raw.features[(i, j)] - lo[j]) / span).max(T::zero()).min(T::one())
    });
    Dataset { features, ..raw.clone() }
}

/// Training samples owned by one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentShard {
    pub agent_id: usize,
    /// Sorted dataset row indices, all members of the train split.
    pub sample_indices: Vec<usize>,
}

/// Uniformly permutes the train split and cuts it into `agents` contiguous
/// blocks; with `|train| = q·N + r` the first `r` agents get `q + 1` samples.
pub fn split_among_agents<T: Real, R: Rng + ?Sized>(
    ds: &Dataset<T>,
    agents: usize,
    rng: &mut R,
) -> Result<Vec<AgentShard>, DatasetError> {
    let samples = ds.train.len();
    if agents == 0 || agents > samples {
        return Err(DatasetError::TooManyAgents { agents, samples });
    }
    let mut order = ds.train.clone();
    order.shuffle(rng);
    let (q, r) = (samples / agents, samples % agents);
    let mut shards = Vec::with_capacity(agents);
    let mut start = 0;
    for agent_id in 0..agents {
        let size = q + usize::from(agent_id < r);
        let mut sample_indices = order[start..start + size].to_vec();
        sample_indices.sort_unstable();
        shards.push(AgentShard { agent_id, sample_indices });
        start += size;
    }
    Ok(shards)
}

/// On-disk description of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// CSV path; relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_file: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        if !path.exists() {
            return Err(DatasetError::FileNotFound(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        let mut manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.path = base.join(&manifest.path);
        manifest.split_file = manifest.split_file.map(|p| base.join(p));
        Ok(manifest)
    }

    pub fn schema(&self) -> CsvSchema {
        let split = match &self.split_file {
            Some(p) => SplitSpec::File(p.clone()),
            None => SplitSpec::Random { seed: self.split_seed, train_fraction: 0.5 },
        };
        CsvSchema::new(self.label_column.clone()).with_split(split)
    }

    /// Loads the raw (unnormalized) dataset under the manifest's name.
    pub fn load<T: Real>(&self) -> Result<Dataset<T>, DatasetError> {
        let mut ds = load_dataset(&self.path, &self.schema())?;
        ds.name = self.name.clone();
        Ok(ds)
    }
}

/// Isotropic Gaussian clusters with centres drawn from `N(0, separation²)`
/// per coordinate and unit within-class variance. Classes are balanced and the
/// split is a stratified 50/50 cut. Features are raw, not normalized.
pub fn gaussian_blobs<T: Real>(n: usize, d: usize, classes: usize, separation: f64, seed: u64) -> Dataset<T> {
    assert!(classes >= 1 && n >= 2 * classes && d >= 1);
    let mut rng = stream(seed, Purpose::Synthetic, &[n as u64, d as u64, classes as u64]);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); separation * z }).collect::<Vec<f64>>())
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let features = Matrix::from_fn(n, d, |i, j| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        T::of(centres[labels[i]][j] + noise)
    });
    let (train, test) = stratified_split(&labels, classes, 0.5, seed);
    Dataset::new(format!("blobs{classes}x{d}"), features, labels, classes, train, test)
        .expect("synthetic construction satisfies the dataset invariants")
}
