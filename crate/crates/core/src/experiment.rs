//! Experiment orchestration: hyperparameter grid search, compression-ratio
//! sweeps, the quantization study and the results table they produce.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{bits_per_weight, quantize, BaselineError};
use crate::dataset::Dataset;
use crate::hdc::KeyKind;
use crate::model::{train_centroids, ClassifierKind, Encoder, HiddenBatch, ModelError, RidgeSystem, KAPPA_GRID};
use crate::rng::{derive_seed, stream, Purpose};
use crate::scalar::Real;
use crate::sim::{
    centralized_accuracy, run_round, small_model_baseline, train_centralized, Codec, CodecFamily, RoundConfig,
    SimError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("quantization needs at least 2 levels, got {0}")]
    InvalidLevels(u64),
    #[error("invalid experiment specification: {0}")]
    Spec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Config(String),
}

/// Selected hidden size, ridge strength and clipping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden: usize,
    pub lambda: f64,
    pub kappa: i32,
}

impl Hyperparams {
    pub fn round(&self, agents: usize, codec: Codec, kind: ClassifierKind, seed: u64) -> RoundConfig {
        RoundConfig { agents, codec, kind, hidden: self.hidden, kappa: self.kappa, lambda: self.lambda, seed }
    }
}

/// Hyperparameter grid. Defaults: `H ∈ {50, 100, …, 1500}`, `λ = 2^k` for
/// `k ∈ -10..=5`, `κ ∈ {1, 3, 7, 15}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub hidden: Vec<usize>,
    pub lambda: Vec<f64>,
    pub kappa: Vec<i32>,
    pub folds: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            hidden: (1..=30).map(|k| 50 * k).collect(),
            lambda: (-10..=5).map(|k| 2f64.powi(k)).collect(),
            kappa: KAPPA_GRID.to_vec(),
            folds: 5,
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.hidden.len() * self.lambda.len() * self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.is_empty() {
            return Err(ExperimentError::Spec("grid has no points".into()));
        }
        if self.hidden.contains(&0) || self.kappa.iter().any(|&k| k < 1) || self.lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(ExperimentError::Spec("grid values must be positive".into()));
        }
        if self.folds < 2 {
            return Err(ExperimentError::Spec("cross-validation needs at least 2 folds".into()));
        }
        Ok(())
    }
}

/// Ratios swept when none are given.
pub const DEFAULT_RATIOS: [usize; 9] = [2, 3, 4, 6, 8, 12, 16, 24, 32];
/// Quantization levels studied when none are given.
pub const DEFAULT_LEVELS: [u64; 8] = [3, 5, 9, 17, 33, 65, 129, 255];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub agents: Vec<usize>,
    pub ratios: Vec<usize>,
    /// Lossy codecs to sweep; `none` and `deflate` reference rows are always produced.
    pub codecs: Vec<CodecFamily>,
    pub kinds: Vec<ClassifierKind>,
    pub reps: usize,
    pub levels: Vec<u64>,
    pub keys: KeyKind,
    pub small_model: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            agents: vec![10, 100],
            ratios: DEFAULT_RATIOS.to_vec(),
            codecs: vec![CodecFamily::Hdc, CodecFamily::Svd],
            kinds: ClassifierKind::ALL.to_vec(),
            reps: 10,
            levels: DEFAULT_LEVELS.to_vec(),
            keys: KeyKind::Unitary,
            small_model: true,
        }
    }
}

/// Seed of repetition `rep`; it is also the `seed` column of every row the repetition produces.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, Purpose::Repetition, &[rep as u64])
}

// ---------------------------------------------------------------------------
// grid search

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub params: Hyperparams,
    pub cv_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    pub evaluated: Vec<GridPoint>,
}

/// Stratified assignment of the train split to `k` folds.
pub fn stratified_folds(labels: &[usize], rows: &[usize], classes: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, Purpose::CrossValidation, &[k as u64]);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = rows.iter().copied().filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            folds[(offset + j) % k].push(i);
        }
        // continue the round-robin so small classes do not all land in fold 0
        offset += rows.iter().filter(|&&i| labels[i] == c).count();
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// `true` when `a` beats `b`: higher CV accuracy, then smaller `H`, larger `λ`, smaller `κ`.
fn better(a: &GridPoint, b: &GridPoint) -> bool {
    use std::cmp::Ordering::*;
    let ord = b
        .cv_accuracy
        .partial_cmp(&a.cv_accuracy)
        .unwrap_or(Equal)
        .then(a.params.hidden.cmp(&b.params.hidden))
        .then(b.params.lambda.partial_cmp(&a.params.lambda).unwrap_or(Equal))
        .then(a.params.kappa.cmp(&b.params.kappa));
    ord == Less
}

/// Picks the grid point with the best mean k-fold accuracy of a centralized
/// RLS model on the train split.
pub fn grid_search<T: Real>(ds: &Dataset<T>, grid: &GridSpec, seed: u64) -> Result<GridResult, ExperimentError> {
    grid.validate()?;
    let k = grid.folds.min(ds.train.len());
    if k < 2 {
        return Err(ExperimentError::Spec("too few training samples for cross-validation".into()));
    }
    let folds: Vec<Vec<usize>> =
        stratified_folds(&ds.labels, &ds.train, ds.num_classes, k, seed).into_iter().filter(|f| !f.is_empty()).collect();
    let fold_of: BTreeMap<usize, usize> =
        folds.iter().enumerate().flat_map(|(f, rows)| rows.iter().map(move |&r| (r, f))).collect();
    let encoder_seed = derive_seed(seed, Purpose::FeatureKeys, &[]);

    let per_hidden: Vec<Vec<GridPoint>> = grid
        .hidden
        .par_iter()
        .map(|&hidden| -> Result<Vec<GridPoint>, ExperimentError> {
            let encoder = Encoder::new(ds.num_features(), hidden, 1, encoder_seed);
            let raw = encoder.superpose_rows(&ds.features, &ds.train)?;
            let mut points = Vec::new();
            for &kappa in &grid.kappa {
                let batch = HiddenBatch::from_superposed(&raw, kappa);
                let mut fold_acc = vec![vec![0.0; folds.len()]; grid.lambda.len()];
                for (f, val_rows) in folds.iter().enumerate() {
                    let (train_pos, val_pos): (Vec<usize>, Vec<usize>) =
                        (0..ds.train.len()).partition(|&p| fold_of[&ds.train[p]] != f);
                    debug_assert_eq!(val_pos.len(), val_rows.len());
                    let tr = batch.select(&train_pos);
                    let va = batch.select(&val_pos);
                    let tr_labels: Vec<usize> = train_pos.iter().map(|&p| ds.labels[ds.train[p]]).collect();
                    let va_labels: Vec<usize> = val_pos.iter().map(|&p| ds.labels[ds.train[p]]).collect();
                    let system = RidgeSystem::new(&tr.to_real::<T>(), &tr_labels, ds.num_classes)?;
                    for (li, &lambda) in grid.lambda.iter().enumerate() {
                        let w = system.solve(T::of(lambda))?;
                        fold_acc[li][f] = w.accuracy(&va, &va_labels)?;
                    }
                }
                for (li, &lambda) in grid.lambda.iter().enumerate() {
                    let cv_accuracy = fold_acc[li].iter().sum::<f64>() / folds.len() as f64;
                    points.push(GridPoint { params: Hyperparams { hidden, lambda, kappa }, cv_accuracy });
                }
            }
            Ok(points)
        })
        .collect::<Result<_, _>>()?;

    let evaluated: Vec<GridPoint> = per_hidden.into_iter().flatten().collect();
    let mut best = evaluated[0].clone();
    for p in &evaluated[1..] {
        if better(p, &best) {
            best = p.clone();
        }
    }
    Ok(GridResult { best, evaluated })
}

// ---------------------------------------------------------------------------
// results table

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    #[serde(rename = "N")]
    pub agents: usize,
    pub classifier_kind: ClassifierKind,
    /// `none`, `deflate`, `hdc`, `svd`, `small`, or `quant<Q>`.
    pub codec: String,
    /// Requested ratio for lossy codecs and small models, achieved ratio for
    /// `deflate`, 1 for `none`, the level count for `quant<Q>`.
    pub ratio_param: f64,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub per_agent_min: f64,
    pub per_agent_max: f64,
    pub payload_values_per_agent: f64,
    pub payload_bytes_per_agent: f64,
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// A sweep cell that failed; the sweep keeps going.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub agents: usize,
    pub kind: ClassifierKind,
    pub codec: String,
    pub ratio_param: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cell {
    Round(Codec),
    Small(usize),
}

/// Every `(N, kind, rep)` produces `none` and `deflate` reference rows plus,
/// per ratio, one row per lossy codec and one small-model row.
pub fn sweep_compression<T: Real>(
    ds: &Dataset<T>,
    params: &Hyperparams,
    sweep: &SweepSpec,
    master_seed: u64,
) -> Result<SweepOutcome, ExperimentError> {
    if sweep.reps == 0 {
        return Err(ExperimentError::Spec("repetitions must be at least 1".into()));
    }
    if sweep.agents.is_empty() || sweep.kinds.is_empty() {
        return Err(ExperimentError::Spec("sweep needs at least one agent count and classifier kind".into()));
    }
    let mut cells = Vec::new();
    for &agents in &sweep.agents {
        for &kind in &sweep.kinds {
            for rep in 0..sweep.reps {
                let seed = repetition_seed(master_seed, rep);
                cells.push((agents, kind, seed, Cell::Round(Codec::None)));
                cells.push((agents, kind, seed, Cell::Round(Codec::Deflate)));
                for &ratio in &sweep.ratios {
                    for fam in sweep.codecs.iter().filter(|f| f.is_lossy()) {
                        let codec = match fam.with_ratio(ratio) {
                            Codec::Hdc { ratio, .. } => Codec::Hdc { ratio, keys: sweep.keys },
                            other => other,
                        };
                        cells.push((agents, kind, seed, Cell::Round(codec)));
                    }
                    if sweep.small_model {
                        cells.push((agents, kind, seed, Cell::Small(ratio)));
                    }
                }
            }
        }
    }

    let results: Vec<Result<ResultRow, CellFailure>> = cells
        .par_iter()
        .map(|&(agents, kind, seed, cell)| {
            let cfg = params.round(agents, Codec::None, kind, seed);
            let (codec_name, ratio_param, outcome) = match cell {
                Cell::Round(codec) => {
                    let cfg = RoundConfig { codec, ..cfg };
                    (codec.name().to_string(), codec.ratio_param(), run_round(ds, &cfg))
                }
                Cell::Small(ratio) => ("small".to_string(), ratio as f64, small_model_baseline(ds, &cfg, ratio)),
            };
            match outcome {
                Ok(r) => Ok(ResultRow {
                    dataset: ds.name.clone(),
                    agents,
                    classifier_kind: kind,
                    ratio_param: if codec_name == "deflate" { r.stats.achieved_ratio } else { ratio_param },
                    codec: codec_name,
                    seed,
                    mean_accuracy: r.mean_accuracy,
                    per_agent_min: r.min_accuracy,
                    per_agent_max: r.max_accuracy,
                    payload_values_per_agent: r.stats.values_per_agent,
                    payload_bytes_per_agent: r.stats.bytes_per_agent,
                }),
                Err(e) => Err(CellFailure { agents, kind, codec: codec_name, ratio_param, seed, message: e.to_string() }),
            }
        })
        .collect();

    let mut outcome = SweepOutcome::default();
    for r in results {
        match r {
            Ok(row) => outcome.rows.push(row),
            Err(f) => {
                log::warn!("sweep cell N={} {} {}({}) seed {} failed: {}", f.agents, f.kind, f.codec, f.ratio_param, f.seed, f.message);
                outcome.failures.push(f);
            }
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// quantization

/// Centralized (`N = 1`) study: for every level count and repetition, train
/// both readouts, quantize the weights and evaluate. Also emits one
/// unquantized `none` row per kind holding the mean over repetitions (with the
/// per-repetition spread in the min/max columns and the master seed).
pub fn quantization_study<T: Real>(
    ds: &Dataset<T>,
    params: &Hyperparams,
    levels: &[u64],
    reps: usize,
    master_seed: u64,
) -> Result<Vec<ResultRow>, ExperimentError> {
    if let Some(&bad) = levels.iter().find(|&&q| q < 2) {
        return Err(ExperimentError::InvalidLevels(bad));
    }
    if reps == 0 {
        return Err(ExperimentError::Spec("repetitions must be at least 1".into()));
    }
    let jobs: Vec<(ClassifierKind, usize)> =
        ClassifierKind::ALL.iter().flat_map(|&k| (0..reps).map(move |r| (k, r))).collect();
    let per_job: Vec<(f64, Vec<ResultRow>)> = jobs
        .par_iter()
        .map(|&(kind, rep)| -> Result<(f64, Vec<ResultRow>), ExperimentError> {
            let seed = repetition_seed(master_seed, rep);
            let cfg = params.round(1, Codec::None, kind, seed);
            let (encoder, model) = train_centralized(ds, &cfg)?;
            let test = encoder.encode_rows(&ds.features, &ds.test)?;
            let labels = ds.labels_of(&ds.test);
            let baseline = model.accuracy(&test, &labels)?;
            let cells = model.weights().len();
            let rows = levels
                .iter()
                .map(|&q| {
                    let acc = quantize(&model, q)?.accuracy(&test, &labels)?;
                    let bytes = (cells as u64 * u64::from(bits_per_weight(q))).div_ceil(8) + 16;
                    Ok(ResultRow {
                        dataset: ds.name.clone(),
                        agents: 1,
                        classifier_kind: kind,
                        codec: format!("quant{q}"),
                        ratio_param: q as f64,
                        seed,
                        mean_accuracy: acc,
                        per_agent_min: acc,
                        per_agent_max: acc,
                        payload_values_per_agent: cells as f64,
                        payload_bytes_per_agent: bytes as f64,
                    })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            Ok((baseline, rows))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for kind in ClassifierKind::ALL {
        let accs: Vec<f64> =
            jobs.iter().zip(&per_job).filter(|((k, _), _)| *k == kind).map(|(_, (b, _))| *b).collect();
        let cells = (ds.num_classes * params.hidden) as f64;
        rows.push(ResultRow {
            dataset: ds.name.clone(),
            agents: 1,
            classifier_kind: kind,
            codec: "none".into(),
            ratio_param: 1.0,
            seed: master_seed,
            mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            per_agent_min: accs.iter().copied().fold(f64::INFINITY, f64::min),
            per_agent_max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            payload_values_per_agent: cells,
            payload_bytes_per_agent: 15.0 + 8.0 * cells,
        });
    }
    rows.extend(per_job.into_iter().flat_map(|(_, r)| r));
    Ok(rows)
}

/// Mean centralized test accuracy over repetitions, for comparison with distributed runs.
pub fn centralized_mean<T: Real>(
    ds: &Dataset<T>,
    params: &Hyperparams,
    kind: ClassifierKind,
    reps: usize,
    master_seed: u64,
) -> Result<f64, ExperimentError> {
    let accs = (0..reps)
        .into_par_iter()
        .map(|rep| centralized_accuracy(ds, &params.round(1, Codec::None, kind, repetition_seed(master_seed, rep))))
        .collect::<Result<Vec<f64>, SimError>>()?;
    Ok(accs.iter().sum::<f64>() / reps as f64)
}

/// Centroid readout with the empty-class report, exposed for diagnostics.
pub fn centroid_empty_classes<T: Real>(ds: &Dataset<T>, params: &Hyperparams, seed: u64) -> Result<Vec<usize>, ExperimentError> {
    let encoder = params.round(1, Codec::None, ClassifierKind::Centroid, seed).encoder(ds.num_features());
    let hidden = encoder.encode_rows(&ds.features, &ds.train)?;
    Ok(train_centroids(&hidden.to_real::<T>(), &ds.labels_of(&ds.train), ds.num_classes)?.empty_classes)
}

// ---------------------------------------------------------------------------
// config and hyperparameter cache

/// Structured configuration mirroring [`GridSpec`] and [`SweepSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub sweep: SweepSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Tuned hyperparameters per dataset name, persisted as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TunedCache {
    #[serde(default)]
    pub datasets: BTreeMap<String, Hyperparams>,
}

impl TunedCache {
    /// Missing files read as an empty cache.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        if !path.exists() {
            return Ok(TunedCache::default());
        }
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}
