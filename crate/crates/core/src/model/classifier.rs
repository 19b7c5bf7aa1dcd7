//! Readout training (ridge regression and class centroids), prediction and accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, HiddenBatch};
use super::ModelError;
use crate::dataset::Dataset;
use crate::linalg::Cholesky;
use crate::matrix::{dot, Matrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Rls,
    Centroid,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::Rls, ClassifierKind::Centroid];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Rls => "rls",
            ClassifierKind::Centroid => "centroid",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ClassifierKind::Rls => 0,
            ClassifierKind::Centroid => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ClassifierKind::Rls),
            1 => Some(ClassifierKind::Centroid),
            _ => None,
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rls" => Ok(ClassifierKind::Rls),
            "centroid" | "centroids" => Ok(ClassifierKind::Centroid),
            other => Err(format!("unknown classifier kind `{other}`")),
        }
    }
}

/// Output weights `W^out`, `L × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMatrix<T> {
    weights: Matrix<T>,
    kind: ClassifierKind,
}

impl<T: Real> ClassifierMatrix<T> {
    pub fn new(weights: Matrix<T>, kind: ClassifierKind) -> Result<Self, ModelError> {
        if !weights.is_finite() {
            return Err(ModelError::NonFinite);
        }
        Ok(ClassifierMatrix { weights, kind })
    }

    pub fn zeros(classes: usize, hidden: usize, kind: ClassifierKind) -> Self {
        ClassifierMatrix { weights: Matrix::zeros(classes, hidden), kind }
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn into_weights(self) -> Matrix<T> {
        self.weights
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.cols()
    }

    /// Class scores for one activation vector.
    pub fn scores(&self, h: &[T]) -> Vec<T> {
        match self.kind {
            ClassifierKind::Rls => self.weights.matvec(h),
            ClassifierKind::Centroid => {
                let hn = dot(h, h).sqrt();
                (0..self.num_classes())
                    .map(|c| {
                        let row = self.weights.row(c);
                        let denom = dot(row, row).sqrt() * hn;
                        if denom > T::zero() {
                            dot(row, h) / denom
                        } else {
                            T::zero()
                        }
                    })
                    .collect()
            }
        }
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, h: &[T]) -> usize {
        argmax(&self.scores(h))
    }

    /// Fraction of rows in `hidden` predicted as `labels`.
    pub fn accuracy(&self, hidden: &HiddenBatch, labels: &[usize]) -> Result<f64, ModelError> {
        if hidden.is_empty() {
            return Err(ModelError::EmptyTestSet);
        }
        if hidden.len() != labels.len() {
            return Err(ModelError::ShapeMismatch { expected: hidden.len(), found: labels.len() });
        }
        if hidden.activations.cols() != self.hidden() {
            return Err(ModelError::ShapeMismatch { expected: self.hidden(), found: hidden.activations.cols() });
        }
        let correct = (0..hidden.len())
            .into_par_iter()
            .filter(|&i| {
                let h: Vec<T> = hidden.activations.row(i).iter().map(|&v| T::of(f64::from(v))).collect();
                self.predict(&h) == labels[i]
            })
            .count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Matrix<T>, ModelError> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(ModelError::LabelOutOfRange { label: bad, classes });
    }
    Ok(Matrix::from_fn(labels.len(), classes, |i, c| if labels[i] == c { T::one() } else { T::zero() }))
}

/// Ridge readout `W = Yᵀ H (HᵀH + λI)⁻¹` against 0/1 one-hot targets.
///
/// Solves whichever of the `H × H` primal or `n × n` dual systems is smaller;
/// both are symmetric positive definite for `λ > 0` and give the same `W`.
pub fn train_rls<T: Real>(
    hidden: &Matrix<T>,
    labels: &[usize],
    classes: usize,
    lambda: T,
) -> Result<ClassifierMatrix<T>, ModelError> {
    RidgeSystem::new(hidden, labels, classes)?.solve(lambda)
}

/// Gram matrix and right-hand side of a ridge problem, reusable across many λ.
#[derive(Debug, Clone)]
pub struct RidgeSystem<T> {
    gram: Matrix<T>,
    rhs: Matrix<T>,
    /// `Some(Hᵀ)` when the dual (`n × n`) system is used.
    dual_map: Option<Matrix<T>>,
}

impl<T: Real> RidgeSystem<T> {
    pub fn new(hidden: &Matrix<T>, labels: &[usize], classes: usize) -> Result<Self, ModelError> {
        let (n, h) = hidden.shape();
        if n == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        if labels.len() != n {
            return Err(ModelError::ShapeMismatch { expected: n, found: labels.len() });
        }
        let y = one_hot::<T>(labels, classes)?;
        Ok(if n >= h {
            let ht = hidden.transpose();
            RidgeSystem { gram: hidden.gram(), rhs: ht.matmul(&y), dual_map: None }
        } else {
            RidgeSystem { gram: hidden.outer_gram(), rhs: y, dual_map: Some(hidden.transpose()) }
        })
    }

    pub fn solve(&self, lambda: T) -> Result<ClassifierMatrix<T>, ModelError> {
        if !(lambda > T::zero()) {
            return Err(ModelError::InvalidLambda(lambda.to_f64_lossless()));
        }
        let mut a = self.gram.clone();
        for i in 0..a.rows() {
            a[(i, i)] = a[(i, i)] + lambda;
        }
        let x = Cholesky::factor(&a)?.solve(&self.rhs)?;
        let weights_t = match &self.dual_map {
            None => x,
            Some(ht) => ht.matmul(&x),
        };
        ClassifierMatrix::new(weights_t.transpose(), ClassifierKind::Rls)
    }
}

/// Centroid readout plus the classes that had no training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidFit<T> {
    pub classifier: ClassifierMatrix<T>,
    /// Classes left as zero rows.
    pub empty_classes: Vec<usize>,
}

/// Per-class mean activation. A class without samples keeps a zero row and is
/// reported in [`CentroidFit::empty_classes`].
pub fn train_centroids<T: Real>(
    hidden: &Matrix<T>,
    labels: &[usize],
    classes: usize,
) -> Result<CentroidFit<T>, ModelError> {
    let (n, h) = hidden.shape();
    if n == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if labels.len() != n {
        return Err(ModelError::ShapeMismatch { expected: n, found: labels.len() });
    }
    let mut sums = Matrix::zeros(classes, h);
    let mut counts = vec![0usize; classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(ModelError::LabelOutOfRange { label: l, classes });
        }
        counts[l] += 1;
        for (s, &v) in sums.row_mut(l).iter_mut().zip(hidden.row(i)) {
            *s = *s + v;
        }
    }
    let mut empty_classes = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            empty_classes.push(c);
            continue;
        }
        let denom = T::of_usize(count);
        for s in sums.row_mut(c) {
            *s = *s / denom;
        }
    }
    if !empty_classes.is_empty() {
        log::warn!("centroid classifier: no training samples for classes {empty_classes:?}");
    }
    Ok(CentroidFit { classifier: ClassifierMatrix::new(sums, ClassifierKind::Centroid)?, empty_classes })
}

/// Trains the requested readout on an encoded batch.
pub fn train<T: Real>(
    kind: ClassifierKind,
    hidden: &HiddenBatch,
    labels: &[usize],
    classes: usize,
    lambda: T,
) -> Result<ClassifierMatrix<T>, ModelError> {
    let h = hidden.to_real::<T>();
    match kind {
        ClassifierKind::Rls => train_rls(&h, labels, classes, lambda),
        ClassifierKind::Centroid => Ok(train_centroids(&h, labels, classes)?.classifier),
    }
}

/// Accuracy of `classifier` on the dataset rows in `rows`.
pub fn evaluate<T: Real>(
    classifier: &ClassifierMatrix<T>,
    encoder: &Encoder,
    ds: &Dataset<T>,
    rows: &[usize],
) -> Result<f64, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    let hidden = encoder.encode_rows(&ds.features, rows)?;
    classifier.accuracy(&hidden, &ds.labels_of(rows))
}
