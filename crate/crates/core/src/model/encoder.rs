//! Integer hidden-layer encoder: thermometer codes bound to per-feature bipolar
//! keys, superposed and clipped to `[-κ, κ]`.

use rand::Rng;
use rayon::prelude::*;

use super::ModelError;
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};
use crate::scalar::Real;

/// Shared random part of the network. Every agent builds the same encoder from
/// the same `(seed, d, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    hidden: usize,
    kappa: i32,
    seed: u64,
    /// `d × H`, entries in `{-1, +1}`.
    feature_keys: Matrix<i8>,
}

/// Kappa values searched by default.
pub const KAPPA_GRID: [i32; 4] = [1, 3, 7, 15];

/// I.i.d. uniform bipolar keys, one row per input feature.
pub fn make_feature_keys(features: usize, hidden: usize, seed: u64) -> Matrix<i8> {
    assert!(features >= 1 && hidden >= 1, "key matrix needs d >= 1 and H >= 1");
    let mut rng = stream(seed, Purpose::FeatureKeys, &[features as u64, hidden as u64]);
    Matrix::from_fn(features, hidden, |_, _| if rng.gen::<bool>() { 1 } else { -1 })
}

/// Number of leading `+1` components for `x`, `round-half-up(x·H)`.
fn thermometer_level<T: Real>(x: T, hidden: usize) -> Result<usize, ModelError> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(ModelError::OutOfRange(x.to_f64_lossless()));
    }
    let level = (x * T::of_usize(hidden) + T::of(0.5)).floor();
    Ok(level.to_usize().unwrap_or(0).min(hidden))
}

/// Bipolar thermometer code: the first `round(x·H)` components are `+1`, the rest `-1`.
pub fn thermometer_encode<T: Real>(x: T, hidden: usize) -> Result<Vec<i8>, ModelError> {
    let level = thermometer_level(x, hidden)?;
    Ok((0..hidden).map(|j| if j < level { 1 } else { -1 }).collect())
}

impl Encoder {
    pub fn new(features: usize, hidden: usize, kappa: i32, seed: u64) -> Self {
        assert!(kappa >= 1, "kappa must be positive");
        Encoder { hidden, kappa, seed, feature_keys: make_feature_keys(features, hidden, seed) }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn kappa(&self) -> i32 {
        self.kappa
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_features(&self) -> usize {
        self.feature_keys.rows()
    }

    pub fn feature_keys(&self) -> &Matrix<i8> {
        &self.feature_keys
    }

    /// Same keys, different clipping threshold.
    pub fn with_kappa(&self, kappa: i32) -> Self {
        assert!(kappa >= 1, "kappa must be positive");
        Encoder { kappa, ..self.clone() }
    }

    /// `Σ_i key_i ⊙ thermometer(x_i)` without clipping.
    pub fn superpose<T: Real>(&self, x: &[T]) -> Result<Vec<i32>, ModelError> {
        if x.len() != self.num_features() {
            return Err(ModelError::ShapeMismatch { expected: self.num_features(), found: x.len() });
        }
        let mut acc = vec![0i32; self.hidden];
        for (i, &xi) in x.iter().enumerate() {
            let level = thermometer_level(xi, self.hidden)?;
            let key = self.feature_keys.row(i);
            for (a, &k) in acc[..level].iter_mut().zip(&key[..level]) {
                *a += i32::from(k);
            }
            for (a, &k) in acc[level..].iter_mut().zip(&key[level..]) {
                *a -= i32::from(k);
            }
        }
        Ok(acc)
    }

    /// Hidden-layer activations of one sample, integers in `[-κ, κ]`.
    pub fn hidden_activations<T: Real>(&self, x: &[T]) -> Result<Vec<i32>, ModelError> {
        let mut h = self.superpose(x)?;
        clip_in_place(&mut h, self.kappa);
        Ok(h)
    }

    /// Encodes the listed dataset rows.
    pub fn encode_rows<T: Real>(&self, features: &Matrix<T>, rows: &[usize]) -> Result<HiddenBatch, ModelError> {
        let encoded: Result<Vec<Vec<i32>>, ModelError> =
            rows.par_iter().map(|&r| self.hidden_activations(features.row(r))).collect();
        let data = encoded?.concat();
        Ok(HiddenBatch { activations: Matrix::from_vec(rows.len(), self.hidden, data), kappa: self.kappa })
    }

    /// Unclipped superpositions of the listed rows, so several κ values can be
    /// derived from one pass.
    pub fn superpose_rows<T: Real>(&self, features: &Matrix<T>, rows: &[usize]) -> Result<Matrix<i32>, ModelError> {
        let encoded: Result<Vec<Vec<i32>>, ModelError> =
            rows.par_iter().map(|&r| self.superpose(features.row(r))).collect();
        Ok(Matrix::from_vec(rows.len(), self.hidden, encoded?.concat()))
    }
}

fn clip_in_place(h: &mut [i32], kappa: i32) {
    for v in h {
        *v = (*v).clamp(-kappa, kappa);
    }
}

/// Encoded samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBatch {
    /// `n × H`, every entry in `[-κ, κ]`.
    pub activations: Matrix<i32>,
    pub kappa: i32,
}

impl HiddenBatch {
    /// Clips a batch of raw superpositions.
    pub fn from_superposed(raw: &Matrix<i32>, kappa: i32) -> Self {
        HiddenBatch { activations: raw.map(|v| v.clamp(-kappa, kappa)), kappa }
    }

    pub fn len(&self) -> usize {
        self.activations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        HiddenBatch { activations: self.activations.select_rows(rows), kappa: self.kappa }
    }

    pub fn to_real<T: Real>(&self) -> Matrix<T> {
        self.activations.map(|v| T::of(f64::from(v)))
    }
}
