//! Classifier compression by key-value binding in a single hypervector.
//!
//! The `L × H` output matrix is flattened, zero-padded and cut into `R` value
//! vectors of length `D = ⌈HL/R⌉`. Each value is bound to its own random key
//! by circular convolution and the `R` bound pairs are superposed:
//!
//! ```text
//! w = Σ_i K_i ⊛ S_i
//! ```
//!
//! A receiver that can regenerate the sender's keys recovers each value as
//! `Ŝ_i = w ⊛ K_i⁻¹`, exact for `R = 1` and contaminated by crosstalk from
//! the other `R - 1` pairs otherwise.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{ClassifierKind, ClassifierMatrix, ModelError};
use crate::rng::{stream, Purpose};
use crate::scalar::Real;
use crate::wire::{to_u32, Reader, WireError, Writer};

#[derive(Debug, Error)]
pub enum HdcError {
    #[error("hypervector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("compression ratio {ratio} outside 1..={cells}")]
    InvalidRatio { ratio: usize, cells: usize },
    #[error("key set (R={key_ratio}, D={key_dim}) does not fit a classifier needing (R={ratio}, D={dim})")]
    KeyShapeMismatch { key_ratio: usize, key_dim: usize, ratio: usize, dim: usize },
    #[error("payload metadata disagrees with key set: {0}")]
    MetaMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Real-valued vector of length `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypervector<T>(Vec<T>);

impl<T: Real> Hypervector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Hypervector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Hypervector(vec![T::zero(); dim])
    }

    /// `[1, 0, …, 0]`, the identity of circular convolution.
    pub fn delta(dim: usize) -> Self {
        let mut v = vec![T::zero(); dim];
        if dim > 0 {
            v[0] = T::one();
        }
        Hypervector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn add(&self, other: &Self) -> Result<Self, HdcError> {
        check_len(self, other)?;
        Ok(Hypervector(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect()))
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Hypervector(self.0.iter().map(|&x| x * alpha).collect())
    }
}

fn check_len<T>(x: &Hypervector<T>, y: &Hypervector<T>) -> Result<(), HdcError> {
    if x.0.len() != y.0.len() {
        return Err(HdcError::LengthMismatch { left: x.0.len(), right: y.0.len() });
    }
    Ok(())
}

/// Planned forward/inverse transforms for one length.
#[derive(Clone)]
pub struct Convolver<T: Real> {
    dim: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Convolver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("dim", &self.dim).finish()
    }
}

impl<T: Real> Convolver<T> {
    pub fn new(dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        Convolver { dim, forward: planner.plan_fft_forward(dim), inverse: planner.plan_fft_inverse(dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spectrum(&self, x: &[T]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.dim);
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the normalized inverse transform.
    pub fn real_inverse(&self, mut spectrum: Vec<Complex<T>>) -> Vec<T> {
        assert_eq!(spectrum.len(), self.dim);
        self.inverse.process(&mut spectrum);
        let scale = T::one() / T::of_usize(self.dim);
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    pub fn convolve(&self, x: &Hypervector<T>, y: &Hypervector<T>) -> Result<Hypervector<T>, HdcError> {
        check_len(x, y)?;
        if x.dim() != self.dim {
            return Err(HdcError::LengthMismatch { left: x.dim(), right: self.dim });
        }
        let fx = self.spectrum(&x.0);
        let fy = self.spectrum(&y.0);
        let prod = fx.into_iter().zip(fy).map(|(a, b)| a * b).collect();
        Ok(Hypervector(self.real_inverse(prod)))
    }
}

/// `z_j = Σ_k y_k x_{(j-k) mod D}`, evaluated through the discrete Fourier transform.
pub fn circular_convolve<T: Real>(x: &Hypervector<T>, y: &Hypervector<T>) -> Result<Hypervector<T>, HdcError> {
    check_len(x, y)?;
    if x.dim() == 0 {
        return Ok(Hypervector(Vec::new()));
    }
    Convolver::new(x.dim()).convolve(x, y)
}

/// Index reversal `out_j = x_{(-j) mod D}`.
pub fn involution<T: Real>(x: &Hypervector<T>) -> Hypervector<T> {
    let d = x.dim();
    Hypervector((0..d).map(|j| x.0[(d - j) % d]).collect())
}

/// Number of hypervector components for compression ratio `R`: `⌈HL/R⌉`.
pub fn compute_dimension(hidden: usize, classes: usize, ratio: usize) -> usize {
    assert!(hidden > 0 && classes > 0 && ratio > 0, "H, L and R must be positive");
    (hidden * classes).div_ceil(ratio)
}

/// Row-major flatten of `w`, zero tail padding to `D·R`, column-major fill of a `D × R` matrix.
pub fn reshape_pad<T: Real>(w: &Matrix<T>, ratio: usize) -> Matrix<T> {
    let (l, h) = w.shape();
    let d = compute_dimension(h, l, ratio);
    let flat = w.as_slice();
    Matrix::from_fn(d, ratio, |row, col| flat.get(col * d + row).copied().unwrap_or_else(T::zero))
}

/// Inverse of [`reshape_pad`]: drops the padding and restores the `L × H` shape.
pub fn unreshape<T: Real>(s: &Matrix<T>, classes: usize, hidden: usize) -> Matrix<T> {
    let d = s.rows();
    assert!(d * s.cols() >= classes * hidden, "reshaped matrix too small");
    Matrix::from_fn(classes, hidden, |i, j| {
        let flat = i * hidden + j;
        s[(flat % d, flat / d)]
    })
}

/// How key hypervectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KeyKind {
    /// Unit-magnitude spectrum; the involution is the exact inverse.
    #[default]
    Unitary,
    /// I.i.d. `N(0, 1/D)` entries; the involution is only an approximate inverse.
    Gaussian,
}

/// The `R` keys of one agent, regenerated by any receiver from the derivation tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySet<T> {
    keys: Vec<Hypervector<T>>,
    master_seed: u64,
    agent_id: usize,
    dim: usize,
    kind: KeyKind,
}

impl<T: Real> KeySet<T> {
    pub fn keys(&self) -> &[Hypervector<T>] {
        &self.keys
    }

    pub fn ratio(&self) -> usize {
        self.keys.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn agent_id(&self) -> usize {
        self.agent_id
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }
}

/// Unitary keys for `(master_seed, agent_id, R, D)`.
pub fn derive_keys<T: Real>(master_seed: u64, agent_id: usize, ratio: usize, dim: usize) -> KeySet<T> {
    derive_keys_with(KeyKind::Unitary, master_seed, agent_id, ratio, dim)
}

pub fn derive_keys_with<T: Real>(
    kind: KeyKind,
    master_seed: u64,
    agent_id: usize,
    ratio: usize,
    dim: usize,
) -> KeySet<T> {
    assert!(ratio >= 1 && dim >= 1, "key sets need R >= 1 and D >= 1");
    let convolver = Convolver::<T>::new(dim);
    let keys = (0..ratio)
        .map(|i| {
            let mut rng = stream(master_seed, Purpose::HdcKeys, &[agent_id as u64, i as u64, dim as u64]);
            match kind {
                KeyKind::Unitary => unitary_key(&convolver, &mut rng),
                KeyKind::Gaussian => gaussian_key(dim, &mut rng),
            }
        })
        .collect();
    KeySet { keys, master_seed, agent_id, dim, kind }
}

fn unitary_key<T: Real, R: Rng>(convolver: &Convolver<T>, rng: &mut R) -> Hypervector<T> {
    let d = convolver.dim();
    let sign = |rng: &mut R| if rng.gen::<bool>() { T::one() } else { -T::one() };
    let mut spectrum = vec![Complex::new(T::zero(), T::zero()); d];
    spectrum[0] = Complex::new(sign(rng), T::zero());
    if d % 2 == 0 {
        spectrum[d / 2] = Complex::new(sign(rng), T::zero());
    }
    for k in 1..d.div_ceil(2) {
        let phase = T::of(rng.gen::<f64>() * TAU);
        let c = Complex::new(phase.cos(), phase.sin());
        spectrum[k] = c;
        spectrum[d - k] = c.conj();
    }
    Hypervector(convolver.real_inverse(spectrum))
}

fn gaussian_key<T: Real, R: Rng>(dim: usize, rng: &mut R) -> Hypervector<T> {
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive standard deviation");
    Hypervector((0..dim).map(|_| T::of(normal.sample(rng))).collect())
}

/// Everything a receiver needs besides the sender's keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressedMeta {
    pub hidden: usize,
    pub classes: usize,
    pub ratio: usize,
    pub dim: usize,
    pub agent_id: usize,
}

/// A classifier superposed into one hypervector.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedClassifier<T> {
    w: Hypervector<T>,
    meta: CompressedMeta,
    kind: ClassifierKind,
}

impl<T: Real> CompressedClassifier<T> {
    /// Checks `D = ⌈HL/R⌉` and the payload length.
    pub fn new(w: Hypervector<T>, meta: CompressedMeta, kind: ClassifierKind) -> Result<Self, HdcError> {
        let cells = meta.hidden * meta.classes;
        if meta.ratio == 0 || meta.ratio > cells {
            return Err(HdcError::InvalidRatio { ratio: meta.ratio, cells });
        }
        let expected = compute_dimension(meta.hidden, meta.classes, meta.ratio);
        if meta.dim != expected {
            return Err(HdcError::MetaMismatch(format!("D = {} but ⌈HL/R⌉ = {expected}", meta.dim)));
        }
        if w.dim() != meta.dim {
            return Err(HdcError::LengthMismatch { left: w.dim(), right: meta.dim });
        }
        Ok(CompressedClassifier { w, meta, kind })
    }

    pub fn hypervector(&self) -> &Hypervector<T> {
        &self.w
    }

    pub fn meta(&self) -> &CompressedMeta {
        &self.meta
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    /// Wire size in bytes.
    pub fn encoded_len(&self) -> usize {
        HDC_HEADER_LEN + 8 * self.meta.dim
    }
}

/// `w = Σ_i K_i ⊛ S_i` with `S = reshape_pad(W, R)`.
pub fn compress<T: Real>(w: &ClassifierMatrix<T>, keys: &KeySet<T>) -> Result<CompressedClassifier<T>, HdcError> {
    let (l, h) = w.weights().shape();
    let ratio = keys.ratio();
    let cells = l * h;
    if ratio == 0 || ratio > cells {
        return Err(HdcError::InvalidRatio { ratio, cells });
    }
    let dim = compute_dimension(h, l, ratio);
    if keys.dim() != dim {
        return Err(HdcError::KeyShapeMismatch { key_ratio: ratio, key_dim: keys.dim(), ratio, dim });
    }
    let s = reshape_pad(w.weights(), ratio);
    let conv = Convolver::<T>::new(dim);
    let mut acc = vec![Complex::new(T::zero(), T::zero()); dim];
    for (i, key) in keys.keys().iter().enumerate() {
        let fk = conv.spectrum(key.as_slice());
        let fs = conv.spectrum(&s.column(i));
        for ((a, k), v) in acc.iter_mut().zip(fk).zip(fs) {
            *a = *a + k * v;
        }
    }
    let meta = CompressedMeta { hidden: h, classes: l, ratio, dim, agent_id: keys.agent_id() };
    CompressedClassifier::new(Hypervector(conv.real_inverse(acc)), meta, w.kind())
}

/// `Ŝ_i = w ⊛ involution(K_i)`, reshaped back to `L × H`.
pub fn decompress<T: Real>(c: &CompressedClassifier<T>, keys: &KeySet<T>) -> Result<ClassifierMatrix<T>, HdcError> {
    let meta = c.meta();
    if keys.ratio() != meta.ratio || keys.dim() != meta.dim || keys.agent_id() != meta.agent_id {
        return Err(HdcError::MetaMismatch(format!(
            "payload (agent {}, R={}, D={}) vs keys (agent {}, R={}, D={})",
            meta.agent_id,
            meta.ratio,
            meta.dim,
            keys.agent_id(),
            keys.ratio(),
            keys.dim()
        )));
    }
    let conv = Convolver::<T>::new(meta.dim);
    let fw = conv.spectrum(c.hypervector().as_slice());
    let mut s = Matrix::zeros(meta.dim, meta.ratio);
    for (i, key) in keys.keys().iter().enumerate() {
        let fk = conv.spectrum(involution(key).as_slice());
        let prod = fw.iter().zip(fk).map(|(&a, b)| a * b).collect();
        for (row, v) in conv.real_inverse(prod).into_iter().enumerate() {
            s[(row, i)] = v;
        }
    }
    Ok(ClassifierMatrix::new(unreshape(&s, meta.classes, meta.hidden), c.kind())?)
}

const HDC_MAGIC: &[u8; 4] = b"HDCW";
const HDC_VERSION: u16 = 1;
const HDC_HEADER_LEN: usize = 4 + 2 + 5 * 4;

/// `HDCW`, version u16, agent_id, H, L, R, D as u32, then `D` little-endian `f64`.
pub fn encode_compressed<T: Real>(c: &CompressedClassifier<T>) -> Vec<u8> {
    let m = c.meta();
    Writer::new(HDC_MAGIC, HDC_VERSION, c.encoded_len())
        .u32(to_u32(m.agent_id, "agent_id"))
        .u32(to_u32(m.hidden, "H"))
        .u32(to_u32(m.classes, "L"))
        .u32(to_u32(m.ratio, "R"))
        .u32(to_u32(m.dim, "D"))
        .f64s(c.hypervector().as_slice().iter().map(|v| v.to_f64_lossless()))
        .finish()
}

/// Parses an `HDCW` payload. The classifier kind is not on the wire; receivers
/// know it from the shared round configuration.
pub fn decode_compressed<T: Real>(bytes: &[u8], kind: ClassifierKind) -> Result<CompressedClassifier<T>, HdcError> {
    let mut r = Reader::open(bytes, HDC_MAGIC, HDC_VERSION)?;
    let agent_id = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let ratio = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let values = r.f64s(dim)?;
    r.finish()?;
    let w = Hypervector(values.into_iter().map(T::of).collect());
    CompressedClassifier::new(w, CompressedMeta { hidden, classes, ratio, dim, agent_id }, kind)
}
