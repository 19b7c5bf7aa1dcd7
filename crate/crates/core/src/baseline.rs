//! Reference codecs the hypervector scheme is compared against: truncated SVD
//! of a square reshape, DEFLATE of the serialized matrix, and uniform
//! quantization.

use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::linalg::{low_rank_product, LinalgError, Svd};
use crate::matrix::Matrix;
use crate::model::{deserialize_classifier, serialize_classifier, ClassifierKind, ClassifierMatrix, ModelError};
use crate::scalar::Real;
use crate::wire::{to_u32, Reader, WireError, Writer};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("compression ratio must exceed 1, got {0}")]
    InvalidRatio(f64),
    #[error("singular value decomposition failed: {0}")]
    SvdFailure(#[from] LinalgError),
    #[error("payload shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt DEFLATE stream: {0}")]
    CorruptStream(String),
    #[error("quantization needs at least 2 levels, got {0}")]
    InvalidLevels(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

// ---------------------------------------------------------------------------
// truncated SVD

/// Side of the square reshape, `⌈√(HL)⌉`.
pub fn square_side(hidden: usize, classes: usize) -> usize {
    let cells = hidden * classes;
    let mut m = (cells as f64).sqrt().ceil() as usize;
    while m * m < cells {
        m += 1;
    }
    while m > 1 && (m - 1) * (m - 1) >= cells {
        m -= 1;
    }
    m
}

/// Number of retained components for a target ratio: each one costs `2M + 1`
/// stored values, and at least one is always kept.
pub fn svd_rank_for(hidden: usize, classes: usize, ratio: f64) -> usize {
    let m = square_side(hidden, classes);
    let budget = (hidden * classes) as f64 / (ratio * (2 * m + 1) as f64);
    (budget.floor() as usize).clamp(1, m)
}

/// Row-major flatten into an `M × M` matrix, zero tail padding.
pub fn square_reshape<T: Real>(w: &Matrix<T>) -> Matrix<T> {
    let (l, h) = w.shape();
    let m = square_side(h, l);
    let flat = w.as_slice();
    Matrix::from_fn(m, m, |i, j| flat.get(i * m + j).copied().unwrap_or_else(T::zero))
}

fn square_unreshape<T: Real>(s: &Matrix<T>, classes: usize, hidden: usize) -> Matrix<T> {
    let flat = s.as_slice();
    Matrix::from_fn(classes, hidden, |i, j| flat[i * hidden + j])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvdMeta {
    pub hidden: usize,
    pub classes: usize,
    pub side: usize,
    pub rank: usize,
}

/// Leading `t` singular triples of the square reshape.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdPayload<T> {
    /// `M × t`.
    pub u: Matrix<T>,
    /// Descending, non-negative, length `t`.
    pub sigma: Vec<T>,
    /// `M × t`.
    pub v: Matrix<T>,
    pub meta: SvdMeta,
    pub kind: ClassifierKind,
}

impl<T: Real> SvdPayload<T> {
    /// Stored values, `t(2M + 1)`.
    pub fn value_count(&self) -> usize {
        self.meta.rank * (2 * self.meta.side + 1)
    }

    pub fn encoded_len(&self) -> usize {
        SVD_HEADER_LEN + 8 * self.value_count()
    }

    fn check(&self) -> Result<(), BaselineError> {
        let SvdMeta { hidden, classes, side, rank } = self.meta;
        if side != square_side(hidden, classes) {
            return Err(BaselineError::ShapeMismatch(format!("M = {side} for H·L = {}", hidden * classes)));
        }
        if rank > side || self.sigma.len() != rank {
            return Err(BaselineError::ShapeMismatch(format!("t = {rank} with {} singular values", self.sigma.len())));
        }
        if self.u.shape() != (side, rank) || self.v.shape() != (side, rank) {
            return Err(BaselineError::ShapeMismatch(format!(
                "U {:?} / V {:?}, expected {:?}",
                self.u.shape(),
                self.v.shape(),
                (side, rank)
            )));
        }
        if !self.u.is_finite() || !self.v.is_finite() {
            return Err(BaselineError::ShapeMismatch("non-finite singular vectors".into()));
        }
        if self.sigma.iter().any(|&s| !(s >= T::zero()) || !s.is_finite()) || self.sigma.windows(2).any(|w| w[0] < w[1]) {
            return Err(BaselineError::ShapeMismatch("singular values must be non-negative and descending".into()));
        }
        Ok(())
    }
}

/// Keeps as many components as the ratio allows (see [`svd_rank_for`]).
pub fn svd_compress<T: Real>(w: &ClassifierMatrix<T>, ratio: f64) -> Result<SvdPayload<T>, BaselineError> {
    if !(ratio > 1.0) {
        return Err(BaselineError::InvalidRatio(ratio));
    }
    svd_compress_rank(w, svd_rank_for(w.hidden(), w.num_classes(), ratio))
}

/// Keeps exactly `rank` components (clamped to `1..=M`).
pub fn svd_compress_rank<T: Real>(w: &ClassifierMatrix<T>, rank: usize) -> Result<SvdPayload<T>, BaselineError> {
    let (l, h) = w.weights().shape();
    let square = square_reshape(w.weights());
    let m = square.rows();
    let t = rank.clamp(1, m);
    let svd = Svd::compute(&square)?;
    let u = Matrix::from_fn(m, t, |i, k| svd.u[(i, k)]);
    let v = Matrix::from_fn(m, t, |i, k| svd.v[(i, k)]);
    Ok(SvdPayload {
        u,
        sigma: svd.sigma[..t].to_vec(),
        v,
        meta: SvdMeta { hidden: h, classes: l, side: m, rank: t },
        kind: w.kind(),
    })
}

/// `U_t diag(σ_t) V_tᵀ`, un-reshaped to `L × H`.
pub fn svd_decompress<T: Real>(p: &SvdPayload<T>) -> Result<ClassifierMatrix<T>, BaselineError> {
    p.check()?;
    let square = low_rank_product(&p.u, &p.sigma, &p.v);
    Ok(ClassifierMatrix::new(square_unreshape(&square, p.meta.classes, p.meta.hidden), p.kind)?)
}

const SVD_MAGIC: &[u8; 4] = b"SVDT";
const SVD_VERSION: u16 = 1;
const SVD_HEADER_LEN: usize = 4 + 2 + 4 * 4;

fn column_major<T: Real>(m: &Matrix<T>) -> impl Iterator<Item = f64> + '_ {
    (0..m.cols()).flat_map(move |j| (0..m.rows()).map(move |i| m[(i, j)].to_f64_lossless()))
}

/// `SVDT`, version u16, H, L, M, t as u32, then σ, U (column-major), V (column-major) as `f64`.
pub fn encode_svd<T: Real>(p: &SvdPayload<T>) -> Vec<u8> {
    let SvdMeta { hidden, classes, side, rank } = p.meta;
    Writer::new(SVD_MAGIC, SVD_VERSION, p.encoded_len())
        .u32(to_u32(hidden, "H"))
        .u32(to_u32(classes, "L"))
        .u32(to_u32(side, "M"))
        .u32(to_u32(rank, "t"))
        .f64s(p.sigma.iter().map(|s| s.to_f64_lossless()))
        .f64s(column_major(&p.u))
        .f64s(column_major(&p.v))
        .finish()
}

pub fn decode_svd<T: Real>(bytes: &[u8], kind: ClassifierKind) -> Result<SvdPayload<T>, BaselineError> {
    let mut r = Reader::open(bytes, SVD_MAGIC, SVD_VERSION)?;
    let hidden = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let side = r.u32()? as usize;
    let rank = r.u32()? as usize;
    let sigma: Vec<T> = r.f64s(rank)?.into_iter().map(T::of).collect();
    let read_cm = |r: &mut Reader| -> Result<Matrix<T>, WireError> {
        let vals = r.f64s(side * rank)?;
        Ok(Matrix::from_fn(side, rank, |i, j| T::of(vals[j * side + i])))
    };
    let u = read_cm(&mut r)?;
    let v = read_cm(&mut r)?;
    r.finish()?;
    let p = SvdPayload { u, sigma, v, meta: SvdMeta { hidden, classes, side, rank }, kind };
    p.check()?;
    Ok(p)
}

// ---------------------------------------------------------------------------
// DEFLATE

/// zlib-wrapped DEFLATE stream of a serialized classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BytePayload {
    pub data: Vec<u8>,
    pub original_len: usize,
}

impl BytePayload {
    /// Uncompressed over compressed size.
    pub fn ratio(&self) -> f64 {
        self.original_len as f64 / self.data.len() as f64
    }
}

/// Compresses arbitrary bytes at the maximum compression level.
pub fn deflate_bytes(bytes: &[u8]) -> BytePayload {
    let mut enc = ZlibEncoder::new(Vec::with_capacity(bytes.len() / 2 + 16), Compression::best());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    BytePayload { data: enc.finish().expect("writing to a Vec cannot fail"), original_len: bytes.len() }
}

pub fn inflate_bytes(p: &BytePayload) -> Result<Vec<u8>, BaselineError> {
    let mut out = Vec::with_capacity(p.original_len);
    ZlibDecoder::new(p.data.as_slice())
        .read_to_end(&mut out)
        .map_err(|e| BaselineError::CorruptStream(e.to_string()))?;
    if out.len() != p.original_len {
        return Err(BaselineError::CorruptStream(format!(
            "inflated {} bytes, expected {}",
            out.len(),
            p.original_len
        )));
    }
    Ok(out)
}

pub fn deflate_compress<T: Real>(w: &ClassifierMatrix<T>) -> BytePayload {
    deflate_bytes(&serialize_classifier(w))
}

pub fn deflate_decompress<T: Real>(p: &BytePayload) -> Result<ClassifierMatrix<T>, BaselineError> {
    Ok(deserialize_classifier(&inflate_bytes(p)?)?)
}

// ---------------------------------------------------------------------------
// quantization

/// Snaps every weight to the nearest of `levels` evenly spaced values between
/// the matrix minimum and maximum; exact midpoints go to the lower level.
pub fn quantize<T: Real>(w: &ClassifierMatrix<T>, levels: u64) -> Result<ClassifierMatrix<T>, BaselineError> {
    if levels < 2 {
        return Err(BaselineError::InvalidLevels(levels));
    }
    let vals = w.weights().as_slice();
    let (lo, hi) = vals.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if vals.is_empty() || !(hi > lo) {
        return Ok(w.clone());
    }
    let top = (levels - 1) as f64;
    let (lo64, hi64) = (lo.to_f64_lossless(), hi.to_f64_lossless());
    let step = (hi64 - lo64) / top;
    let q = w.weights().map(|v| {
        let u = (v.to_f64_lossless() - lo64) / step;
        let k = (u - 0.5).ceil().clamp(0.0, top);
        if k == top {
            hi
        } else {
            T::of(lo64 + k * step)
        }
    });
    Ok(ClassifierMatrix::new(q, w.kind())?)
}

/// `⌈log₂ Q⌉`.
pub fn bits_per_weight(levels: u64) -> u32 {
    assert!(levels >= 2);
    64 - (levels - 1).leading_zeros()
}
