//! Randomized hidden layer and the two readouts trained on top of it.

mod classifier;
mod encoder;

pub use classifier::{
    evaluate, train, train_centroids, train_rls, CentroidFit, RidgeSystem, ClassifierKind, ClassifierMatrix,
};
pub use encoder::{make_feature_keys, thermometer_encode, Encoder, HiddenBatch, KAPPA_GRID};

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::scalar::Real;
use crate::wire::{to_u32, Reader, WireError, Writer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("regularization must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("classifier contains non-finite weights")]
    NonFinite,
    #[error("numerical failure: {0}")]
    Numerical(#[from] LinalgError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

const MODEL_MAGIC: &[u8; 4] = b"RVFL";
const MODEL_VERSION: u16 = 1;

/// Header (`RVFL`, version u16, kind u8, L u32, H u32) followed by the weights
/// as row-major little-endian `f64`.
pub fn serialize_classifier<T: Real>(w: &ClassifierMatrix<T>) -> Vec<u8> {
    let (l, h) = w.weights().shape();
    Writer::new(MODEL_MAGIC, MODEL_VERSION, 9 + 8 * l * h)
        .u8(w.kind().code())
        .u32(to_u32(l, "L"))
        .u32(to_u32(h, "H"))
        .f64s(w.weights().as_slice().iter().map(|v| v.to_f64_lossless()))
        .finish()
}

pub fn deserialize_classifier<T: Real>(bytes: &[u8]) -> Result<ClassifierMatrix<T>, ModelError> {
    let mut r = Reader::open(bytes, MODEL_MAGIC, MODEL_VERSION)?;
    let code = r.u8()?;
    let kind =
        ClassifierKind::from_code(code).ok_or_else(|| WireError::InvalidField(format!("classifier kind {code}")))?;
    let l = r.u32()? as usize;
    let h = r.u32()? as usize;
    let values = r.f64s(l * h)?;
    r.finish()?;
    let weights = crate::matrix::Matrix::from_vec(l, h, values.into_iter().map(T::of).collect());
    ClassifierMatrix::new(weights, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn header_layout() {
        let w = ClassifierMatrix::new(Matrix::from_vec(1, 2, vec![1.5f64, -2.0]), ClassifierKind::Centroid).unwrap();
        let bytes = serialize_classifier(&w);
        assert_eq!(&bytes[..4], b"RVFL");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..11], &1u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..23], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 16);
        assert_eq!(deserialize_classifier::<f64>(&bytes).unwrap(), w);
    }

    #[test]
    fn rejects_corrupt_payloads() {
        let w = ClassifierMatrix::new(Matrix::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]), ClassifierKind::Rls).unwrap();
        let bytes = serialize_classifier(&w);
        assert!(matches!(
            deserialize_classifier::<f64>(&bytes[..bytes.len() - 1]),
            Err(ModelError::Wire(WireError::Truncated { .. }))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_classifier::<f64>(&bad), Err(ModelError::Wire(WireError::BadMagic { .. }))));
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(deserialize_classifier::<f64>(&bad), Err(ModelError::Wire(WireError::InvalidField(_)))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(deserialize_classifier::<f64>(&long), Err(ModelError::Wire(WireError::TrailingBytes(1)))));
    }

    #[test]
    fn f32_weights_survive_the_f64_wire() {
        let w = ClassifierMatrix::new(Matrix::from_vec(1, 3, vec![0.1f32, -7.25, 1e-20]), ClassifierKind::Rls).unwrap();
        assert_eq!(deserialize_classifier::<f32>(&serialize_classifier(&w)).unwrap(), w);
    }
}
