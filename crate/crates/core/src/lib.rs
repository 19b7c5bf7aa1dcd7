//! Distributed classification with compressed classifier exchange.
//!
//! Agents encode inputs with a shared randomized hidden layer, train a local
//! readout (ridge regression or class centroids) and broadcast it through a
//! codec: hypervector superposition ([`hdc`]), truncated SVD, DEFLATE or no
//! compression ([`baseline`]). The [`sim`] module runs full rounds and the
//! [`experiment`] module drives sweeps and reports.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod baseline;
pub mod dataset;
pub mod experiment;
pub mod hdc;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod sim;
mod wire;

pub use scalar::Real;
pub use wire::WireError;

pub type Matrix64 = matrix::Matrix<f64>;
pub type Matrix32 = matrix::Matrix<f32>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type Dataset32 = dataset::Dataset<f32>;
pub type Classifier64 = model::ClassifierMatrix<f64>;
pub type Classifier32 = model::ClassifierMatrix<f32>;
pub type Hypervector64 = hdc::Hypervector<f64>;
pub type Hypervector32 = hdc::Hypervector<f32>;
