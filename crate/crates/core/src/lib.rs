//! Entity alignment between two knowledge graphs using jointly trained
//! Euclidean (graph attention) and hyperbolic (Poincaré-ball GCN) views.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the common choices.

pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod hypgeom;
pub mod inference;
pub mod kgdata;
pub mod losses;
pub mod scalar;
pub mod selftest;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF64 = diffcore::Tensor<f64>;
pub type TensorF32 = diffcore::Tensor<f32>;
pub type TapeF64 = diffcore::Tape<f64>;
pub type SparseMatrixF64 = diffcore::SparseMatrix<f64>;
pub type ModelParamsF64 = encoders::ModelParams<f64>;
pub type ModelParamsF32 = encoders::ModelParams<f32>;
pub type CheckpointF64 = trainer::Checkpoint<f64>;
pub type CheckpointF32 = trainer::Checkpoint<f32>;
pub type GraphTensorsF64 = kgdata::GraphTensors<f64>;
pub type CurvatureF64 = hypgeom::Curvature<f64>;
