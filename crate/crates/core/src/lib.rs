//! Warm-start toolkit for graph-based recommenders.
//!
//! Trains a degree-weighted bilinear model or a truncated-SVD baseline on
//! implicit feedback, then refreshes warm-user embeddings without retraining:
//! a closed-form linear update driven by a precomputed pseudo-inverse,
//! gradient descent on the same objective with mean mixing, zero / mean
//! fallbacks, spectral fold-in for the SVD model, an exact weighted
//! least-squares variant, and full retraining. Evaluation covers HR@k,
//! NDCG@k and coverage@k plus per-user latency and catalogue-scaling
//! benchmarks.
//!
//! Numeric kernels are generic over the scalar type ([`Scalar`]: `f32` or
//! `f64`). The pipeline instantiates `f64` for everything in memory; model
//! containers store embeddings as `f32` and promote on load.

// Index-style loops over matrix dimensions read better than iterator chains
// in the dense kernels.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod foldin;
pub mod linalg;
pub mod model;
pub mod persist;
pub mod rng;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases the pipeline works with.
pub type Mat64 = linalg::DenseMatrix<f64>;
pub type Svd64 = linalg::TruncatedSvd<f64>;
pub type PseudoInverse64 = linalg::PseudoInverse<f64>;
pub type Stats64 = data::GraphStats<f64>;
pub type Model64 = model::EmbeddingModel<f64>;
pub type TrainConfig64 = model::TrainConfig<f64>;
pub type Plan64 = foldin::FoldInPlan<f64>;
pub type Request64 = foldin::FoldInRequest<f64>;
pub type SgdFoldInConfig64 = foldin::SgdFoldInConfig<f64>;
pub type EvalConfig64 = eval::EvalConfig<f64>;

/// Single-precision variants for storage-bound callers.
pub type Mat32 = linalg::DenseMatrix<f32>;
pub type Model32 = model::EmbeddingModel<f32>;
