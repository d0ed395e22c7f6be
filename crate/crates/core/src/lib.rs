//! Factorized transport alignment for multi-view, multimodal embeddings.
//!
//! Each listing carries several image views and several text views, with the
//! first view of each modality acting as the primary. The crate provides:
//!
//! - [`transport`]: couplings between view sets, an exact transport solver and
//!   the rank-one factorized coupling that fused similarity evaluates.
//! - [`fusion`]: primary-weighted fusion of a view set into one embedding.
//! - [`encoder`]: small trainable encoders with exact gradients.
//! - [`training`]: rolling-sampling contrastive training.
//! - [`index`]: offline fused-embedding index, exact k-NN and recall harnesses.
//! - [`datagen`]: seeded synthetic catalogs and interaction logs.
//!
//! The transport, fusion, encoder and loss math is generic over [`Scalar`]
//! (`f32` or `f64`); the data pipeline runs in `f64`.

// negated comparisons are deliberate so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod index;
pub mod scalar;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Embedding64 = fusion::Embedding<f64>;
pub type Embedding32 = fusion::Embedding<f32>;
pub type ViewSet64 = fusion::ViewSet<f64>;
pub type ViewSet32 = fusion::ViewSet<f32>;
pub type SimplexWeights64 = transport::SimplexWeights<f64>;
pub type SimplexWeights32 = transport::SimplexWeights<f32>;
pub type CostMatrix64 = transport::CostMatrix<f64>;
pub type CostMatrix32 = transport::CostMatrix<f32>;
pub type Coupling64 = transport::Coupling<f64>;
pub type Coupling32 = transport::Coupling<f32>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type Encoder64 = encoder::Encoder<f64>;
pub type EncoderPair64 = encoder::EncoderPair<f64>;
