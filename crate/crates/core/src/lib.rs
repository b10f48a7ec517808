//! Multimodal image classification with four fusion strategies.
//!
//! * per-modality single networks,
//! * early fusion (channel concatenation, one head),
//! * late fusion (one network per modality, averaged probabilities),
//! * multi-modal multi-input multi-output (MM-MIMO) networks, optionally
//!   distilled from late-fusion teachers.
//!
//! The crate is organised by subsystem: [`data`] (datasets, batches, folds),
//! [`backbones`] (networks and complexity accounting), [`fusion`] (forward and
//! prediction contracts), [`losses`], [`train`] and [`eval`].

pub mod backbones;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod losses;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
