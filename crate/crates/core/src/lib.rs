//! Multi-layer convolutional sparse coding (ML-CSC) and multi-layer
//! convolutional dictionary learning (ML-CDL).
//!
//! The crate is organised bottom-up:
//!
//! * [`conv`] holds the multichannel convolution operators and their adjoints.
//! * [`model`] holds layer dictionaries, effective-dictionary composition and
//!   top-down inference.
//! * [`fista`] solves the convolutional LASSO for the deepest code.
//! * [`trainer`] runs the dictionary-learning loop.
//! * [`data`] loads PGM corpora and applies resizing and local contrast
//!   normalization.
//! * [`diagnostics`] summarises learned dictionaries and training curves.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conv;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fista;
pub mod model;
pub mod trainer;

pub use conv::{Plane, Tensor3};
pub use error::{Error, Result};
pub use fista::{FistaParams, FistaResult};
pub use model::{EffectiveDictionary, LayerDictionary, MlcscModel, SparseCode};
pub use trainer::{EpochMetrics, TrainingConfig, TrainingState};
