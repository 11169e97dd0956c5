//! Scene-gated social-graph (SGSG) pedestrian trajectory forecasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a define-by-run reverse-mode tape, layers and Adam.
//! * [`dataset`]: ETH/UCY-style annotation parsing, windows, normalisation,
//!   rotation augmentation and leave-one-out splits.
//! * [`social_graph`]: per-POI dynamic star graphs, mean-aggregation graph
//!   convolution and the social LSTM.
//! * [`scene`]: semantic rasters, the scene CNN and the gating merge.
//! * [`model`]: the full encoder / VAE / decoder network and its loss.
//! * [`harness`]: metrics, training, evaluation, cost accounting and config.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod scene;
pub mod social_graph;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

/// Observed steps per window (3.2 s at 0.4 s per step).
pub const T_OBS: usize = 8;
/// Predicted steps per window (4.8 s).
pub const T_PRED: usize = 12;
/// Hidden width of the trajectory and social encoders, and of the scene feature.
pub const ENC_HIDDEN: usize = 32;
/// Hidden width of the trajectory decoder.
pub const DEC_HIDDEN: usize = 64;
/// Width of the location embedding.
pub const EMBED_DIM: usize = 32;
/// Width of the latent variable.
pub const LATENT_DIM: usize = 8;

/// A 2-D location.
pub type Point = [f64; 2];
