//! Dynamic sparse training for stacked-LSTM language models.
//!
//! The crate keeps a fixed parameter budget throughout training: every
//! 2-D weight matrix is a [`SparseTensor`] (dense values plus a binary
//! mask), and once per epoch the connectivity is rewired by removing
//! small-magnitude weights and growing the same number elsewhere. Inside
//! each LSTM layer, removal is joint across the gate blocks while growth
//! is uniform per block, so parameters migrate toward gates that carry
//! larger weights.
//!
//! Training uses a sparse-aware variant of non-monotonically triggered
//! averaged SGD ([`optim`]): each weight's running average restarts at the
//! iteration it was last grown, and masked weights average to zero.
//!
//! Modules:
//! - [`sparse_tensor`]: masked tensors, removal and growth primitives.
//! - [`model`]: the LSTM language model with hand-written BPTT.
//! - [`dst`]: per-epoch connectivity updates and sparse initialization.
//! - [`optim`]: SGD, momentum, Adam, NT-ASGD and SNT-ASGD.
//! - [`analysis`]: topology distance, FLOPs accounting, gate sparsity.
//! - [`train`]: corpus handling, the training loop, checkpoints, presets.
//!
//! With the default `parallel` feature the dense kernels and independent
//! runs use rayon; without it everything runs on the calling thread. Both
//! paths produce bitwise-identical results.

pub mod analysis;
pub mod dst;
pub mod error;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod sparse_tensor;
pub mod train;

pub use error::{Error, Result};
pub use sparse_tensor::{Coordinate, SparseTensor};
