//! Federated differentiable architecture search and fairness-weighted
//! federated training of unrolled MR reconstruction networks, simulated
//! deterministically in a single process on synthetic phantoms.
//!
//! Layers, bottom up:
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation over dense tensors,
//!   with convolution, softmax, FFT and data-consistency primitives.
//! * [`search_space`]: candidate operations, mixed operations, the cell DAG
//!   and discretization.
//! * [`reconstructor`]: the unrolled denoise / data-consistency network.
//! * [`datasim`]: phantoms, masks, simulated k-space and dataset splits.
//! * [`federation`]: searcher and trainer rounds, aggregation and fairness
//!   weights.
//! * [`metrics`]: PSNR, SSIM, dispersion statistics and parameter counts.
//! * [`config`], [`checkpoint`], [`pipeline`], [`cli`]: configuration,
//!   the tensor container format and the command-line driver.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasim;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod pipeline;
pub mod reconstructor;
pub mod search_space;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
