//! Frame-level feature aggregation with non-local (NL) and hierarchical
//! group-wise non-local (HG-NL) attention.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds a small dense tensor type, the grouped convolution and
//!   grouped matrix-multiplication kernels, their hand-written adjoints, and
//!   an optional scalar-operation counter.
//! * [`aggregator`] builds the NL / HG-NL modules (plus average and max
//!   pooling baselines) on top of those kernels.
//! * [`cost`] is the closed-form parameter and multiply-add calculator.
//! * [`pipeline`] is a toy video-classification harness: synthetic frame
//!   features, segment sampling, a linear head, SGD and evaluation.
//! * [`container`] is the on-disk format shared by parameters, checkpoints
//!   and datasets.
//!
//! With the default `parallel` feature, per-sample work in training and
//! evaluation is spread over a rayon pool; see [`exec::Execution`].

pub mod aggregator;
pub mod container;
pub mod cost;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod pipeline;
pub mod tensor;

pub use aggregator::{AggregatorConfig, AggregatorKind, AggregatorParams};
pub use error::{Error, Result};
pub use exec::Execution;
pub use tensor::{OpCounter, Tensor};
