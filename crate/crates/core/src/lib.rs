//! Desk-scale object-centric learning bench.
//!
//! A self-contained pipeline for unsupervised scene decomposition: a small
//! ViT feature encoder, slot attention, an MLP decoder with optional top-k
//! slot selection, the finetuning training recipe (frozen target encoder,
//! AdamW with blockwise learning-rate decay, cosine/exponential schedules,
//! EMA teacher, collapse detection, high-resolution adaptation), a
//! segmentation metric suite (ARI variants, mBO, panoptic quality), and a
//! deterministic synthetic scene generator with binary on-disk formats.

pub mod autodiff;
pub mod eval;
pub mod format;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;
pub mod parallel;
pub mod rng;
pub mod scene;

pub use autodiff::{Graph, PrimitiveOp, Tensor, TensorError, TensorId};
pub use image::ImageBuf;
pub use nn::{ParamSet, Session};
