//! Video salient object detection by adapting a still-image saliency model.
//!
//! The pieces, in pipeline order: dense optical flow between consecutive
//! frames ([`flow`]), color coding of the flow so a color model can ingest
//! motion ([`coding`]), a from-scratch convolutional saliency network
//! ([`net`]), adaptation of a color model into a motion model ([`adapt`]),
//! multiplicative fusion and consistency-scored keyframe selection
//! ([`fusion`]), per-sequence online fine-tuning of a twin color model
//! against keyframe pseudo ground truth ([`online`]), and the usual
//! F-measure/MAE evaluation protocol ([`eval`]). The [`pipeline`] module
//! wires the stages together over a working directory; [`synth`] generates
//! the seeded synthetic clips used for desk-scale training and verification.
//!
//! With the default `parallel` feature, data-parallel loops (frame batches,
//! pixel rows, channel blocks) run on rayon; without it they degrade to
//! plain sequential loops. Both produce bitwise-identical results.

pub mod adapt;
pub mod coding;
pub mod config;
pub mod contrast;
pub mod error;
pub mod eval;
pub mod flow;
pub mod fusion;
pub mod image;
pub mod net;
pub mod online;
pub(crate) mod par;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
