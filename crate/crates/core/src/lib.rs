//! Expressive voice conversion with discrete-unit prosody modeling.
//!
//! The pipeline extracts mel, F0 and content features from speech, maps mel
//! frames to pairs of product-quantizer indices, encodes those indices into
//! 4-dimensional frame-level prosody vectors, filters the prosody by
//! downsample-upsample (fixed-rate block selection or alignment-aware
//! recurrent pooling) and decodes mel autoregressively from content, prosody
//! and a speaker embedding.

mod binio;

pub mod alignment;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prosody;
pub mod quantizer;
pub mod synth;
pub mod toy;
pub mod vocoder;

pub use error::{Error, Result};
