//! Object-level adaptive visual-token compression.
//!
//! Patch features from a vision encoder are merged into one token per object
//! mask, so the token count follows the number of objects in the image
//! rather than a fixed budget. Around that core the crate provides:
//!
//! - [`tensor_io`]: the `ATSR` tensor container and mask confidence sidecars
//! - [`mask_pipeline`]: grid-prompt selection, confidence filtering, IoU dedup
//! - [`object_merge`]: masked average merging (reference and fast paths)
//! - [`cost_model`]: prefill cost, compression benefit, bandwidth accounting
//! - [`baselines`]: patch-level strategies and a retention-error proxy
//! - [`token_wire`]: the `ATOK` frame format and a framed TCP transport
//! - [`fixtures`]: deterministic synthetic inputs
//! - [`cli`]: the `adatok` command line

pub mod baselines;
pub mod cli;
pub mod cost_model;
pub mod error;
pub mod fixtures;
pub mod mask_pipeline;
pub mod object_merge;
pub mod tensor_io;
pub mod token_wire;

pub use error::{Error, Result};
