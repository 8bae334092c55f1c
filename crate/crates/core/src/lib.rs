//! Speaker-embedding training and verification primitives.
//!
//! This crate is `no_std` (with `alloc`) and carries every numerical piece
//! of the pipeline: synthetic corpus generation, the log-mel frontend,
//! waveform augmentation, a Whisper-style encoder with a projection head and
//! hand-written reverse-mode gradients, batch-hard triplet and NT-Xent
//! losses, the Adam training step and the EER/AUC evaluation metrics.
//!
//! File formats, threading and the command-line interface live in the `wsi`
//! companion crate.
#![no_std]

extern crate alloc;

pub mod augment;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
