//! File formats, threading and pipeline glue around `wsi-core`.
//!
//! The `wsi` binary is a thin argument layer over [`run`].

pub mod config;
pub mod error;
pub mod fft;
pub mod io;
pub mod par;
pub mod run;

pub use error::{Error, Result};
