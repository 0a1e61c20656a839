//! File formats, command line and HTTP service around [`fvsrn_core`].

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod imageio;
pub mod service;
pub mod vraw;

pub use error::{Error, Result};
pub use fvsrn_core as core;
