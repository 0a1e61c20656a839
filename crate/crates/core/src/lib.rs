//! Compressive neural representation of 3D scalar volumes.
//!
//! A small fully-connected network plus a trainable volumetric latent grid
//! encodes a volume. The encoded field can be raymarched directly, either
//! through the reference layer-by-layer evaluator or through the
//! cache-resident blocked evaluator in [`fused`], and trained in world space
//! (position/value pairs) or screen space (images through a differentiable
//! raymarcher with constant-memory backpropagation).
//!
//! The crate is `#![no_std]` and only needs `alloc`. Enable the `std`
//! feature to route math through the platform library, and `parallel` to
//! spread rendering over a rayon pool.

#![cfg_attr(not(feature = "std"), no_std)]
// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod activation;
pub mod adam;
pub mod camera;
pub mod error;
pub mod fourier;
pub mod fused;
pub mod grid;
pub mod image;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod render;
pub mod synth;
pub mod tf;
pub mod train;
pub mod volume;

pub use error::{Error, Result};

/// Three-component vector used for positions, directions and colors.
pub type Vec3 = [f32; 3];
