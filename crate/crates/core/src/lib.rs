//! Video representation and compression with per-frame sets of 2D Gaussian
//! splats.
//!
//! Frames are fitted by gradient descent on an additive splat renderer,
//! predicted from their predecessor, pruned by a learned importance weight,
//! augmented with fresh splats for new content, and segmented by an
//! automatic key-frame selector. The fitted splats are quantized and
//! delta-coded into a `.gsv` bitstream.

pub mod bench;
pub mod codec;
pub mod dks;
pub mod error;
pub mod image;
pub mod lifecycle;
pub mod media;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod splat;

pub use crate::error::{BitstreamError, Error, Result};
pub use crate::image::Image;
pub use crate::splat::{FrameKind, Provenance, Splat, SplatFrame};
