//! Drone/satellite geo-localization core.
//!
//! Everything here is pure computation over in-memory buffers: the
//! histogram-based style alignment, the center/surround partition, a small
//! residual network with hand-written backward passes, the training losses,
//! and the retrieval metrics. File formats, image codecs and the command line
//! live in the `geoloc` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod gemm;
pub mod math;

pub mod data;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod retrieval;
pub mod style_align;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{PartitionSpec, RegionBox};
pub use image::RgbImage;
pub use style_align::{ChannelHistogram, ColorMapping, Lut};
pub use tensor::Tensor;
