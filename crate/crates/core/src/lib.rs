//! Non-neural pipeline for color-space HoVer nuclei segmentation.
//!
//! The crate covers dataset I/O, CLAHE and multi-color-space channel stacking,
//! seeded augmentation, HoVer target generation and watershed
//! post-processing, panoptic-quality evaluation, the loss kernels used for
//! training, and a sharpness-aware minimization optimizer.
//!
//! Real-valued code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root pin the common instantiations.

pub mod augment;
pub mod batch;
mod border;
pub mod error;
pub mod gradcheck;
pub mod hover;
pub mod losses;
pub mod metrics;
pub mod npy;
pub mod preprocess;
pub mod raster;
pub mod sam;
pub mod scalar;

pub use error::{Error, Result};
pub use raster::{ClassMap, HoVerMaps, Image, InstanceMap, NucleusClass, Plane};
pub use scalar::Real;

pub type ImageU8 = Image<u8>;
pub type ImageF64 = Image<f64>;
pub type HoVerMaps32 = HoVerMaps<f32>;
pub type HoVerMaps64 = HoVerMaps<f64>;
pub type PredictionMaps32 = hover::PredictionMaps<f32>;
pub type PredictionMaps64 = hover::PredictionMaps<f64>;
