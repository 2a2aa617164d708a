//! Two-stage rigid registration for large multimodal 3D volumes.
//!
//! Stage 1 aligns extracted bone-surface point clouds: a global
//! feature-matched RANSAC fit over FPFH descriptors, refined by
//! point-to-plane ICP. Stage 2 removes the remaining translation by
//! masked normalized cross-correlation over every integer shift,
//! evaluated in the Fourier domain. The crate also ships a synthetic
//! phantom generator and a landmark-based evaluation suite so the whole
//! pipeline can be exercised end to end without external data.

pub mod error;
pub mod evaluation;
pub mod fft;
pub mod fpfh;
pub mod icp;
pub mod kdtree;
pub mod mncc;
pub mod pipeline;
pub mod ransac;
pub mod surface;
pub mod synthetic;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
pub use transform::{Point3, RigidTransform};
pub use volume::{BinaryMask, Volume};
