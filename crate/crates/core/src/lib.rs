//! Segment-then-restore toolkit for turbulence-degraded video.
//!
//! The crate covers the whole chain: global stabilization, dense optical flow
//! and motion segmentation, turbulence-strength estimation, adaptive temporal
//! stacking with foreground compositing, classical sharpening, a procedural
//! tilt-and-blur turbulence simulator, and evaluation metrics.

pub mod error;
pub mod fft2d;
pub mod flow;
pub mod flowcache;
pub mod imgproc;
pub mod metrics;
pub mod pipeline;
pub mod segment;
pub mod simulate;
pub mod stackblend;
pub mod stabilize;
pub mod turbstats;
pub mod videocore;

pub use error::{Error, Result};
