//! Scale-aware multi-view normal integration.
//!
//! A signed distance field conditioned on a per-sample scale is fitted to
//! normal maps and masks by cone-based volume rendering, then meshed with a
//! per-region scale chosen from the learned scale features.

pub mod camera;
pub mod error;
pub mod field;
pub mod mesh;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
