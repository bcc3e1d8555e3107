//! Datasets, synthetic scene generation and evaluation.

pub mod dataset;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod synthetic;

pub use dataset::{Normalization, SceneDataset, Split, View, ViewTag};
pub use eval::{evaluate, EvalOptions, EvalReport};
pub use image::{Mask, NormalMap};
pub use synthetic::{generate_synthetic_scene, SceneSpec, Shape};
