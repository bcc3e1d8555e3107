//! Losses, configuration and the optimization loop.

pub mod adam;
pub mod config;
pub mod losses;
pub mod trainer;

pub use config::TrainConfig;
pub use losses::LossTerms;
pub use trainer::{loss_and_gradient, Batch, Trainer};
