use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;

/// Training hyperparameters. Serialized as TOML; every key is optional and
/// falls back to the default below.
///
/// ```toml
/// iterations = 70000
/// rays_per_batch = 128
/// samples_per_ray = 32
/// learning_rate = 5e-3
/// final_learning_rate = 5e-4
/// lambda_csr = 4.0
/// csr_points = 4096
/// csr_scales = 128
/// seed = 0
///
/// [field]
/// hash_log2_table = 19
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub learning_rate: f64,
    /// Cosine decay reaches this rate at the last iteration.
    pub final_learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub lambda_csr: f64,
    pub csr_points: usize,
    pub csr_scales: usize,
    pub seed: u64,
    /// Radius of the sphere the field starts from.
    pub init_radius: f64,
    /// Initial opacity sharpness; `None` uses the field default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_sharpness: Option<f64>,
    /// Keep the scale-triplane at zero (scale-blind training).
    pub freeze_triplane: bool,
    /// Feed this scale to the field instead of each sample's own radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_scale: Option<f64>,
    /// Replace the field's scale range with the dataset's.
    pub auto_scale_range: bool,
    /// Rays per work unit; the gradient reduction order follows the units.
    pub ray_chunk: usize,
    /// Held-out evaluation cadence in iterations, 0 disables it.
    pub eval_every: usize,
    pub eval_samples_per_ray: usize,
    /// Render every `eval_stride`-th pixel per axis during evaluation.
    pub eval_stride: u32,
    /// Checkpoint cadence in iterations, 0 disables it.
    pub checkpoint_every: usize,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 70_000,
            rays_per_batch: 128,
            samples_per_ray: 32,
            learning_rate: 5e-3,
            final_learning_rate: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_epsilon: 1e-15,
            lambda_csr: 4.0,
            csr_points: 4096,
            csr_scales: 128,
            seed: 0,
            init_radius: 0.5,
            initial_sharpness: None,
            freeze_triplane: false,
            constant_scale: None,
            auto_scale_range: true,
            ray_chunk: 16,
            eval_every: 1000,
            eval_samples_per_ray: 64,
            eval_stride: 1,
            checkpoint_every: 10_000,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for CPU runs on low-resolution scenes: the compact field
    /// and a smaller cross-scale sample.
    pub fn desk() -> Self {
        TrainConfig {
            csr_points: 256,
            csr_scales: 16,
            field: FieldConfig::compact(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.rays_per_batch == 0 || self.samples_per_ray < 2 {
            return bad("need at least one ray and two samples per ray");
        }
        if self.csr_points == 0 || self.csr_scales == 0 || self.ray_chunk == 0 {
            return bad("csr_points, csr_scales and ray_chunk must be positive");
        }
        if !(self.lambda_csr >= 0.0 && self.lambda_csr.is_finite()) {
            return bad("lambda_csr must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if !(self.init_radius > 0.0 && self.init_radius < 1.0) {
            return bad("init_radius must lie in (0, 1)");
        }
        if let Some(a) = self.initial_sharpness {
            if !(a > 0.0 && a.is_finite()) {
                return bad("initial_sharpness must be positive");
            }
        }
        if let Some(s) = self.constant_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("constant_scale must be positive");
            }
        }
        if self.eval_samples_per_ray < 2 || self.eval_stride == 0 {
            return bad("eval_samples_per_ray >= 2 and eval_stride >= 1 required");
        }
        self.field.validate()
    }

    /// Cosine decay from `learning_rate` to `final_learning_rate`.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.learning_rate;
        }
        let x = (iteration as f64 / (self.iterations - 1) as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
        self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * cos
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses `text` with keys it omits taken from `base` instead of the
    /// defaults.
    pub fn from_toml_over(base: &TrainConfig, text: &str) -> Result<Self> {
        let config_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut merged: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| config_err(&e))?;
        let overrides: toml::Table = toml::from_str(text).map_err(|e| config_err(&e))?;
        merge_tables(&mut merged, overrides);
        TrainConfig::from_toml(&toml::to_string(&merged).map_err(|e| config_err(&e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn merge_tables(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge_tables(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
