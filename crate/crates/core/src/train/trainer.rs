//! The optimization loop.
//!
//! One step: sample pixels across all training views, cast and sample cones,
//! render with tapes (parallel over fixed ray chunks), evaluate the losses,
//! backpropagate chunk by chunk into private accumulators, merge them in chunk
//! order and take an Adam step. The merge order is fixed, so a seed fully
//! determines the loss trace.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::config::TrainConfig;
use super::losses::{csr_loss, eikonal_loss, mask_loss, normal_loss, LossTerms};
use crate::camera::{cast_cone, sample_cone, Vec3};
use crate::error::{Error, Result};
use crate::field::sweep::ScaleSweep;
use crate::field::{FieldGrads, FieldParams, GradSink, SparseGrads};
use crate::render::{trace_ray, Ray, RayTrace};
use crate::scene::{SceneDataset, Split};

const MAX_RESAMPLE: usize = 10_000;

/// Pixels of the training views, addressable by a single global index.
struct PixelPool {
    views: Vec<usize>,
    /// Running pixel totals; `offsets[i]` is the first index of view `i`.
    offsets: Vec<usize>,
    total: usize,
}

impl PixelPool {
    fn new(dataset: &SceneDataset) -> Result<Self> {
        let mut views = Vec::new();
        let mut offsets = Vec::new();
        let mut total = 0;
        for (i, v) in dataset.views.iter().enumerate() {
            if v.split == Split::Train {
                views.push(i);
                offsets.push(total);
                total += v.camera.pixel_count();
            }
        }
        if total == 0 {
            return Err(Error::Empty("dataset has no training pixels".into()));
        }
        Ok(PixelPool {
            views,
            offsets,
            total,
        })
    }

    /// `(view index, row, col)` of global pixel `g`.
    fn locate(&self, dataset: &SceneDataset, g: usize) -> (usize, u32, u32) {
        let slot = self.offsets.partition_point(|&o| o <= g) - 1;
        let view = self.views[slot];
        let local = g - self.offsets[slot];
        let width = dataset.views[view].camera.width as usize;
        (view, (local / width) as u32, (local % width) as u32)
    }
}

/// Stateful trainer; [`Trainer::step`] either completes a step or leaves the
/// parameters untouched.
pub struct Trainer<'a> {
    dataset: &'a SceneDataset,
    config: TrainConfig,
    params: FieldParams,
    adam: Adam,
    rng: ChaCha8Rng,
    pool: PixelPool,
    iteration: usize,
    grads: FieldGrads,
}

impl<'a> Trainer<'a> {
    /// Starts from the sphere initialization, with the scale range taken from
    /// the dataset when `auto_scale_range` is set.
    pub fn new(dataset: &'a SceneDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut field = config.field.clone();
        if config.auto_scale_range {
            let (lo, hi) = dataset.scale_range()?;
            field.scale_min = lo;
            field.scale_max = hi;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = FieldParams::geometric_init(&field, config.init_radius, &mut rng)?;
        if let Some(a) = config.initial_sharpness {
            params.set_sharpness(a);
        }
        Trainer::with_params(dataset, config, params, rng)
    }

    pub fn with_params(
        dataset: &'a SceneDataset,
        config: TrainConfig,
        params: FieldParams,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        params.check_finite()?;
        let pool = PixelPool::new(dataset)?;
        Ok(Trainer {
            dataset,
            adam: Adam::new(&params, config.adam_beta1, config.adam_beta2, config.adam_epsilon),
            grads: FieldGrads::zeros(&params),
            config,
            params,
            rng,
            pool,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn into_params(self) -> FieldParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn sample_rays(&mut self) -> Result<Vec<Ray>> {
        let mut rays = Vec::with_capacity(self.config.rays_per_batch);
        let mut attempts = 0;
        while rays.len() < self.config.rays_per_batch {
            attempts += 1;
            if attempts > MAX_RESAMPLE * self.config.rays_per_batch {
                return Err(Error::Empty("training rays keep missing the scene cube".into()));
            }
            let g = self.rng.random_range(0..self.pool.total);
            let (v, row, col) = self.pool.locate(self.dataset, g);
            let view = &self.dataset.views[v];
            let cone = cast_cone(&view.camera, row, col)?;
            let Some((near, far)) = cone.scene_range() else {
                continue;
            };
            let mut samples = sample_cone(&cone, near, far, self.config.samples_per_ray, &mut self.rng)?;
            if let Some(s) = self.config.constant_scale {
                samples.iter_mut().for_each(|x| x.scale = s);
            }
            rays.push(Ray {
                samples,
                normal: view.normals.get(row, col),
                mask: view.mask.get(row, col),
            });
        }
        Ok(rays)
    }

    /// Draws the rays and cross-scale probes of the next step.
    pub fn sample_batch(&mut self) -> Result<Batch> {
        let rays = self.sample_rays()?;
        let m = self.config.samples_per_ray;
        let pool = rays.len() * m;
        let k = self.config.csr_points.min(pool);
        let per_point = self.config.csr_scales;
        let picks = index::sample(&mut self.rng, pool, k).into_vec();
        let (smin, smax) = (self.params.config.scale_min, self.params.config.scale_max);
        let csr_scales = (0..k * per_point)
            .map(|_| if smax > smin { self.rng.random_range(smin..=smax) } else { smin })
            .collect();
        let csr_points = picks.iter().map(|&i| rays[i / m].samples[i % m].position).collect();
        Ok(Batch {
            rays,
            csr_points,
            csr_scales,
            scales_per_point: per_point,
        })
    }

    /// Runs one optimization step and returns the losses it minimized.
    pub fn step(&mut self) -> Result<LossTerms> {
        let batch = self.sample_batch()?;
        let iteration = self.iteration;
        let terms = loss_and_gradient(
            &self.params,
            &batch,
            self.config.lambda_csr,
            self.config.ray_chunk,
            &mut self.grads,
        )
        .map_err(|e| divergence(iteration, e))?;
        if self.config.freeze_triplane {
            self.grads.triplane.iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads.check_finite().map_err(|e| divergence(iteration, e))?;

        let lr = self.config.learning_rate_at(self.iteration);
        self.adam
            .step(&mut self.params, &self.grads, lr)
            .map_err(|e| divergence(iteration, e))?;
        self.iteration += 1;
        Ok(terms)
    }

    /// Runs the remaining iterations, calling `observer` after every step. The
    /// observer may stop training by returning an error.
    pub fn run(&mut self, mut observer: impl FnMut(&Trainer, &LossTerms) -> Result<()>) -> Result<Vec<LossTerms>> {
        let mut trace = Vec::with_capacity(self.config.iterations.saturating_sub(self.iteration));
        while self.iteration < self.config.iterations {
            let terms = self.step()?;
            trace.push(terms);
            observer(self, &terms)?;
        }
        Ok(trace)
    }
}

/// Numerical failures during a step are reported as divergence.
fn divergence(iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { what, detail } => Error::Diverged {
            iteration,
            detail: format!("{what}: {detail}"),
        },
        other => other,
    }
}

/// Rays and cross-scale probes for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rays: Vec<Ray>,
    pub csr_points: Vec<Vec3>,
    /// `scales_per_point` consecutive scales for each probe point.
    pub csr_scales: Vec<f64>,
    pub scales_per_point: usize,
}

/// Total loss of `batch` and its gradient, written into `grads`. Work is split
/// into chunks of `chunk` rays whose partial gradients are merged in order.
pub fn loss_and_gradient(
    params: &FieldParams,
    batch: &Batch,
    lambda: f64,
    chunk: usize,
    grads: &mut FieldGrads,
) -> Result<LossTerms> {
    let rays = &batch.rays;
    let traces: Vec<RayTrace> = rays
        .par_chunks(chunk)
        .map(|c| c.iter().map(|r| trace_ray(params, &r.samples, true)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let rendered: Vec<Vec3> = traces.iter().map(|t| t.normal()).collect();
    let opacity: Vec<f64> = traces.iter().map(|t| t.opacity()).collect();
    let truth: Vec<Vec3> = rays.iter().map(|r| r.normal).collect();
    let mask: Vec<bool> = rays.iter().map(|r| r.mask).collect();
    let all_grads: Vec<Vec3> = traces.iter().flat_map(|t| t.gradients.iter().copied()).collect();
    let offsets: Vec<usize> = traces
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.gradients.len();
            Some(o)
        })
        .collect();

    let normal = normal_loss(&rendered, &truth, &mask);
    let mask_l = mask_loss(&opacity, &mask);
    let eikonal = eikonal_loss(&all_grads);

    let per_point = batch.scales_per_point;
    let sweeps: Vec<ScaleSweep> = batch
        .csr_points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut sweep = ScaleSweep::default();
            params.scale_sweep(p, &batch.csr_scales[i * per_point..(i + 1) * per_point], &mut sweep);
            sweep
        })
        .collect();
    let csr_values: Vec<f64> = sweeps.iter().flat_map(|s| s.values.iter().copied()).collect();
    let csr = csr_loss(&csr_values, per_point);

    let terms = LossTerms::combine(normal.value, mask_l.value, eikonal.value, csr.value, lambda)?;

    let a = params.sharpness();
    let ray_parts: Vec<SparseGrads> = traces
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, part)| {
            let mut sink = SparseGrads::new(params);
            for (i, trace) in part.iter().enumerate() {
                let j = c * chunk + i;
                let (df, mut dgrad, da) = trace.sample_sensitivities(a, &normal.grad[j], mask_l.grad[j]);
                for (k, tape) in trace.tapes.iter().enumerate() {
                    dgrad[k] += eikonal.grad[offsets[j] + k];
                    params.backward(tape, df[k], &dgrad[k], &mut sink);
                }
                // a = exp(ρ)
                sink.add_log_sharpness(da * a);
            }
            sink
        })
        .collect();
    let csr_parts: Vec<SparseGrads> = if lambda > 0.0 {
        sweeps
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let mut sink = SparseGrads::new(params);
                for (i, sweep) in part.iter().enumerate() {
                    let p = c * chunk + i;
                    let df: Vec<f64> = csr.grad[p * per_point..(p + 1) * per_point]
                        .iter()
                        .map(|g| lambda * g)
                        .collect();
                    params.scale_sweep_backward(sweep, &df, &mut sink);
                }
                sink
            })
            .collect()
    } else {
        Vec::new()
    };

    grads.clear();
    for part in ray_parts.iter().chain(&csr_parts) {
        grads.absorb(part);
    }
    Ok(terms)
}
