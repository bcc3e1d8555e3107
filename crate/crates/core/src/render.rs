//! SDF-to-opacity conversion and volume rendering of normals.
//!
//! Consecutive samples `k, k+1` along a ray define one interval with opacity
//! `α_k = max((Φ(f_k) − Φ(f_{k+1})) / Φ(f_k), 0)` where `Φ(x) = σ(a·x)`. A ray
//! with `M` samples has `M − 1` intervals; interval `k` carries the raw spatial
//! gradient of its first sample as its normal.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::camera::{cast_cone, sample_cone_midpoints, Camera, ConeSample, Vec3};
use crate::error::Result;
use crate::field::{FieldParams, Tape};

/// Floor on `Φ(f_k)` in the opacity denominator.
pub const ALPHA_DENOM_FLOOR: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Opacity of the interval between two consecutive SDF samples.
pub fn sdf_to_alpha(f_k: f64, f_next: f64, sharpness: f64) -> f64 {
    alpha_with_grad(f_k, f_next, sharpness).0
}

/// `(α, ∂α/∂f_k, ∂α/∂f_{k+1}, ∂α/∂a)`.
pub fn alpha_with_grad(f_k: f64, f_next: f64, a: f64) -> (f64, f64, f64, f64) {
    let p0 = sigmoid(a * f_k);
    let p1 = sigmoid(a * f_next);
    let denom = p0.max(ALPHA_DENOM_FLOOR);
    let alpha = (p0 - p1) / denom;
    if alpha <= 0.0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let (da_dp0, da_dp1) = if p0 > ALPHA_DENOM_FLOOR {
        (p1 / (p0 * p0), -1.0 / p0)
    } else {
        (1.0 / denom, -1.0 / denom)
    };
    let (s0, s1) = (p0 * (1.0 - p0), p1 * (1.0 - p1));
    (
        alpha.min(1.0),
        da_dp0 * a * s0,
        da_dp1 * a * s1,
        da_dp0 * f_k * s0 + da_dp1 * f_next * s1,
    )
}

/// Result of compositing one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Composite {
    pub normal: Vec3,
    pub opacity: f64,
    /// Transmittance before each interval.
    pub transmittance: Vec<f64>,
    /// `T_k · α_k`.
    pub weights: Vec<f64>,
}

/// Front-to-back compositing of per-interval opacities and normals.
pub fn composite_ray(alphas: &[f64], normals: &[Vec3]) -> Composite {
    debug_assert!(normals.len() >= alphas.len());
    let mut out = Composite {
        transmittance: Vec::with_capacity(alphas.len()),
        weights: Vec::with_capacity(alphas.len()),
        ..Default::default()
    };
    let mut t = 1.0;
    for (alpha, n) in alphas.iter().zip(normals) {
        let w = t * alpha;
        out.transmittance.push(t);
        out.weights.push(w);
        out.normal += n * w;
        out.opacity += w;
        t *= 1.0 - alpha;
    }
    out
}

/// Backpropagates `∂L/∂n̂` and `∂L/∂m̂` through [`composite_ray`], returning
/// `∂L/∂α_k` and `∂L/∂n_k`.
pub fn composite_backward(
    alphas: &[f64],
    normals: &[Vec3],
    composite: &Composite,
    d_normal: &Vec3,
    d_opacity: f64,
) -> (Vec<f64>, Vec<Vec3>) {
    let m = alphas.len();
    let mut d_alpha = vec![0.0; m];
    let mut d_normals = vec![Vec3::zeros(); m];
    // suffix = Σ_{j>k} α_j ω_j Π_{k<l<j} (1 − α_l), ω_j = ∂L/∂w_j
    let mut suffix = 0.0;
    for k in (0..m).rev() {
        let omega = d_normal.dot(&normals[k]) + d_opacity;
        d_alpha[k] = composite.transmittance[k] * (omega - suffix);
        d_normals[k] = d_normal * composite.weights[k];
        suffix = alphas[k] * omega + (1.0 - alphas[k]) * suffix;
    }
    (d_alpha, d_normals)
}

/// One ray: its samples and, for training, whether it is foreground and the
/// observed normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub samples: Vec<ConeSample>,
    pub normal: Vec3,
    pub mask: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBundle {
    pub rays: Vec<Ray>,
}

/// Forward state of one rendered ray, sufficient for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct RayTrace {
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    pub gradients: Vec<Vec3>,
    pub alphas: Vec<f64>,
    pub composite: Composite,
    pub tapes: Vec<Tape>,
}

impl RayTrace {
    pub fn normal(&self) -> Vec3 {
        self.composite.normal
    }

    pub fn opacity(&self) -> f64 {
        self.composite.opacity
    }

    /// Loss sensitivities of every sample's `f` and `∇ₚf`, and of the
    /// sharpness `a`, given `∂L/∂n̂` and `∂L/∂m̂`.
    pub fn sample_sensitivities(
        &self,
        sharpness: f64,
        d_normal: &Vec3,
        d_opacity: f64,
    ) -> (Vec<f64>, Vec<Vec3>, f64) {
        let m = self.f.len();
        let (d_alpha, d_norm) = composite_backward(
            &self.alphas,
            &self.gradients,
            &self.composite,
            d_normal,
            d_opacity,
        );
        let mut df = vec![0.0; m];
        let mut dgrad = vec![Vec3::zeros(); m];
        let mut da = 0.0;
        for k in 0..self.alphas.len() {
            dgrad[k] = d_norm[k];
            if d_alpha[k] == 0.0 {
                continue;
            }
            let (_, d0, d1, dsharp) = alpha_with_grad(self.f[k], self.f[k + 1], sharpness);
            df[k] += d_alpha[k] * d0;
            df[k + 1] += d_alpha[k] * d1;
            da += d_alpha[k] * dsharp;
        }
        (df, dgrad, da)
    }

    /// Plain-text weight profile, one row per sample: `t f alpha T w`. The last
    /// sample closes the final interval and has no opacity of its own.
    pub fn profile_table(&self) -> String {
        let mut out = String::from("# t f alpha T w\n");
        for k in 0..self.t.len() {
            let (alpha, trans, w) = if k < self.alphas.len() {
                (
                    self.alphas[k],
                    self.composite.transmittance[k],
                    self.composite.weights[k],
                )
            } else {
                (0.0, 1.0 - self.composite.opacity, 0.0)
            };
            let _ = writeln!(out, "{} {} {} {} {}", self.t[k], self.f[k], alpha, trans, w);
        }
        out
    }
}

/// Evaluates the field along one ray and composites it. The tapes are kept
/// only when `keep_tapes` is set.
pub fn trace_ray(params: &FieldParams, samples: &[ConeSample], keep_tapes: bool) -> Result<RayTrace> {
    let m = samples.len();
    let mut trace = RayTrace {
        t: Vec::with_capacity(m),
        f: Vec::with_capacity(m),
        gradients: Vec::with_capacity(m),
        ..Default::default()
    };
    let mut tape = Tape::default();
    for s in samples {
        params.record(&s.position, s.scale, &mut tape, true);
        params.finite_or_diagnose(&s.position, s.scale, &tape)?;
        trace.t.push(s.t);
        trace.f.push(tape.f);
        trace.gradients.push(tape.gradient);
        if keep_tapes {
            trace.tapes.push(tape.clone());
        }
    }
    let a = params.sharpness();
    trace.alphas = trace
        .f
        .windows(2)
        .map(|w| sdf_to_alpha(w[0], w[1], a))
        .collect();
    trace.composite = composite_ray(&trace.alphas, &trace.gradients);
    Ok(trace)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderOutput {
    pub normals: Vec<Vec3>,
    pub opacities: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

/// Renders every ray of the bundle in parallel; output order follows the bundle.
pub fn render_bundle(params: &FieldParams, bundle: &RayBundle) -> Result<RenderOutput> {
    let traces: Vec<RayTrace> = bundle
        .rays
        .par_iter()
        .map(|ray| trace_ray(params, &ray.samples, false))
        .collect::<Result<_>>()?;
    let mut out = RenderOutput::default();
    for t in traces {
        out.normals.push(t.composite.normal);
        out.opacities.push(t.composite.opacity);
        out.weights.push(t.composite.weights);
    }
    Ok(out)
}

/// Normals and opacity rendered for a whole view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub width: u32,
    pub height: u32,
    /// Pixel coordinates `(row, col)` in the source image of each output pixel.
    pub pixels: Vec<(u32, u32)>,
    pub normals: Vec<Vec3>,
    pub opacity: Vec<f64>,
}

/// Renders every `stride`-th pixel per axis of `camera` with `samples` stratum
/// midpoints per ray. Rays that miss the scene cube render as background.
pub fn render_view(
    params: &FieldParams,
    camera: &Camera,
    samples: usize,
    stride: u32,
    constant_scale: Option<f64>,
) -> Result<RenderedView> {
    let stride = stride.max(1);
    let rows: Vec<u32> = (0..camera.height).step_by(stride as usize).collect();
    let cols: Vec<u32> = (0..camera.width).step_by(stride as usize).collect();
    let per_row: Vec<Vec<(Vec3, f64)>> = rows
        .par_iter()
        .map(|&row| {
            cols.iter()
                .map(|&col| {
                    let cone = cast_cone(camera, row, col)?;
                    let Some((near, far)) = cone.scene_range() else {
                        return Ok((Vec3::zeros(), 0.0));
                    };
                    let mut s = sample_cone_midpoints(&cone, near, far, samples)?;
                    if let Some(c) = constant_scale {
                        s.iter_mut().for_each(|x| x.scale = c);
                    }
                    let trace = trace_ray(params, &s, false)?;
                    Ok((trace.normal(), trace.opacity()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = RenderedView {
        width: cols.len() as u32,
        height: rows.len() as u32,
        pixels: Vec::with_capacity(rows.len() * cols.len()),
        normals: Vec::with_capacity(rows.len() * cols.len()),
        opacity: Vec::with_capacity(rows.len() * cols.len()),
    };
    for (row, values) in rows.iter().zip(per_row) {
        for (col, (n, o)) in cols.iter().zip(values) {
            out.pixels.push((*row, *col));
            out.normals.push(n);
            out.opacity.push(o);
        }
    }
    Ok(out)
}
