//! Scale-conditioned signed distance field.
//!
//! `f(p, s) = MLP([p, hash(p), triplane(p, s)])`. The hash grid carries
//! spatial detail; the scale-triplane is the only path through which `s`
//! reaches the output. Besides the value, [`FieldParams::record`] produces the
//! exact spatial gradient `∇ₚf` (the rendered normal), and
//! [`FieldParams::backward`] propagates loss gradients through both `f` and
//! `∇ₚf` into every parameter.

pub mod checkpoint;
pub mod hash;
pub mod mlp;
pub mod sweep;
pub mod triplane;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Vec3;
use crate::error::{Error, Result};
use hash::{level_resolutions, Corners, HashGrid};
use mlp::Mlp;
use triplane::{PlaneCorners, ScaleTriplane};

/// Architecture of the field. [`FieldConfig::default`] is the full-size model
/// (28 hash + 24 triplane + 3 position = 55 inputs, 64 hidden units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub hash_levels: usize,
    pub hash_features: usize,
    pub hash_log2_table: u32,
    pub hash_base_resolution: usize,
    pub hash_finest_resolution: usize,
    pub plane_resolution: usize,
    pub plane_scale_bins: usize,
    pub plane_features: usize,
    pub hidden: usize,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            hash_levels: 14,
            hash_features: 2,
            hash_log2_table: 19,
            hash_base_resolution: 16,
            hash_finest_resolution: 2048,
            plane_resolution: 128,
            plane_scale_bins: 32,
            plane_features: 8,
            hidden: 64,
            scale_min: 1e-4,
            scale_max: 1e-2,
        }
    }
}

impl FieldConfig {
    /// Same widths as the default with smaller hash tables and a coarser finest
    /// level, sized for CPU training on low-resolution scenes.
    pub fn compact() -> Self {
        FieldConfig {
            hash_log2_table: 16,
            hash_finest_resolution: 512,
            ..FieldConfig::default()
        }
    }

    pub fn hash_width(&self) -> usize {
        self.hash_levels * self.hash_features
    }

    pub fn triplane_width(&self) -> usize {
        3 * self.plane_features
    }

    pub fn input_width(&self) -> usize {
        3 + self.hash_width() + self.triplane_width()
    }

    pub fn level_resolutions(&self) -> Vec<usize> {
        level_resolutions(
            self.hash_levels,
            self.hash_base_resolution,
            self.hash_finest_resolution,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hash_levels == 0 || self.hash_features == 0 {
            return bad("hash grid needs at least one level and one feature".into());
        }
        if !(2..=24).contains(&self.hash_log2_table) {
            return bad(format!("hash_log2_table {} outside 2..=24", self.hash_log2_table));
        }
        if self.hash_base_resolution < 1 {
            return bad("hash_base_resolution must be positive".into());
        }
        let res = self.level_resolutions();
        if res.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("hash level resolutions not strictly increasing: {res:?}"));
        }
        if self.plane_resolution < 2 || self.plane_scale_bins < 1 || self.plane_features == 0 {
            return bad("triplane needs resolution >= 2, scale_bins >= 1, features >= 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(self.scale_min > 0.0 && self.scale_max >= self.scale_min && self.scale_max.is_finite()) {
            return bad(format!(
                "invalid scale range [{}, {}]",
                self.scale_min, self.scale_max
            ));
        }
        Ok(())
    }
}

/// Sharpness giving a 5%–95% sigmoid transition of 0.3 world units.
pub fn initial_sharpness() -> f64 {
    2.0 * 19f64.ln() / 0.3
}

/// All trainable state.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub hash: HashGrid,
    pub triplane: ScaleTriplane,
    pub mlp: Mlp,
    /// `a = exp(log_sharpness)` keeps the sharpness positive.
    pub log_sharpness: f64,
}

/// Parameter tensors in storage order.
pub const TENSOR_NAMES: [&str; 7] = [
    "hash",
    "triplane",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
    "log_sharpness",
];

impl FieldParams {
    pub fn zeros(config: &FieldConfig) -> Result<Self> {
        config.validate()?;
        Ok(FieldParams {
            hash: HashGrid::new(
                &config.level_resolutions(),
                config.hash_features,
                config.hash_log2_table,
            ),
            triplane: ScaleTriplane::new(
                config.plane_resolution,
                config.plane_scale_bins,
                config.plane_features,
                config.scale_min,
                config.scale_max,
            ),
            mlp: Mlp::zeros(config.input_width(), config.hidden),
            log_sharpness: initial_sharpness().ln(),
            config: config.clone(),
        })
    }

    /// Field approximating the sphere SDF `‖p‖ − r0`, with zero triplanes.
    pub fn geometric_init<R: Rng + ?Sized>(config: &FieldConfig, r0: f64, rng: &mut R) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 1.0) {
            return Err(Error::Config(format!("init radius {r0} outside (0, 1)")));
        }
        let mut params = FieldParams::zeros(config)?;
        params
            .hash
            .data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1e-4..=1e-4));
        params.mlp.geometric_init(r0, 1e-2, rng);
        Ok(params)
    }

    pub fn sharpness(&self) -> f64 {
        self.log_sharpness.exp()
    }

    pub fn set_sharpness(&mut self, a: f64) {
        self.log_sharpness = a.ln();
    }

    pub fn set_scale_range(&mut self, scale_min: f64, scale_max: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.scale_min = scale_min;
        config.scale_max = scale_max;
        config.validate()?;
        self.config = config;
        self.triplane.scale_min = scale_min;
        self.triplane.scale_max = scale_max;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 7] {
        [
            (TENSOR_NAMES[0], &self.hash.data),
            (TENSOR_NAMES[1], &self.triplane.data),
            (TENSOR_NAMES[2], &self.mlp.w1),
            (TENSOR_NAMES[3], &self.mlp.b1),
            (TENSOR_NAMES[4], &self.mlp.w2),
            (TENSOR_NAMES[5], std::slice::from_ref(&self.mlp.b2)),
            (TENSOR_NAMES[6], std::slice::from_ref(&self.log_sharpness)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            (TENSOR_NAMES[0], &mut self.hash.data),
            (TENSOR_NAMES[1], &mut self.triplane.data),
            (TENSOR_NAMES[2], &mut self.mlp.w1),
            (TENSOR_NAMES[3], &mut self.mlp.b1),
            (TENSOR_NAMES[4], &mut self.mlp.w2),
            (TENSOR_NAMES[5], std::slice::from_mut(&mut self.mlp.b2)),
            (TENSOR_NAMES[6], std::slice::from_mut(&mut self.log_sharpness)),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("parameter tensor {name}"),
                    detail: format!("entry {i} = {}", t[i]),
                });
            }
        }
        Ok(())
    }

    /// Evaluates `f(p, s)`, and `∇ₚf` when `with_gradient` is set, recording
    /// everything [`FieldParams::backward`] needs.
    pub fn record(&self, p: &Vec3, s: f64, tape: &mut Tape, with_gradient: bool) {
        tape.prepare(self);
        let nf = self.hash.features();
        let levels = self.hash.levels().len();
        let pf = self.triplane.features;
        let plane_off = 3 + levels * nf;
        let inputs = self.mlp.inputs;
        let data = &self.hash.data;
        let pdata = &self.triplane.data;

        tape.clamped = false;
        tape.x[..3].copy_from_slice(p.as_slice());
        tape.x[3..].iter_mut().for_each(|v| *v = 0.0);
        for l in 0..levels {
            let (corners, clamped) = self.hash.corners(l, p);
            tape.clamped |= clamped;
            let out = &mut tape.x[3 + l * nf..3 + (l + 1) * nf];
            for (e, w) in corners.entry.iter().zip(corners.weight) {
                let src = &data[e * nf..(e + 1) * nf];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
            tape.hash[l] = corners;
        }
        let (sc, clamped) = self.triplane.scale_coordinate(s);
        tape.clamped |= clamped;
        for plane in 0..3 {
            let (corners, clamped) = self.triplane.corners(plane, p[plane], sc);
            tape.clamped |= clamped;
            let out = &mut tape.x[plane_off + plane * pf..plane_off + (plane + 1) * pf];
            for (e, w) in corners.entry.iter().zip(corners.weight) {
                let src = &pdata[e * pf..(e + 1) * pf];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
            tape.planes[plane] = corners;
        }

        let mut f = self.mlp.b2;
        for h in 0..self.mlp.hidden {
            let row = &self.mlp.w1[h * inputs..(h + 1) * inputs];
            let z = self.mlp.b1[h] + dot(row, &tape.x);
            tape.z[h] = z;
            if z > 0.0 {
                f += self.mlp.w2[h] * z;
            }
        }
        tape.f = f;
        tape.has_gradient = with_gradient;
        if !with_gradient {
            return;
        }

        // u = ∂f/∂x = W1ᵀ (w2 ⊙ 1[z > 0])
        tape.u.iter_mut().for_each(|v| *v = 0.0);
        for h in 0..self.mlp.hidden {
            if tape.z[h] > 0.0 {
                let g = self.mlp.w2[h];
                let row = &self.mlp.w1[h * inputs..(h + 1) * inputs];
                for (u, w) in tape.u.iter_mut().zip(row) {
                    *u += g * w;
                }
            }
        }
        // ∇ₚf = Jᵀu with J = ∂x/∂p.
        let mut grad = [tape.u[0], tape.u[1], tape.u[2]];
        for l in 0..levels {
            let corners = &tape.hash[l];
            let ul = &tape.u[3 + l * nf..3 + (l + 1) * nf];
            for (e, dw) in corners.entry.iter().zip(&corners.dweight) {
                let proj = dot(ul, &data[e * nf..(e + 1) * nf]);
                for d in 0..3 {
                    grad[d] += dw[d] * proj;
                }
            }
        }
        for plane in 0..3 {
            let corners = &tape.planes[plane];
            let up = &tape.u[plane_off + plane * pf..plane_off + (plane + 1) * pf];
            for (e, dw) in corners.entry.iter().zip(corners.dweight) {
                grad[plane] += dw * dot(up, &pdata[e * pf..(e + 1) * pf]);
            }
        }
        tape.gradient = Vec3::from(grad);
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂f` (`df`) and `∂L/∂(∇ₚf)` (`dgrad`) at a
    /// recorded sample. `dgrad` must be zero unless the tape holds a gradient.
    pub fn backward<S: GradSink>(&self, tape: &Tape, df: f64, dgrad: &Vec3, sink: &mut S) {
        let nf = self.hash.features();
        let levels = self.hash.levels().len();
        let pf = self.triplane.features;
        let plane_off = 3 + levels * nf;
        let inputs = self.mlp.inputs;
        let hidden = self.mlp.hidden;
        let data = &self.hash.data;
        let pdata = &self.triplane.data;
        let second_order = dgrad.iter().any(|g| *g != 0.0);
        debug_assert!(!second_order || tape.has_gradient);

        // q = J·dgrad: sensitivity of the input features to the gradient path.
        let mut q = std::mem::take(&mut *sink.scratch());
        q.clear();
        q.resize(inputs, 0.0);
        if second_order {
            q[..3].copy_from_slice(dgrad.as_slice());
            for l in 0..levels {
                let corners = &tape.hash[l];
                for (e, dw) in corners.entry.iter().zip(&corners.dweight) {
                    let dwg = dw[0] * dgrad[0] + dw[1] * dgrad[1] + dw[2] * dgrad[2];
                    if dwg == 0.0 {
                        continue;
                    }
                    for k in 0..nf {
                        q[3 + l * nf + k] += dwg * data[e * nf + k];
                    }
                }
            }
            for plane in 0..3 {
                let corners = &tape.planes[plane];
                for (e, dw) in corners.entry.iter().zip(corners.dweight) {
                    let dwg = dw * dgrad[plane];
                    if dwg == 0.0 {
                        continue;
                    }
                    for k in 0..pf {
                        q[plane_off + plane * pf + k] += dwg * pdata[e * pf + k];
                    }
                }
            }
        }

        // dx = W1ᵀ dz with dz = df · w2 ⊙ 1[z > 0].
        let mut dx = std::mem::take(&mut *sink.scratch2());
        dx.clear();
        dx.resize(inputs, 0.0);
        {
            let g = sink.mlp();
            g.b2 += df;
            for h in 0..hidden {
                let z = tape.z[h];
                if z <= 0.0 {
                    continue;
                }
                let w2 = self.mlp.w2[h];
                let dz = df * w2;
                let row = &self.mlp.w1[h * inputs..(h + 1) * inputs];
                let grow = &mut g.w1[h * inputs..(h + 1) * inputs];
                if second_order {
                    // ∂(∇ₚf · dgrad)/∂W1[h][i] = w2[h] q[i]; ∂/∂w2[h] = (W1 q)[h]
                    let wq = dot(row, &q);
                    for i in 0..inputs {
                        grow[i] += dz * tape.x[i] + w2 * q[i];
                        dx[i] += row[i] * dz;
                    }
                    g.w2[h] += df * z + wq;
                } else {
                    for i in 0..inputs {
                        grow[i] += dz * tape.x[i];
                        dx[i] += row[i] * dz;
                    }
                    g.w2[h] += df * z;
                }
                g.b1[h] += dz;
            }
        }

        // Encoding tables: first-order through the interpolated value,
        // second-order through the interpolation-weight derivatives.
        for l in 0..levels {
            let corners = &tape.hash[l];
            for c in 0..8 {
                let e = corners.entry[c];
                let w = corners.weight[c];
                let dw = corners.dweight[c];
                let dwg = if second_order {
                    dw[0] * dgrad[0] + dw[1] * dgrad[1] + dw[2] * dgrad[2]
                } else {
                    0.0
                };
                for k in 0..nf {
                    let i = 3 + l * nf + k;
                    let v = w * dx[i] + dwg * tape.u[i];
                    if v != 0.0 {
                        sink.add_hash(e * nf + k, v);
                    }
                }
            }
        }
        for plane in 0..3 {
            let corners = &tape.planes[plane];
            for c in 0..4 {
                let e = corners.entry[c];
                let w = corners.weight[c];
                let dwg = if second_order {
                    corners.dweight[c] * dgrad[plane]
                } else {
                    0.0
                };
                for k in 0..pf {
                    let i = plane_off + plane * pf + k;
                    let v = w * dx[i] + dwg * tape.u[i];
                    if v != 0.0 {
                        sink.add_plane(e * pf + k, v);
                    }
                }
            }
        }
        *sink.scratch() = q;
        *sink.scratch2() = dx;
    }

    /// `f(p, s)`.
    pub fn sdf(&self, p: &Vec3, s: f64) -> Result<f64> {
        let mut tape = Tape::default();
        self.record(p, s, &mut tape, false);
        self.finite_or_diagnose(p, s, &tape)?;
        Ok(tape.f)
    }

    /// `(f(p, s), ∇ₚf(p, s))`.
    pub fn sdf_and_gradient(&self, p: &Vec3, s: f64) -> Result<(f64, Vec3)> {
        let mut tape = Tape::default();
        self.record(p, s, &mut tape, true);
        self.finite_or_diagnose(p, s, &tape)?;
        Ok((tape.f, tape.gradient))
    }

    /// Spatial gradient only.
    pub fn spatial_gradient(&self, p: &Vec3, s: f64) -> Result<Vec3> {
        self.sdf_and_gradient(p, s).map(|(_, g)| g)
    }

    pub(crate) fn finite_or_diagnose(&self, p: &Vec3, s: f64, tape: &Tape) -> Result<()> {
        let ok = tape.f.is_finite() && (!tape.has_gradient || tape.gradient.iter().all(|g| g.is_finite()));
        if ok {
            return Ok(());
        }
        let mut detail = format!(
            "f = {}, grad = {:?} at p = ({}, {}, {}), s = {s}",
            tape.f, tape.gradient, p.x, p.y, p.z
        );
        for (name, t) in self.tensors() {
            let bad = t.iter().filter(|v| !v.is_finite()).count();
            let max = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            detail.push_str(&format!("; {name}: max|.| = {max:e}, non-finite = {bad}"));
        }
        Err(Error::NonFinite {
            what: "field evaluation".into(),
            detail,
        })
    }
}

/// Dot product with four independent partial sums, so the additions do not
/// form one serial dependency chain.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ha, ta) = a.split_at(n - n % 4);
    let (hb, tb) = b.split_at(n - n % 4);
    for (x, y) in ha.chunks_exact(4).zip(hb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ta.iter().zip(tb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Intermediate values of one field evaluation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    pub(crate) x: Vec<f64>,
    pub(crate) z: Vec<f64>,
    pub(crate) u: Vec<f64>,
    pub(crate) hash: Vec<Corners>,
    pub(crate) planes: [PlaneCorners; 3],
    pub(crate) has_gradient: bool,
    pub f: f64,
    pub gradient: Vec3,
    /// The query was clamped into the field domain.
    pub clamped: bool,
}

impl Tape {
    fn prepare(&mut self, params: &FieldParams) {
        let inputs = params.mlp.inputs;
        if self.x.len() != inputs {
            self.x = vec![0.0; inputs];
            self.u = vec![0.0; inputs];
        }
        if self.z.len() != params.mlp.hidden {
            self.z = vec![0.0; params.mlp.hidden];
        }
        let levels = params.hash.levels().len();
        if self.hash.len() != levels {
            self.hash = vec![Corners::default(); levels];
        }
    }

    /// Input feature vector `[p, hash, triplane]`.
    pub fn features(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpGrads {
    fn zeros(mlp: &Mlp) -> Self {
        MlpGrads {
            w1: vec![0.0; mlp.w1.len()],
            b1: vec![0.0; mlp.b1.len()],
            w2: vec![0.0; mlp.w2.len()],
            b2: 0.0,
        }
    }

    fn add(&mut self, other: &MlpGrads) {
        add_into(&mut self.w1, &other.w1);
        add_into(&mut self.b1, &other.b1);
        add_into(&mut self.w2, &other.w2);
        self.b2 += other.b2;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Destination for parameter gradients.
pub trait GradSink {
    fn add_hash(&mut self, index: usize, value: f64);
    fn add_plane(&mut self, index: usize, value: f64);
    fn add_log_sharpness(&mut self, value: f64);
    fn mlp(&mut self) -> &mut MlpGrads;
    #[doc(hidden)]
    fn scratch(&mut self) -> &mut Vec<f64>;
    #[doc(hidden)]
    fn scratch2(&mut self) -> &mut Vec<f64>;
}

/// Dense gradients, tensor for tensor congruent with [`FieldParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub hash: Vec<f64>,
    pub triplane: Vec<f64>,
    pub mlp: MlpGrads,
    pub log_sharpness: f64,
    scratch: (Vec<f64>, Vec<f64>),
}

impl FieldGrads {
    pub fn zeros(params: &FieldParams) -> Self {
        FieldGrads {
            hash: vec![0.0; params.hash.data.len()],
            triplane: vec![0.0; params.triplane.data.len()],
            mlp: MlpGrads::zeros(&params.mlp),
            log_sharpness: 0.0,
            scratch: Default::default(),
        }
    }

    pub fn clear(&mut self) {
        self.hash.iter_mut().for_each(|v| *v = 0.0);
        self.triplane.iter_mut().for_each(|v| *v = 0.0);
        self.mlp.w1.iter_mut().for_each(|v| *v = 0.0);
        self.mlp.b1.iter_mut().for_each(|v| *v = 0.0);
        self.mlp.w2.iter_mut().for_each(|v| *v = 0.0);
        self.mlp.b2 = 0.0;
        self.log_sharpness = 0.0;
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 7] {
        [
            (TENSOR_NAMES[0], &self.hash),
            (TENSOR_NAMES[1], &self.triplane),
            (TENSOR_NAMES[2], &self.mlp.w1),
            (TENSOR_NAMES[3], &self.mlp.b1),
            (TENSOR_NAMES[4], &self.mlp.w2),
            (TENSOR_NAMES[5], std::slice::from_ref(&self.mlp.b2)),
            (TENSOR_NAMES[6], std::slice::from_ref(&self.log_sharpness)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            (TENSOR_NAMES[0], &mut self.hash),
            (TENSOR_NAMES[1], &mut self.triplane),
            (TENSOR_NAMES[2], &mut self.mlp.w1),
            (TENSOR_NAMES[3], &mut self.mlp.b1),
            (TENSOR_NAMES[4], &mut self.mlp.w2),
            (TENSOR_NAMES[5], std::slice::from_mut(&mut self.mlp.b2)),
            (TENSOR_NAMES[6], std::slice::from_mut(&mut self.log_sharpness)),
        ]
    }

    /// Errors naming the first tensor that holds a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {name}"),
                    detail: format!("entry {i} = {}", t[i]),
                });
            }
        }
        Ok(())
    }

    pub fn add(&mut self, other: &FieldGrads) {
        add_into(&mut self.hash, &other.hash);
        add_into(&mut self.triplane, &other.triplane);
        self.mlp.add(&other.mlp);
        self.log_sharpness += other.log_sharpness;
    }

    /// Adds a sparse accumulator.
    pub fn absorb(&mut self, sparse: &SparseGrads) {
        for &(i, v) in &sparse.hash {
            self.hash[i as usize] += v;
        }
        add_into(&mut self.triplane, &sparse.triplane);
        self.mlp.add(&sparse.mlp);
        self.log_sharpness += sparse.log_sharpness;
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }
}

impl GradSink for FieldGrads {
    fn add_hash(&mut self, index: usize, value: f64) {
        self.hash[index] += value;
    }
    fn add_plane(&mut self, index: usize, value: f64) {
        self.triplane[index] += value;
    }
    fn add_log_sharpness(&mut self, value: f64) {
        self.log_sharpness += value;
    }
    fn mlp(&mut self) -> &mut MlpGrads {
        &mut self.mlp
    }
    fn scratch(&mut self) -> &mut Vec<f64> {
        &mut self.scratch.0
    }
    fn scratch2(&mut self) -> &mut Vec<f64> {
        &mut self.scratch.1
    }
}

/// Per-worker accumulator: hash-table contributions are kept as a list since a
/// batch touches a small fraction of the table.
#[derive(Clone, Debug)]
pub struct SparseGrads {
    pub hash: Vec<(u32, f64)>,
    pub triplane: Vec<f64>,
    pub mlp: MlpGrads,
    pub log_sharpness: f64,
    scratch: (Vec<f64>, Vec<f64>),
}

impl SparseGrads {
    pub fn new(params: &FieldParams) -> Self {
        SparseGrads {
            hash: Vec::new(),
            triplane: vec![0.0; params.triplane.data.len()],
            mlp: MlpGrads::zeros(&params.mlp),
            log_sharpness: 0.0,
            scratch: Default::default(),
        }
    }
}

impl GradSink for SparseGrads {
    fn add_hash(&mut self, index: usize, value: f64) {
        self.hash.push((index as u32, value));
    }
    fn add_plane(&mut self, index: usize, value: f64) {
        self.triplane[index] += value;
    }
    fn add_log_sharpness(&mut self, value: f64) {
        self.log_sharpness += value;
    }
    fn mlp(&mut self) -> &mut MlpGrads {
        &mut self.mlp
    }
    fn scratch(&mut self) -> &mut Vec<f64> {
        &mut self.scratch.0
    }
    fn scratch2(&mut self) -> &mut Vec<f64> {
        &mut self.scratch.1
    }
}

#[cfg(test)]
pub(crate) mod tests;
