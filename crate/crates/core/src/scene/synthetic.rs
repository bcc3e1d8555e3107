//! Synthetic normal-map datasets rendered from analytic signed distance
//! functions.
//!
//! Each pixel is split into `k × k` sub-pixel rays that are sphere traced
//! against the shape. The pixel normal is the renormalized mean of the hit
//! normals and the pixel is foreground when at least half the sub-rays hit, so
//! a pixel reports the normal averaged over its footprint. Far cameras
//! therefore see a smoothed version of fine detail while close cameras resolve
//! it.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Camera, Vec3};
use crate::error::{Error, Result};
use crate::mesh::{marching_cubes, sample_surface, FnSource, Grid, Mesh, ScaleAssignment};
use crate::scene::dataset::{Normalization, SceneDataset, Split, View, ViewTag};
use crate::scene::image::{Mask, NormalMap};

pub const MAX_TRACE_STEPS: usize = 256;
pub const SURFACE_EPSILON: f64 = 1e-5;

/// Analytic shapes inside the scene cube.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Sphere of radius 0.5 at the origin.
    Sphere,
    /// Torus in the xz-plane, major radius 0.5, minor radius 0.2.
    Torus,
    /// Axis-aligned cube of half extent 0.4.
    Box,
    /// Radius-0.5 sphere with a sinusoidal relief on the positive octant.
    SphereBump { amplitude: f64, frequency: f64 },
}

pub const BUMP_AMPLITUDE: f64 = 0.005;
pub const BUMP_FREQUENCY: f64 = 100.0;

impl Shape {
    pub fn bump() -> Self {
        Shape::SphereBump {
            amplitude: BUMP_AMPLITUDE,
            frequency: BUMP_FREQUENCY,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Torus => "torus",
            Shape::Box => "box",
            Shape::SphereBump { .. } => "sphere-bump",
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere => p.norm() - 0.5,
            Shape::Torus => {
                let q = (p.x * p.x + p.z * p.z).sqrt() - 0.5;
                (q * q + p.y * p.y).sqrt() - 0.2
            }
            Shape::Box => {
                let q = p.abs() - Vec3::repeat(0.4);
                q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
            }
            Shape::SphereBump { amplitude, frequency } => {
                let r = p.norm();
                if r < 1e-12 {
                    return -0.5;
                }
                let u = p * (0.5 / r);
                r - 0.5 - amplitude * patch_weight(&u) * relief(&u, frequency)
            }
        }
    }

    /// Bound on `‖∇f‖`, used to shorten sphere-tracing steps.
    fn lipschitz(&self) -> f64 {
        match *self {
            Shape::SphereBump { amplitude, frequency } => 1.0 + 2.0 * amplitude * frequency,
            _ => 1.0,
        }
    }

    /// Unit outward normal. Closed form for the plain shapes; central
    /// differences of the closed-form SDF for the relief.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let g = match *self {
            Shape::Sphere => *p,
            Shape::Torus => {
                let rho = (p.x * p.x + p.z * p.z).sqrt().max(1e-12);
                let q = rho - 0.5;
                Vec3::new(q * p.x / rho, p.y, q * p.z / rho)
            }
            Shape::Box => {
                let q = p.abs() - Vec3::repeat(0.4);
                let sign = p.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                if q.max() > 0.0 {
                    q.map(|c| c.max(0.0)).component_mul(&sign)
                } else {
                    let k = q.imax();
                    let mut g = Vec3::zeros();
                    g[k] = sign[k];
                    g
                }
            }
            Shape::SphereBump { .. } => {
                let h = 1e-6;
                Vec3::from_fn(|k, _| {
                    let mut e = Vec3::zeros();
                    e[k] = h;
                    (self.sdf(&(p + e)) - self.sdf(&(p - e))) / (2.0 * h)
                })
            }
        };
        g.try_normalize(1e-300).unwrap_or_else(Vec3::z)
    }

    /// Point of the surface where close-up cameras aim.
    pub fn detail_target(&self) -> Vec3 {
        let dir = Vec3::repeat(1.0).normalize();
        match self {
            Shape::Torus => Vec3::new(0.5, 0.2, 0.0),
            Shape::Box => Vec3::new(0.4, 0.2, 0.2),
            _ => dir * 0.5,
        }
    }

    /// Outward direction at [`Shape::detail_target`].
    pub fn detail_direction(&self) -> Vec3 {
        self.normal(&self.detail_target())
    }

    /// Whether `p` lies in the region covered by close-ups: the full-strength
    /// part of the relief patch, or the equivalent octant for other shapes.
    pub fn in_detail_region(&self, p: &Vec3) -> bool {
        let u = p.try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
        u.iter().all(|&c| c >= PATCH_RAMP)
    }

    /// Steps along `origin + t·dir` from `t0` to `t1`; returns the first `t`
    /// with `|f| < SURFACE_EPSILON`, or `None` on a miss or non-convergence.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, t0: f64, t1: f64) -> Option<f64> {
        let step = 1.0 / self.lipschitz();
        let mut t = t0;
        for _ in 0..MAX_TRACE_STEPS {
            let f = self.sdf(&(origin + dir * t));
            if f.abs() < SURFACE_EPSILON {
                return Some(t);
            }
            t += f * step;
            if t > t1 || t < t0 {
                return None;
            }
        }
        None
    }

    /// Ground-truth surface: marching cubes at `resolution` with every vertex
    /// projected onto the zero level set.
    pub fn surface_mesh(&self, resolution: usize) -> Result<Mesh> {
        let grid = Grid::new(resolution)?;
        let a = ScaleAssignment::constant(grid, resolution + 1, 0.0)?;
        let mut mesh = marching_cubes(&FnSource(|p: &Vec3, _: f64| self.sdf(p)), &a)?;
        mesh.vertices.par_iter_mut().for_each(|v| *v = self.project(v));
        mesh.scales = None;
        Ok(mesh)
    }

    /// Moves `p` onto the surface along the normal.
    pub fn project(&self, p: &Vec3) -> Vec3 {
        let mut q = *p;
        for _ in 0..8 {
            let f = self.sdf(&q);
            if f.abs() < 1e-12 {
                break;
            }
            q -= self.normal(&q) * f;
        }
        q
    }

    /// `count` area-uniform points on the surface, projected onto the exact
    /// level set.
    pub fn surface_samples(&self, count: usize, seed: u64, resolution: usize) -> Result<Vec<Vec3>> {
        let mesh = self.surface_mesh(resolution)?;
        let mut pts = sample_surface(&mesh, count, &mut ChaCha8Rng::seed_from_u64(seed))?;
        pts.par_iter_mut().for_each(|p| *p = self.project(p));
        Ok(pts)
    }
}

/// Width of the smooth edge of the relief patch, in direction components.
const PATCH_RAMP: f64 = 0.15;

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// 1 inside the positive octant away from its borders, fading to 0 across them.
fn patch_weight(u: &Vec3) -> f64 {
    let n = u * 2.0;
    n.iter().map(|&c| smoothstep(c / PATCH_RAMP)).product()
}

fn relief(u: &Vec3, frequency: f64) -> f64 {
    (frequency * u.x).sin() * (frequency * u.y).sin() * (frequency * u.z).sin()
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "torus" => Ok(Shape::Torus),
            "box" => Ok(Shape::Box),
            "sphere-bump" | "bump" => Ok(Shape::bump()),
            _ => Err(Error::Config(format!(
                "unknown shape {s:?} (expected sphere, torus, box or sphere-bump)"
            ))),
        }
    }
}

/// Camera rig and rendering settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub shape: Shape,
    pub regular: usize,
    pub closeup: usize,
    pub heldout_regular: usize,
    pub heldout_closeup: usize,
    pub resolution: u32,
    /// Sub-pixel rays per pixel axis.
    pub supersampling: usize,
    /// Distance of the regular ring from the origin.
    pub distance: f64,
    /// Close-ups sit at `distance / closeup_factor` from their target.
    pub closeup_factor: f64,
    pub fov_deg: f64,
    pub pixel_pitch: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            shape: Shape::Sphere,
            regular: 16,
            closeup: 0,
            heldout_regular: 4,
            heldout_closeup: 0,
            resolution: 800,
            supersampling: 8,
            distance: 3.0,
            closeup_factor: 4.0,
            fov_deg: 30.0,
            pixel_pitch: 1e-3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.regular + self.closeup == 0 {
            return bad("need at least one training view");
        }
        if self.resolution == 0 || self.supersampling == 0 {
            return bad("resolution and supersampling must be positive");
        }
        if !(self.distance > 0.0 && self.closeup_factor > 0.0) {
            return bad("distance and closeup_factor must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("fov_deg must lie in (0, 180)");
        }
        Ok(())
    }
}

/// Cameras on a ring around the origin. Elevation alternates between +25° and
/// -25° so the poles are seen; `phase` shifts the azimuths by a fraction of
/// the spacing.
fn ring(spec: &SceneSpec, count: usize, phase: f64) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let az = 2.0 * PI * (i as f64 + phase) / count as f64;
            let el = if i % 2 == 0 { 25f64 } else { -25.0 }.to_radians();
            let center = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * spec.distance;
            look(spec, center, Vec3::zeros())
        })
        .collect()
}

/// Close-ups around the shape's detail target, tilted 20° off its normal at
/// evenly spaced azimuths.
fn closeups(spec: &SceneSpec, count: usize, phase: f64) -> Result<Vec<Camera>> {
    let target = spec.shape.detail_target();
    let n = spec.shape.detail_direction();
    let e1 = n.cross(&Vec3::y()).try_normalize(1e-9).unwrap_or_else(Vec3::x);
    let e2 = n.cross(&e1);
    let tilt = 20f64.to_radians();
    let d = spec.distance / spec.closeup_factor;
    (0..count)
        .map(|i| {
            let az = 2.0 * PI * (i as f64 + phase) / count as f64;
            let dir = n * tilt.cos() + (e1 * az.cos() + e2 * az.sin()) * tilt.sin();
            look(spec, target + dir * d, target)
        })
        .collect()
}

fn look(spec: &SceneSpec, center: Vec3, target: Vec3) -> Result<Camera> {
    let forward = target - center;
    let up = if forward.normalize().y.abs() > 0.99 { Vec3::z() } else { Vec3::y() };
    Camera::look_at(center, target, up, spec.resolution, spec.resolution, spec.fov_deg, spec.pixel_pitch)
}

/// Renders the normal map and coverage mask of `shape` seen by `camera`.
pub fn render_normals(shape: &Shape, camera: &Camera, supersampling: usize) -> (NormalMap, Mask) {
    let k = supersampling.max(1);
    let (w, h) = (camera.width, camera.height);
    let intr = camera.intrinsics;
    let rows: Vec<Vec<Option<Vec3>>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| {
                    let mut sum = Vec3::zeros();
                    let mut hits = 0usize;
                    for a in 0..k {
                        for b in 0..k {
                            let u = col as f64 + (b as f64 + 0.5) / k as f64;
                            let v = row as f64 + (a as f64 + 0.5) / k as f64;
                            let d = camera
                                .to_world(&Vec3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0))
                                .normalize();
                            let Some((t0, t1)) = cube_range(&camera.center, &d) else {
                                continue;
                            };
                            if let Some(t) = shape.trace(&camera.center, &d, t0, t1) {
                                sum += shape.normal(&(camera.center + d * t));
                                hits += 1;
                            }
                        }
                    }
                    (2 * hits >= k * k && hits > 0).then(|| sum.try_normalize(1e-12)).flatten()
                })
                .collect()
        })
        .collect();
    let mut normals = NormalMap::new(w, h);
    let mut mask = Mask::new(w, h);
    for (row, values) in rows.iter().enumerate() {
        for (col, n) in values.iter().enumerate() {
            if let Some(n) = n {
                normals.set(row as u32, col as u32, n);
                mask.set(row as u32, col as u32, true);
            }
        }
    }
    (normals, mask)
}

/// Parameter range of a unit-direction ray inside the scene cube, starting no
/// earlier than the camera.
fn cube_range(o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let (a, b) = ((-1.0 - o[k]) / d[k], (1.0 - o[k]) / d[k]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Builds the dataset described by `spec`. Held-out cameras sit halfway
/// between the training cameras of the same kind.
pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let mut rigs: Vec<(String, Camera, ViewTag, Split)> = Vec::new();
    let mut push = |prefix: &str, cams: Vec<Camera>, tag, split| {
        for (i, c) in cams.into_iter().enumerate() {
            rigs.push((format!("{prefix}{i:03}"), c, tag, split));
        }
    };
    push("r", ring(spec, spec.regular, 0.0)?, ViewTag::Regular, Split::Train);
    push("c", closeups(spec, spec.closeup, 0.0)?, ViewTag::CloseUp, Split::Train);
    push("hr", ring(spec, spec.heldout_regular, 0.5)?, ViewTag::Regular, Split::HeldOut);
    push("hc", closeups(spec, spec.heldout_closeup, 0.5)?, ViewTag::CloseUp, Split::HeldOut);

    let views = rigs
        .into_iter()
        .map(|(name, camera, tag, split)| {
            let (normals, mask) = render_normals(&spec.shape, &camera, spec.supersampling);
            log::debug!("rendered {name}: {} foreground pixels", mask.count());
            View {
                name,
                camera,
                normals,
                mask,
                tag,
                split,
            }
        })
        .collect();
    let dataset = SceneDataset {
        shape: Some(spec.shape.name().to_string()),
        normalization: Normalization::default(),
        views,
    };
    dataset.validate()?;
    Ok(dataset)
}
