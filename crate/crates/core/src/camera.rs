//! Pinhole cameras, pixel cones and inscribed-sphere sampling.
//!
//! A pixel is treated as a disc on the image plane rather than a point. Casting
//! a cone through that disc and sampling spheres inscribed in the cone gives
//! every sample a position `p = o + t·v` and a radius `s` that grows linearly
//! with distance from the camera. The radius is the scale the field is
//! conditioned on.
//!
//! Units: the camera center, the axis vector `v` and the focal distance are all
//! in world units. `v` points from the camera center to the pixel center on the
//! image plane, so `‖v‖ ≥ F_world` with equality at the principal point.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Half extent of the normalized scene cube `[-1, 1]³`.
pub const SCENE_HALF_EXTENT: f64 = 1.0;
/// Minimum distance (world units) between the camera center and the first sample.
pub const NEAR_FLOOR: f64 = 0.05;

/// Pinhole intrinsics in pixels. Skew is not supported.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// A calibrated pinhole camera, OpenCV axis convention (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    /// Pixel width and height on the image plane, world units.
    pub pixel_pitch: (f64, f64),
    /// World-from-camera rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub center: Vec3,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        pixel_pitch: (f64, f64),
        rotation: Matrix3<f64>,
        center: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Camera {
            intrinsics,
            pixel_pitch,
            rotation,
            center,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `center` looking at `target`, with a symmetric horizontal field of view.
    pub fn look_at(
        center: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        fov_x_deg: f64,
        pixel_pitch: f64,
    ) -> Result<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("camera center equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        let intrinsics = Intrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        };
        Camera::new(
            intrinsics,
            (pixel_pitch, pixel_pitch),
            rotation,
            center,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                k.fx, k.fy
            )));
        }
        let (dx, dy) = self.pixel_pitch;
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "pixel pitch must be positive (dx = {dx}, dy = {dy})"
            )));
        }
        let (fwx, fwy) = (k.fx * dx, k.fy * dy);
        if (fwx - fwy).abs() > 1e-6 * fwx.max(fwy) {
            return Err(Error::InvalidCamera(format!(
                "fx·dx = {fwx} and fy·dy = {fwy} disagree on the focal distance"
            )));
        }
        let gram = self.rotation * self.rotation.transpose();
        if (gram - Matrix3::identity()).abs().max() > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("empty image".into()));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidCamera("non-finite camera center".into()));
        }
        Ok(())
    }

    /// Focal distance in world units (`fx·dx`).
    pub fn focal_distance(&self) -> f64 {
        self.intrinsics.fx * self.pixel_pitch.0
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Continuous pixel coordinates `(u, v)` of a world point. Pixel `(row, col)`
    /// has its center at `(col + 0.5, row + 0.5)`.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation.transpose() * (p - self.center);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
    }

    /// Rotates a camera-frame direction into the world frame.
    pub fn to_world(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }
}

/// Disc radius on the image plane for a `dx × dy` pixel: the radius of the
/// disc with the same area.
pub fn disc_radius(dx: f64, dy: f64) -> f64 {
    (dx * dy / PI).sqrt()
}

/// A cone through one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cone {
    pub origin: Vec3,
    /// Camera center to the pixel center on the image plane; not normalized.
    pub axis: Vec3,
    /// Disc radius on the image plane.
    pub radius: f64,
    /// Focal distance in world units.
    pub focal: f64,
}

impl Cone {
    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.axis * t
    }

    /// Sphere radius at ray parameter `t`.
    pub fn radius_at(&self, t: f64) -> Result<f64> {
        sphere_radius(self, t, self.focal)
    }

    /// Parameter range where the axis lies inside the scene cube, with the near
    /// end floored at [`NEAR_FLOOR`] world units from the camera.
    pub fn scene_range(&self) -> Option<(f64, f64)> {
        let (t0, t1) = box_range(&self.origin, &self.axis, SCENE_HALF_EXTENT)?;
        let near = t0.max(NEAR_FLOOR / self.axis.norm());
        (t1 > near).then_some((near, t1))
    }
}

/// Slab test of `o + t·d` against the cube `[-h, h]³`.
fn box_range(o: &Vec3, d: &Vec3, h: f64) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k].abs() > h {
                return None;
            }
            continue;
        }
        let a = (-h - o[k]) / d[k];
        let b = (h - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
}

/// A sphere inscribed in a cone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeSample {
    pub t: f64,
    pub position: Vec3,
    pub scale: f64,
}

/// Cone through the center of pixel `(row, col)`.
pub fn cast_cone(camera: &Camera, row: u32, col: u32) -> Result<Cone> {
    if row >= camera.height || col >= camera.width {
        return Err(Error::PixelOutOfBounds {
            row,
            col,
            width: camera.width,
            height: camera.height,
        });
    }
    let k = &camera.intrinsics;
    let focal = camera.focal_distance();
    let x = (col as f64 + 0.5 - k.cx) / k.fx;
    let y = (row as f64 + 0.5 - k.cy) / k.fy;
    let axis = camera.rotation * Vec3::new(x * focal, y * focal, focal);
    let (dx, dy) = camera.pixel_pitch;
    Ok(Cone {
        origin: camera.center,
        axis,
        radius: disc_radius(dx, dy),
        focal,
    })
}

/// Radius of the sphere inscribed in `cone` at parameter `t`:
///
/// `s = ‖p − o‖·F·ṙ / (‖v‖·sqrt((sqrt(‖v‖² − F²) − ṙ)² + F²))` with `‖p − o‖ = t‖v‖`.
pub fn sphere_radius(cone: &Cone, t: f64, focal: f64) -> Result<f64> {
    let axis_sq = cone.axis.norm_squared();
    let focal_sq = focal * focal;
    let mut offset_sq = axis_sq - focal_sq;
    if offset_sq < 0.0 {
        // Rounding in `‖v‖²` for the principal-point pixel.
        if offset_sq < -1e-12 * focal_sq {
            return Err(Error::InconsistentCone { axis_sq, focal_sq });
        }
        offset_sq = 0.0;
    }
    if cone.radius == 0.0 {
        return Ok(0.0);
    }
    let offset = offset_sq.sqrt();
    let denom = ((offset - cone.radius).powi(2) + focal_sq).sqrt();
    Ok(t * focal * cone.radius / denom)
}

/// `count` stratified samples in `[near, far]`, one jittered sample per stratum,
/// ascending in `t`.
pub fn sample_cone<R: Rng + ?Sized>(
    cone: &Cone,
    near: f64,
    far: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ConeSample>> {
    sample_strata(cone, near, far, count, |_| rng.random::<f64>())
}

/// Deterministic variant of [`sample_cone`] placing each sample at its stratum center.
pub fn sample_cone_midpoints(
    cone: &Cone,
    near: f64,
    far: f64,
    count: usize,
) -> Result<Vec<ConeSample>> {
    sample_strata(cone, near, far, count, |_| 0.5)
}

fn sample_strata(
    cone: &Cone,
    near: f64,
    far: f64,
    count: usize,
    mut jitter: impl FnMut(usize) -> f64,
) -> Result<Vec<ConeSample>> {
    if !(near > 0.0 && far > near && count >= 1) {
        return Err(Error::InvalidRange { near, far, count });
    }
    let width = (far - near) / count as f64;
    (0..count)
        .map(|i| {
            let t = near + (i as f64 + jitter(i)) * width;
            Ok(ConeSample {
                t,
                position: cone.point_at(t),
                scale: sphere_radius(cone, t, cone.focal)?,
            })
        })
        .collect()
}

/// Serializes cameras to the plain-text camera format. One record per line:
///
/// ```text
/// name width height dx dy  k00 k01 k02 k10 k11 k12 k20 k21 k22  r00 r01 r02 ox r10 r11 r12 oy r20 r21 r22 oz
/// ```
///
/// `K` is the 3×3 intrinsic matrix and `[R | o]` the 3×4 world-from-camera
/// extrinsics, both row-major. Lines starting with `#` are comments.
pub fn write_cameras<'a>(cameras: impl IntoIterator<Item = (&'a str, &'a Camera)>) -> String {
    let mut out = String::from(
        "# scalenorm cameras v1\n# name width height dx dy K[3x3] world_from_camera[3x4]\n",
    );
    for (name, cam) in cameras {
        let k = &cam.intrinsics;
        let _ = write!(
            out,
            "{name} {} {} {} {} {} 0 {} 0 {} {} 0 0 1",
            cam.width, cam.height, cam.pixel_pitch.0, cam.pixel_pitch.1, k.fx, k.cx, k.fy, k.cy
        );
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {}", cam.rotation[(r, c)]);
            }
            let _ = write!(out, " {}", cam.center[r]);
        }
        out.push('\n');
    }
    out
}

/// Parses the camera text format written by [`write_cameras`].
pub fn parse_cameras(text: &str) -> Result<Vec<(String, Camera)>> {
    let mut cameras = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| Error::format("camera file", format!("line {}: {detail}", lineno + 1));
        let mut fields = line.split_whitespace();
        let name = fields.next().unwrap_or_default().to_string();
        let nums: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<Result<_>>()?;
        if nums.len() != 25 {
            return Err(bad(format!("expected 25 numbers after the name, found {}", nums.len())));
        }
        let dim = |v: f64| -> Result<u32> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(bad(format!("invalid image dimension {v}")))
            }
        };
        let (width, height) = (dim(nums[0])?, dim(nums[1])?);
        let k = &nums[4..13];
        if k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
            return Err(bad("intrinsics must be [fx 0 cx; 0 fy cy; 0 0 1]".into()));
        }
        let e = &nums[13..25];
        let rotation = Matrix3::new(e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10]);
        let center = Vec3::new(e[3], e[7], e[11]);
        let intrinsics = Intrinsics {
            fx: k[0],
            fy: k[4],
            cx: k[2],
            cy: k[5],
        };
        let cam = Camera::new(intrinsics, (nums[2], nums[3]), rotation, center, width, height)
            .map_err(|e| bad(e.to_string()))?;
        cameras.push((name, cam));
    }
    Ok(cameras)
}

pub fn load_cameras(path: &Path) -> Result<Vec<(String, Camera)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera {
        Camera::look_at(
            Vec3::new(2.5, 0.7, 0.9),
            Vec3::zeros(),
            Vec3::z(),
            64,
            48,
            45.0,
            1.0 / 800.0,
        )
        .unwrap()
    }

    #[test]
    fn disc_radius_fixtures() {
        let r = disc_radius(1.0 / 800.0, 1.0 / 800.0);
        // (1/800)/sqrt(pi)
        assert!((r - 7.0523697943e-4).abs() < 1e-12, "{r}");
        assert!((disc_radius(PI, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(disc_radius(0.0, 0.0), 0.0);
        assert_eq!(disc_radius(0.3, 0.7), disc_radius(0.7, 0.3));
    }

    #[test]
    fn sphere_radius_fixtures() {
        let cone = Cone {
            origin: Vec3::zeros(),
            axis: Vec3::new(0.0, 0.0, 1.0),
            radius: 0.01,
            focal: 1.0,
        };
        // |p - o| = 2 at t = 2.
        let s = sphere_radius(&cone, 2.0, 1.0).unwrap();
        assert!((s - 0.019999).abs() < 1e-6, "{s}");
        let s4 = sphere_radius(&cone, 4.0, 1.0).unwrap();
        assert!((s4 - 2.0 * s).abs() < 1e-15);

        let ray = Cone { radius: 0.0, ..cone };
        for t in [0.0, 0.5, 10.0] {
            assert_eq!(sphere_radius(&ray, t, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn sphere_radius_rejects_short_axis() {
        let cone = Cone {
            origin: Vec3::zeros(),
            axis: Vec3::new(0.0, 0.0, 0.5),
            radius: 0.01,
            focal: 1.0,
        };
        assert!(matches!(
            sphere_radius(&cone, 1.0, 1.0),
            Err(Error::InconsistentCone { .. })
        ));
    }

    #[test]
    fn cast_cone_rejects_out_of_bounds() {
        let cam = test_camera();
        assert!(cast_cone(&cam, 47, 63).is_ok());
        assert!(matches!(
            cast_cone(&cam, 48, 0),
            Err(Error::PixelOutOfBounds { .. })
        ));
        assert!(cast_cone(&cam, 0, 64).is_err());
    }

    #[test]
    fn cast_then_project_recovers_pixel_center() {
        let cam = test_camera();
        for (row, col) in [(0, 0), (10, 33), (47, 63), (24, 32)] {
            let cone = cast_cone(&cam, row, col).unwrap();
            assert!(cone.axis.norm_squared() >= cone.focal * cone.focal * (1.0 - 1e-12));
            let (u, v) = cam.project(&cone.point_at(1.0)).unwrap();
            assert!((u - (col as f64 + 0.5)).abs() < 1e-4);
            assert!((v - (row as f64 + 0.5)).abs() < 1e-4);
        }
    }

    #[test]
    fn sampling_contract() {
        let cam = test_camera();
        let cone = cast_cone(&cam, 20, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = sample_cone(&cone, 1.0, 2.0, 1, &mut rng).unwrap();
        assert_eq!(one.len(), 1);
        assert!((1.0..=2.0).contains(&one[0].t));

        let many = sample_cone(&cone, 0.5, 4.0, 4096, &mut rng).unwrap();
        assert_eq!(many.len(), 4096);
        for w in many.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[1].scale > w[0].scale);
        }
        assert!(sample_cone(&cone, 2.0, 2.0, 4, &mut rng).is_err());
        assert!(sample_cone(&cone, 3.0, 2.0, 4, &mut rng).is_err());
        assert!(sample_cone(&cone, 1.0, 2.0, 0, &mut rng).is_err());
    }

    #[test]
    fn scene_range_respects_near_floor() {
        let cam = Camera::look_at(
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::z(),
            8,
            8,
            30.0,
            1e-3,
        )
        .unwrap();
        let cone = cast_cone(&cam, 4, 4).unwrap();
        let (near, far) = cone.scene_range().unwrap();
        assert!((near * cone.axis.norm() - NEAR_FLOOR).abs() < 1e-12);
        assert!(far > near);

        let away = Camera::look_at(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            Vec3::z(),
            8,
            8,
            30.0,
            1e-3,
        )
        .unwrap();
        assert!(cast_cone(&away, 4, 4).unwrap().scene_range().is_none());
    }

    #[test]
    fn camera_validation() {
        let cam = test_camera();
        let mut bad = cam.clone();
        bad.pixel_pitch = (0.0, 0.0);
        assert!(bad.validate().is_err());
        let mut bad = cam.clone();
        bad.rotation[(0, 0)] += 0.01;
        assert!(bad.validate().is_err());
        let mut bad = cam;
        bad.intrinsics.fx = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn camera_text_round_trip() {
        let a = test_camera();
        let b = Camera::look_at(
            Vec3::new(-0.3, 1.9, -0.4),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::z(),
            128,
            96,
            38.0,
            2.5e-4,
        )
        .unwrap();
        let text = write_cameras([("a", &a), ("b", &b)]);
        let parsed = parse_cameras(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0], ("a".to_string(), a));
        assert_eq!(parsed[1], ("b".to_string(), b));
        assert!(parse_cameras("x 1 2 3").is_err());
    }
}
