//! Scale-triplane: three planes pairing one spatial axis with scale.
//!
//! Plane `c` is indexed by `(p[c], s)`. The spatial axis spans `[-1, 1]` with
//! `resolution` vertices; the scale axis is logarithmic over
//! `[scale_min, scale_max]` with `scale_bins` vertices.

use crate::camera::Vec3;

#[derive(Clone, Copy, Debug, Default)]
pub struct PlaneCorners {
    pub entry: [usize; 4],
    pub weight: [f64; 4],
    /// Derivatives of the weights with respect to the plane's spatial coordinate.
    pub dweight: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTriplane {
    pub resolution: usize,
    pub scale_bins: usize,
    pub features: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    /// `[plane][spatial][scale][feature]`.
    pub data: Vec<f64>,
}

impl ScaleTriplane {
    pub fn new(
        resolution: usize,
        scale_bins: usize,
        features: usize,
        scale_min: f64,
        scale_max: f64,
    ) -> Self {
        ScaleTriplane {
            resolution,
            scale_bins,
            features,
            scale_min,
            scale_max,
            data: vec![0.0; 3 * resolution * scale_bins * features],
        }
    }

    pub fn width(&self) -> usize {
        3 * self.features
    }

    /// Entry index of vertex `(i, j)` on `plane`; features follow contiguously.
    pub fn entry(&self, plane: usize, i: usize, j: usize) -> usize {
        (plane * self.resolution + i) * self.scale_bins + j
    }

    /// Continuous scale-axis coordinate in `[0, scale_bins - 1]`.
    pub fn scale_coordinate(&self, s: f64) -> (f64, bool) {
        let clamped = !(self.scale_min..=self.scale_max).contains(&s);
        if self.scale_bins < 2 || self.scale_max <= self.scale_min {
            return (0.0, clamped);
        }
        let s = s.clamp(self.scale_min, self.scale_max);
        let u = (s.ln() - self.scale_min.ln()) / (self.scale_max.ln() - self.scale_min.ln());
        (u.clamp(0.0, 1.0) * (self.scale_bins - 1) as f64, clamped)
    }

    /// Scale value at the center of bin `k`.
    pub fn bin_scale(&self, k: usize) -> f64 {
        if self.scale_bins < 2 || self.scale_max <= self.scale_min {
            return self.scale_min;
        }
        let u = k as f64 / (self.scale_bins - 1) as f64;
        let s = (self.scale_min.ln() + u * (self.scale_max.ln() - self.scale_min.ln())).exp();
        s.clamp(self.scale_min, self.scale_max)
    }

    /// Bilinear corners of `(coord, scale_coord)` on `plane`. `coord` is the
    /// spatial coordinate in `[-1, 1]`; outside values are clamped.
    pub fn corners(&self, plane: usize, coord: f64, scale_coord: f64) -> (PlaneCorners, bool) {
        let n = self.resolution - 1;
        let clamped = !(-1.0..=1.0).contains(&coord);
        let slope = if clamped { 0.0 } else { 0.5 * n as f64 };
        let x = (coord.clamp(-1.0, 1.0) + 1.0) * 0.5 * n as f64;
        let i = (x.floor() as usize).min(n.saturating_sub(1));
        let fx = x - i as f64;
        let (j, fs) = if self.scale_bins < 2 {
            (0, 0.0)
        } else {
            let j = (scale_coord.floor() as usize).min(self.scale_bins - 2);
            (j, scale_coord - j as f64)
        };
        let j1 = (j + 1).min(self.scale_bins - 1);
        let mut out = PlaneCorners::default();
        let spots = [(i, j, 1.0 - fx, 1.0 - fs, -slope), (i + 1, j, fx, 1.0 - fs, slope), (i, j1, 1.0 - fx, fs, -slope), (i + 1, j1, fx, fs, slope)];
        for (c, &(ii, jj, wx, ws, dx)) in spots.iter().enumerate() {
            out.entry[c] = self.entry(plane, ii, jj);
            out.weight[c] = wx * ws;
            out.dweight[c] = dx * ws;
        }
        (out, clamped)
    }

    /// Bilinearly interpolated features of the three planes, concatenated.
    pub fn lookup(&self, p: &Vec3, s: f64) -> (Vec<f64>, bool) {
        let f = self.features;
        let (sc, mut clamped) = self.scale_coordinate(s);
        let mut out = vec![0.0; self.width()];
        for plane in 0..3 {
            let (corners, c) = self.corners(plane, p[plane], sc);
            clamped |= c;
            for (e, w) in corners.entry.iter().zip(corners.weight) {
                for k in 0..f {
                    out[plane * f + k] += w * self.data[e * f + k];
                }
            }
        }
        (out, clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_planes_give_zero_features() {
        let tp = ScaleTriplane::new(128, 32, 8, 1e-4, 1e-2);
        let (v, _) = tp.lookup(&Vec3::new(0.3, -0.2, 0.9), 3e-3);
        assert_eq!(v, vec![0.0; 24]);
    }

    #[test]
    fn bins_span_scale_range_logarithmically() {
        let tp = ScaleTriplane::new(8, 5, 1, 1e-4, 1e-2);
        assert!((tp.bin_scale(0) - 1e-4).abs() < 1e-18);
        assert!((tp.bin_scale(4) - 1e-2).abs() < 1e-15);
        assert!((tp.bin_scale(2) - 1e-3).abs() < 1e-15);
        for k in 0..5 {
            let (c, clamped) = tp.scale_coordinate(tp.bin_scale(k));
            assert!(!clamped);
            assert!((c - k as f64).abs() < 1e-9);
        }
        assert_eq!(tp.scale_coordinate(1.0), (4.0, true));
        assert_eq!(tp.scale_coordinate(0.0), (0.0, true));
    }

    #[test]
    fn vertex_query_returns_stored_feature() {
        let mut tp = ScaleTriplane::new(5, 4, 2, 0.01, 0.08);
        for (i, v) in tp.data.iter_mut().enumerate() {
            *v = i as f64 * 0.25 - 3.0;
        }
        // Spatial vertex 3 of 5 sits at -1 + 3·(2/4) = 0.5; scale bin 2.
        let s = tp.bin_scale(2);
        let (feats, _) = tp.lookup(&Vec3::new(0.5, -1.0, 1.0), s);
        let expect = |plane, i| {
            let e = tp.entry(plane, i, 2);
            [tp.data[e * 2], tp.data[e * 2 + 1]]
        };
        let want = [expect(0, 3), expect(1, 0), expect(2, 4)].concat();
        for (a, b) in feats.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
