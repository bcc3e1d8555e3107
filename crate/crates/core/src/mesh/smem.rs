//! Per-unit scale selection from the scale-triplane.
//!
//! The extraction grid is split into cubic units of `n` vertices per axis.
//! Each unit gets the scale bin whose triplane features, summed over the
//! unit's vertices, the three planes and the feature channels, are largest.
//! Ties go to the coarsest bin.

use rayon::prelude::*;

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::field::triplane::ScaleTriplane;

pub const DEFAULT_RESOLUTION: usize = 512;
pub const DEFAULT_UNIT: usize = 64;

/// Marching-cubes lattice over `[-1, 1]³` with `resolution` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub resolution: usize,
}

impl Grid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        Ok(Grid { resolution })
    }

    pub fn vertices_per_axis(&self) -> usize {
        self.resolution + 1
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / self.resolution as f64
    }

    pub fn vertex(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(self.coordinate(i), self.coordinate(j), self.coordinate(k))
    }
}

/// Scale chosen for every unit of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleAssignment {
    pub grid: Grid,
    /// Vertices per unit along each axis.
    pub unit: usize,
    pub units_per_axis: usize,
    /// Selected triplane bin per unit, `None` for a constant-scale assignment.
    pub bins: Option<Vec<usize>>,
    /// Selected scale per unit, indexed `(uz · U + uy) · U + ux`.
    pub scales: Vec<f64>,
}

impl ScaleAssignment {
    /// Every unit uses `scale`.
    pub fn constant(grid: Grid, unit: usize, scale: f64) -> Result<Self> {
        let units_per_axis = units_per_axis(grid, unit)?;
        Ok(ScaleAssignment {
            grid,
            unit,
            units_per_axis,
            bins: None,
            scales: vec![scale; units_per_axis.pow(3)],
        })
    }

    pub fn unit_index(&self, ux: usize, uy: usize, uz: usize) -> usize {
        (uz * self.units_per_axis + uy) * self.units_per_axis + ux
    }

    /// Unit owning grid vertex `(i, j, k)`.
    pub fn unit_of_vertex(&self, i: usize, j: usize, k: usize) -> usize {
        self.unit_index(i / self.unit, j / self.unit, k / self.unit)
    }

    pub fn scale_at_vertex(&self, i: usize, j: usize, k: usize) -> f64 {
        self.scales[self.unit_of_vertex(i, j, k)]
    }

    /// Unit containing world point `p` (clamped into the grid).
    pub fn unit_of_point(&self, p: &Vec3) -> usize {
        let g = self.grid;
        let idx = |v: f64| {
            let x = ((v + 1.0) / g.spacing()).round();
            (x.max(0.0) as usize).min(g.resolution)
        };
        self.unit_of_vertex(idx(p.x), idx(p.y), idx(p.z))
    }

    /// Number of units assigned to each triplane bin.
    pub fn bin_histogram(&self, bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins];
        if let Some(b) = &self.bins {
            for &k in b {
                h[k] += 1;
            }
        }
        h
    }
}

fn units_per_axis(grid: Grid, unit: usize) -> Result<usize> {
    if unit == 0 {
        return Err(Error::Config("unit size must be positive".into()));
    }
    Ok(grid.vertices_per_axis().div_ceil(unit))
}

/// Summed features of `plane` at spatial coordinate `coord` on scale column
/// `k`, interpolated along the spatial axis only.
fn column_response(tp: &ScaleTriplane, plane: usize, coord: f64, k: usize) -> f64 {
    let n = tp.resolution - 1;
    let x = (coord.clamp(-1.0, 1.0) + 1.0) * 0.5 * n as f64;
    let i = (x.floor() as usize).min(n.saturating_sub(1));
    let fx = x - i as f64;
    let f = tp.features;
    let sum = |ii: usize| -> f64 {
        let e = tp.entry(plane, ii.min(n), k);
        tp.data[e * f..(e + 1) * f].iter().sum()
    };
    (1.0 - fx) * sum(i) + fx * sum(i + 1)
}

/// Response of each scale bin summed over `vertices` and the three planes.
pub fn unit_scale_response(tp: &ScaleTriplane, vertices: &[Vec3]) -> Vec<f64> {
    (0..tp.scale_bins)
        .map(|k| {
            vertices
                .iter()
                .map(|p| (0..3).map(|c| column_response(tp, c, p[c], k)).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Index of the largest response; ties resolve to the coarsest (highest) bin.
pub fn argmax_coarsest(response: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in response.iter().enumerate() {
        if v >= response[best] {
            best = k;
        }
    }
    best
}

/// Chooses the scale of every unit of `grid` from the triplane responses.
///
/// Responses factor per axis: a unit is a box of vertices, so the sum of a
/// plane's response over the box is the sum along that plane's axis times the
/// vertex count along the other two.
pub fn select_scales(tp: &ScaleTriplane, grid: Grid, unit: usize) -> Result<ScaleAssignment> {
    let upa = units_per_axis(grid, unit)?;
    let nv = grid.vertices_per_axis();
    let bins = tp.scale_bins;
    let range = |u: usize| (u * unit, ((u + 1) * unit).min(nv));
    // axis_sum[c][u][k]: plane c summed over the vertices of unit slab u.
    let axis_sum: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|c| {
            (0..upa)
                .map(|u| {
                    let (lo, hi) = range(u);
                    (0..bins)
                        .map(|k| (lo..hi).map(|i| column_response(tp, c, grid.coordinate(i), k)).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    let count = |u: usize| {
        let (lo, hi) = range(u);
        (hi - lo) as f64
    };

    let chosen: Vec<usize> = (0..upa * upa * upa)
        .into_par_iter()
        .map(|idx| {
            let ux = idx % upa;
            let uy = (idx / upa) % upa;
            let uz = idx / (upa * upa);
            let (cx, cy, cz) = (count(ux), count(uy), count(uz));
            let response: Vec<f64> = (0..bins)
                .map(|k| {
                    cy * cz * axis_sum[0][ux][k] + cx * cz * axis_sum[1][uy][k] + cx * cy * axis_sum[2][uz][k]
                })
                .collect();
            argmax_coarsest(&response)
        })
        .collect();
    let scales = chosen.iter().map(|&k| tp.bin_scale(k)).collect();
    Ok(ScaleAssignment {
        grid,
        unit,
        units_per_axis: upa,
        bins: Some(chosen),
        scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_triplane(seed: u64) -> ScaleTriplane {
        let mut tp = ScaleTriplane::new(17, 9, 3, 1e-3, 1e-1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        tp.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        tp
    }

    fn unit_vertices(a: &ScaleAssignment, ux: usize, uy: usize, uz: usize) -> Vec<Vec3> {
        let nv = a.grid.vertices_per_axis();
        let r = |u: usize| u * a.unit..((u + 1) * a.unit).min(nv);
        let mut out = Vec::new();
        for k in r(uz) {
            for j in r(uy) {
                for i in r(ux) {
                    out.push(a.grid.vertex(i, j, k));
                }
            }
        }
        out
    }

    #[test]
    fn zero_planes_give_flat_zero_response() {
        let tp = ScaleTriplane::new(128, 32, 8, 1e-4, 1e-2);
        let grid = Grid::new(16).unwrap();
        let verts: Vec<Vec3> = (0..5).map(|i| grid.vertex(i, 2 * i, 3)).collect();
        assert_eq!(unit_scale_response(&tp, &verts), vec![0.0; 32]);
        let a = select_scales(&tp, grid, 4).unwrap();
        assert!(a.bins.as_ref().unwrap().iter().all(|&k| k == 31));
        assert!(a.scales.iter().all(|&s| s == tp.bin_scale(31)));
    }

    #[test]
    fn planted_bin_is_selected() {
        let mut tp = ScaleTriplane::new(64, 32, 8, 1e-4, 1e-2);
        let grid = Grid::new(32).unwrap();
        let a0 = ScaleAssignment::constant(grid, 8, 1e-3).unwrap();
        // Unit (1, 2, 0) covers vertices 8..16, 16..24, 0..8.
        let (lo, hi) = ([8, 16, 0], [16, 24, 8]);
        for c in 0..3 {
            let (a, b) = (grid.coordinate(lo[c]), grid.coordinate(hi[c] - 1));
            for i in 0..tp.resolution {
                let x = -1.0 + 2.0 * i as f64 / (tp.resolution - 1) as f64;
                if x >= a - 0.05 && x <= b + 0.05 {
                    let e = tp.entry(c, i, 7);
                    tp.data[e * 8..(e + 1) * 8].iter_mut().for_each(|v| *v = 0.2);
                }
            }
        }
        let verts = unit_vertices(&a0, 1, 2, 0);
        let r = unit_scale_response(&tp, &verts);
        assert_eq!(argmax_coarsest(&r), 7);
        let a = select_scales(&tp, grid, 8).unwrap();
        let k = a.bins.as_ref().unwrap()[a.unit_index(1, 2, 0)];
        assert_eq!(k, 7);
        assert_eq!(a.scales[a.unit_index(1, 2, 0)], tp.bin_scale(7));
    }

    #[test]
    fn uniform_response_selects_coarsest() {
        let mut tp = ScaleTriplane::new(16, 32, 8, 1e-4, 1e-2);
        tp.data.iter_mut().for_each(|v| *v = 0.37);
        let a = select_scales(&tp, Grid::new(20).unwrap(), 6).unwrap();
        assert!(a.bins.unwrap().iter().all(|&k| k == 31));
        assert_eq!(argmax_coarsest(&[1.0, 3.0, 3.0, 2.0]), 2);
    }

    #[test]
    fn units_cover_every_vertex_once() {
        let grid = Grid::new(512).unwrap();
        let a = ScaleAssignment::constant(grid, DEFAULT_UNIT, 1e-3).unwrap();
        // 513 vertices: eight full units and a one-vertex remainder.
        assert_eq!(a.units_per_axis, 9);
        assert_eq!(a.unit_of_vertex(512, 0, 0), a.unit_index(8, 0, 0));
        assert_eq!(a.unit_of_vertex(63, 64, 0), a.unit_index(0, 1, 0));
        let small = ScaleAssignment::constant(Grid::new(10).unwrap(), 4, 1e-3).unwrap();
        let mut hits = vec![0; small.scales.len()];
        for k in 0..11 {
            for j in 0..11 {
                for i in 0..11 {
                    hits[small.unit_of_vertex(i, j, k)] += 1;
                }
            }
        }
        let sizes = [4, 4, 3];
        for uz in 0..3 {
            for uy in 0..3 {
                for ux in 0..3 {
                    assert_eq!(hits[small.unit_index(ux, uy, uz)], sizes[ux] * sizes[uy] * sizes[uz]);
                }
            }
        }
    }

    #[test]
    fn factored_selection_matches_direct_sum() {
        let tp = random_triplane(3);
        let grid = Grid::new(22).unwrap();
        let a = select_scales(&tp, grid, 5).unwrap();
        let bins = a.bins.as_ref().unwrap();
        for uz in 0..a.units_per_axis {
            for uy in 0..a.units_per_axis {
                for ux in 0..a.units_per_axis {
                    let r = unit_scale_response(&tp, &unit_vertices(&a, ux, uy, uz));
                    assert_eq!(bins[a.unit_index(ux, uy, uz)], argmax_coarsest(&r));
                }
            }
        }
    }

    #[test]
    fn selected_scales_stay_in_range() {
        let tp = random_triplane(8);
        let a = select_scales(&tp, Grid::new(30).unwrap(), 7).unwrap();
        assert!(a.scales.iter().all(|s| (tp.scale_min..=tp.scale_max).contains(s)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn selection_ignores_positive_rescaling(seed in 0u64..1000, c in 0.05f64..20.0) {
            let tp = random_triplane(seed);
            let mut scaled = tp.clone();
            scaled.data.iter_mut().for_each(|v| *v *= c);
            let grid = Grid::new(18).unwrap();
            let a = select_scales(&tp, grid, 6).unwrap();
            let b = select_scales(&scaled, grid, 6).unwrap();
            prop_assert_eq!(a.bins, b.bins);
        }

        #[test]
        fn response_ignores_vertex_order(seed in 0u64..1000) {
            let tp = random_triplane(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut verts: Vec<Vec3> = (0..40)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let a = argmax_coarsest(&unit_scale_response(&tp, &verts));
            verts.reverse();
            verts.rotate_left(13);
            prop_assert_eq!(a, argmax_coarsest(&unit_scale_response(&tp, &verts)));
        }
    }
}
