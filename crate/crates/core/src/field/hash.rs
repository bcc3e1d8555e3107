//! Multi-resolution hash grid over the normalized cube `[-1, 1]³`.
//!
//! Coarse levels whose full vertex lattice fits in the table are indexed
//! densely; finer levels hash vertex coordinates into a table of fixed size.

use crate::camera::Vec3;

const PRIME_Y: u32 = 2_654_435_761;
const PRIME_Z: u32 = 805_459_861;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    /// Cells per axis.
    pub resolution: usize,
    pub dense: bool,
    /// First entry of this level in the shared table.
    pub offset: usize,
    pub entries: usize,
}

/// The eight lattice corners around a point on one level, with trilinear
/// weights and their spatial derivatives.
#[derive(Clone, Copy, Debug, Default)]
pub struct Corners {
    pub entry: [usize; 8],
    pub weight: [f64; 8],
    pub dweight: [[f64; 3]; 8],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid {
    levels: Vec<Level>,
    features: usize,
    table_size: usize,
    /// `[entry][feature]`, entries of all levels back to back.
    pub data: Vec<f64>,
}

/// Geometric progression of per-level resolutions from `base` to `finest`.
pub fn level_resolutions(levels: usize, base: usize, finest: usize) -> Vec<usize> {
    if levels == 1 {
        return vec![base];
    }
    let growth = ((finest as f64).ln() - (base as f64).ln()) / (levels - 1) as f64;
    (0..levels)
        .map(|l| {
            if l + 1 == levels {
                finest
            } else {
                (base as f64 * (growth * l as f64).exp()).floor() as usize
            }
        })
        .collect()
}

impl HashGrid {
    /// Zero-initialized grid. `resolutions` must be strictly increasing.
    pub fn new(resolutions: &[usize], features: usize, log2_table: u32) -> Self {
        let table_size = 1usize << log2_table;
        let mut offset = 0;
        let levels = resolutions
            .iter()
            .map(|&resolution| {
                let lattice = (resolution + 1).pow(3);
                let dense = lattice <= table_size;
                let entries = if dense { lattice } else { table_size };
                let level = Level {
                    resolution,
                    dense,
                    offset,
                    entries,
                };
                offset += entries;
                level
            })
            .collect();
        HashGrid {
            levels,
            features,
            table_size,
            data: vec![0.0; offset * features],
        }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Concatenated output width.
    pub fn width(&self) -> usize {
        self.levels.len() * self.features
    }

    pub fn entry_count(&self) -> usize {
        self.data.len() / self.features
    }

    fn entry_index(&self, level: &Level, ix: usize, iy: usize, iz: usize) -> usize {
        let local = if level.dense {
            let n = level.resolution + 1;
            ix + n * (iy + n * iz)
        } else {
            let h = (ix as u32) ^ (iy as u32).wrapping_mul(PRIME_Y) ^ (iz as u32).wrapping_mul(PRIME_Z);
            h as usize & (self.table_size - 1)
        };
        level.offset + local
    }

    /// Corners of the cell containing `p` on `level`. Coordinates outside the
    /// domain are clamped; the second value reports whether that happened.
    pub fn corners(&self, level: usize, p: &Vec3) -> (Corners, bool) {
        let lv = &self.levels[level];
        let n = lv.resolution;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut dfrac = [0.0f64; 3];
        let mut clamped = false;
        for k in 0..3 {
            let mut c = p[k];
            let mut slope = 0.5 * n as f64;
            if !(-1.0..=1.0).contains(&c) {
                clamped = true;
                c = c.clamp(-1.0, 1.0);
                slope = 0.0;
            }
            let x = (c + 1.0) * 0.5 * n as f64;
            let i = (x.floor() as usize).min(n - 1);
            base[k] = i;
            frac[k] = x - i as f64;
            dfrac[k] = slope;
        }
        let mut out = Corners::default();
        for c in 0..8 {
            let bit = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut lin = [0.0; 3];
            let mut dlin = [0.0; 3];
            for k in 0..3 {
                if bit[k] == 1 {
                    lin[k] = frac[k];
                    dlin[k] = dfrac[k];
                } else {
                    lin[k] = 1.0 - frac[k];
                    dlin[k] = -dfrac[k];
                }
            }
            out.entry[c] = self.entry_index(lv, base[0] + bit[0], base[1] + bit[1], base[2] + bit[2]);
            out.weight[c] = lin[0] * lin[1] * lin[2];
            out.dweight[c] = [
                dlin[0] * lin[1] * lin[2],
                lin[0] * dlin[1] * lin[2],
                lin[0] * lin[1] * dlin[2],
            ];
        }
        (out, clamped)
    }

    /// Trilinearly interpolated features of every level, concatenated.
    pub fn lookup(&self, p: &Vec3) -> (Vec<f64>, bool) {
        let f = self.features;
        let mut out = vec![0.0; self.width()];
        let mut clamped = false;
        for l in 0..self.levels.len() {
            let (corners, c) = self.corners(l, p);
            clamped |= c;
            for (e, w) in corners.entry.iter().zip(corners.weight) {
                for k in 0..f {
                    out[l * f + k] += w * self.data[e * f + k];
                }
            }
        }
        (out, clamped)
    }
}
