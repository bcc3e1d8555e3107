//! Mesh extraction: per-unit scale selection, marching cubes, mesh files and
//! Chamfer distance.

pub mod chamfer;
pub mod io;
pub mod marching;
pub mod smem;

use std::collections::HashMap;

use crate::camera::Vec3;
use crate::error::{Error, Result};

pub use chamfer::{chamfer_between, chamfer_points, sample_surface};
pub use io::{load_mesh, save_mesh, write_scale_ply, MeshFormat};
pub use marching::{marching_cubes, FieldSource, FnSource};
pub use smem::{select_scales, unit_scale_response, Grid, ScaleAssignment};

/// Tolerance used when welding coincident vertices after extraction.
pub const WELD_TOLERANCE: f64 = 1e-7;

/// Triangle mesh in world units. Triangles are counter-clockwise when seen
/// from the side the normal points to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex scale, when the mesh came from a scale-aware extraction.
    pub scales: Option<Vec<f64>>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(bad) = self.triangles.iter().position(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::format("mesh", format!("triangle {bad} indexes past {n} vertices")));
        }
        if let Some(s) = &self.scales {
            if s.len() != self.vertices.len() {
                return Err(Error::format(
                    "mesh",
                    format!("{} scales for {} vertices", s.len(), self.vertices.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized normal (twice the area, pointing out of the front face).
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| 0.5 * self.face_normal(t).norm()).sum()
    }

    /// Signed enclosed volume; positive for closed meshes facing outward.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Undirected edges not shared by exactly two triangles.
    pub fn non_manifold_edges(&self) -> usize {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c != 2).count()
    }

    /// Directed edges used twice, i.e. neighbours with opposite winding.
    pub fn inconsistent_edges(&self) -> usize {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *count.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c > 1).count()
    }

    /// True when every edge borders exactly two triangles with opposite winding.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.non_manifold_edges() == 0 && self.inconsistent_edges() == 0
    }

    /// Reverses every triangle.
    pub fn flip(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    /// Merges vertices closer than `tolerance`, drops triangles that collapse or
    /// have zero area, and removes unreferenced vertices. Merged vertices keep
    /// the attributes of the first occurrence.
    pub fn weld(&mut self, tolerance: f64) {
        let cell = |p: &Vec3| {
            let q = |v: f64| (v / tolerance).floor() as i64;
            (q(p.x), q(p.y), q(p.z))
        };
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut remap = vec![0u32; self.vertices.len()];
        let mut kept: Vec<usize> = Vec::with_capacity(self.vertices.len());
        for (i, p) in self.vertices.iter().enumerate() {
            let (cx, cy, cz) = cell(p);
            let mut found = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in list {
                                if (self.vertices[kept[j as usize]] - p).norm() <= tolerance {
                                    found = Some(j);
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            remap[i] = match found {
                Some(j) => j,
                None => {
                    let j = kept.len() as u32;
                    kept.push(i);
                    buckets.entry((cx, cy, cz)).or_default().push(j);
                    j
                }
            };
        }
        let vertices: Vec<Vec3> = kept.iter().map(|&i| self.vertices[i]).collect();
        let triangles: Vec<[u32; 3]> = self
            .triangles
            .iter()
            .map(|t| t.map(|i| remap[i as usize]))
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm_squared() > 0.0
            })
            .collect();
        self.scales = self.scales.take().map(|s| kept.iter().map(|&i| s[i]).collect());
        self.vertices = vertices;
        self.triangles = triangles;
        self.drop_unreferenced();
    }

    fn drop_unreferenced(&mut self) {
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut order = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                let slot = &mut used[*i as usize];
                if *slot == u32::MAX {
                    *slot = order.len() as u32;
                    order.push(*i as usize);
                }
                *i = *slot;
            }
        }
        self.vertices = order.iter().map(|&i| self.vertices[i]).collect();
        self.scales = self.scales.take().map(|s| order.iter().map(|&i| s[i]).collect());
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Unit tetrahedron with outward-facing triangles.
    pub(crate) fn tetrahedron() -> Mesh {
        Mesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            scales: None,
        }
    }

    #[test]
    fn tetrahedron_is_closed_and_outward() {
        let m = tetrahedron();
        m.validate().unwrap();
        assert!(m.is_watertight());
        assert!((m.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        let mut f = m.clone();
        f.flip();
        assert!((f.signed_volume() + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn weld_merges_duplicates_and_drops_degenerates() {
        let mut m = tetrahedron();
        // Split vertex 3 into a near-duplicate used by one face.
        m.vertices.push(Vec3::new(0.0, 0.0, 1.0 + 3e-8));
        m.triangles[2] = [0, 4, 2];
        // A collapsed triangle and a collinear one.
        m.triangles.push([1, 1, 2]);
        m.vertices.push(Vec3::new(0.5, 0.0, 0.0));
        m.triangles.push([0, 5, 1]);
        m.scales = Some((0..m.vertices.len()).map(|i| i as f64).collect());
        assert!(!m.is_watertight());
        m.weld(WELD_TOLERANCE);
        m.validate().unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 4);
        assert!(m.is_watertight());
        assert_eq!(m.scales.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut m = tetrahedron();
        m.triangles.push([0, 1, 9]);
        assert!(m.validate().is_err());
    }
}
