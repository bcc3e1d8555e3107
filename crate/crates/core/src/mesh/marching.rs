//! Marching cubes over a [`Grid`], one z-slab at a time.
//!
//! The triangle table is generated rather than transcribed. For every corner
//! sign case the iso-contour is traced around the six cube faces: on each face
//! a segment runs from a crossing entering the inside region to one leaving
//! it, keeping the inside on the right when the face is seen from outside the
//! cube. Segments chain into closed loops that are fanned into triangles whose
//! normals point towards positive SDF. A face with alternating corner signs has
//! two valid contours; the choice is a per-face bit of the table index, set by
//! the bilinear saddle value so both cubes sharing the face agree.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::smem::{Grid, ScaleAssignment};
use super::{Mesh, WELD_TOLERANCE};
use crate::camera::Vec3;
use crate::error::Result;
use crate::field::{FieldParams, Tape};

/// Something that can be evaluated on the extraction grid.
pub trait FieldSource: Sync {
    /// Writes `f(points[i], scales[i])` into `out[i]`.
    fn evaluate(&self, points: &[Vec3], scales: &[f64], out: &mut [f64]) -> Result<()>;
}

impl FieldSource for FieldParams {
    fn evaluate(&self, points: &[Vec3], scales: &[f64], out: &mut [f64]) -> Result<()> {
        let mut tape = Tape::default();
        for ((p, &s), o) in points.iter().zip(scales).zip(out.iter_mut()) {
            self.record(p, s, &mut tape, false);
            self.finite_or_diagnose(p, s, &tape)?;
            *o = tape.f;
        }
        Ok(())
    }
}

/// Adapts a closure `(p, s) -> f`.
pub struct FnSource<F>(pub F);

impl<F: Fn(&Vec3, f64) -> f64 + Sync> FieldSource for FnSource<F> {
    fn evaluate(&self, points: &[Vec3], scales: &[f64], out: &mut [f64]) -> Result<()> {
        for ((p, &s), o) in points.iter().zip(scales).zip(out.iter_mut()) {
            *o = (self.0)(p, s);
        }
        Ok(())
    }
}

/// Corner `c` of a cube sits at offset `(c & 1, (c >> 1) & 1, c >> 2)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, c >> 2]
}

pub(crate) struct Tables {
    /// `(low corner, high corner, axis)` per edge.
    pub(crate) edges: [(usize, usize, usize); 12],
    /// Corners of each face, counter-clockwise seen from outside.
    pub(crate) faces: [[usize; 4]; 6],
    /// Triangles as edge triples, indexed `case * 64 + joined-face mask`.
    pub(crate) triangles: Vec<Vec<[u8; 3]>>,
}

pub(crate) fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(build_tables)
}

fn build_tables() -> Tables {
    let mut edges = [(0, 0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                edges[n] = (c, c | (1 << axis), axis);
                n += 1;
            }
        }
    }
    let edge_of = |a: usize, b: usize| {
        edges
            .iter()
            .position(|&(lo, hi, _)| (lo, hi) == (a.min(b), a.max(b)))
            .expect("adjacent corners")
    };

    let mut faces = [[0; 4]; 6];
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            // (u, v, axis) is right-handed, so this order is counter-clockwise
            // seen from +axis; the low face looks the other way.
            let mut f = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(a, b)| side << axis | a << u | b << v);
            if side == 0 {
                f.reverse();
            }
            faces[2 * axis + side] = f;
        }
    }

    let mut triangles = Vec::with_capacity(256 * 64);
    for case in 0..256usize {
        let neg = |c: usize| case >> c & 1 == 1;
        for mask in 0..64usize {
            let mut next: [Option<usize>; 12] = [None; 12];
            for (fi, face) in faces.iter().enumerate() {
                let sign = face.map(neg);
                let crossing: [usize; 4] = std::array::from_fn(|i| edge_of(face[i], face[(i + 1) % 4]));
                let enters = |i: usize| !sign[i] && sign[(i + 1) % 4];
                let leaves = |i: usize| sign[i] && !sign[(i + 1) % 4];
                let joined = mask >> fi & 1 == 1;
                for i in (0..4).filter(|&i| enters(i)) {
                    let j = if joined {
                        (1..4).map(|d| (i + 4 - d) % 4).find(|&j| leaves(j))
                    } else {
                        (1..4).map(|d| (i + d) % 4).find(|&j| leaves(j))
                    }
                    .expect("contour leaves the inside region");
                    next[crossing[i]] = Some(crossing[j]);
                }
            }
            let mut tris = Vec::new();
            let mut seen = [false; 12];
            for start in 0..12 {
                if seen[start] || next[start].is_none() {
                    continue;
                }
                let mut ring = vec![start];
                seen[start] = true;
                let mut e = next[start].expect("checked");
                while e != start {
                    seen[e] = true;
                    ring.push(e);
                    e = next[e].expect("contours are closed");
                }
                for k in 1..ring.len() - 1 {
                    tris.push([ring[0] as u8, ring[k] as u8, ring[k + 1] as u8]);
                }
            }
            triangles.push(tris);
        }
    }
    Tables {
        edges,
        faces,
        triangles,
    }
}

/// Extracts the zero level set. Each grid vertex is evaluated at its unit's
/// scale; mesh vertices carry the scale of the unit owning the lower end of
/// their edge.
pub fn marching_cubes<S: FieldSource + ?Sized>(source: &S, assignment: &ScaleAssignment) -> Result<Mesh> {
    let grid = assignment.grid;
    let nv = grid.vertices_per_axis();
    let t = tables();

    let mut below = evaluate_slice(source, assignment, 0)?;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut scales: Vec<f64> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<u64, u32> = HashMap::new();

    for k in 0..grid.resolution {
        let above = evaluate_slice(source, assignment, k + 1)?;
        let value = |c: usize, i: usize, j: usize| {
            let [dx, dy, dz] = corner_offset(c);
            let slice = if dz == 0 { &below } else { &above };
            slice[(j + dy) * nv + i + dx]
        };
        for j in 0..grid.resolution {
            for i in 0..grid.resolution {
                let f: [f64; 8] = std::array::from_fn(|c| value(c, i, j));
                let case = (0..8).fold(0usize, |acc, c| acc | ((f[c] < 0.0) as usize) << c);
                if case == 0 || case == 255 {
                    continue;
                }
                let mut mask = 0usize;
                for (fi, face) in t.faces.iter().enumerate() {
                    let v = face.map(|c| f[c]);
                    let s = v.map(|x| x < 0.0);
                    if s[0] == s[2] && s[1] == s[3] && s[0] != s[1] {
                        let saddle = (v[0] * v[2] - v[1] * v[3]) / (v[0] + v[2] - v[1] - v[3]);
                        if saddle < 0.0 {
                            mask |= 1 << fi;
                        }
                    }
                }
                for tri in &t.triangles[case * 64 + mask] {
                    let idx = tri.map(|e| {
                        let (lo, hi, axis) = t.edges[e as usize];
                        let [ox, oy, oz] = corner_offset(lo);
                        let (gi, gj, gk) = (i + ox, j + oy, k + oz);
                        let key = (((gk * nv + gj) * nv + gi) * 3 + axis) as u64;
                        *edge_vertex.entry(key).or_insert_with(|| {
                            let (f0, f1) = (f[lo], f[hi]);
                            let s = f0 / (f0 - f1);
                            let p0 = grid.vertex(gi, gj, gk);
                            let [hx, hy, hz] = corner_offset(hi);
                            let p1 = grid.vertex(i + hx, j + hy, k + hz);
                            vertices.push(p0 + (p1 - p0) * s);
                            scales.push(assignment.scale_at_vertex(gi, gj, gk));
                            (vertices.len() - 1) as u32
                        })
                    });
                    triangles.push(idx);
                }
            }
        }
        below = above;
    }
    let mut mesh = Mesh {
        vertices,
        triangles,
        scales: Some(scales),
    };
    mesh.weld(WELD_TOLERANCE);
    log::debug!(
        "marching cubes at {}^3: {} vertices, {} triangles",
        grid.resolution,
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(mesh)
}

fn evaluate_slice<S: FieldSource + ?Sized>(source: &S, a: &ScaleAssignment, k: usize) -> Result<Vec<f64>> {
    let grid: Grid = a.grid;
    let nv = grid.vertices_per_axis();
    let mut out = vec![0.0; nv * nv];
    out.par_chunks_mut(nv).enumerate().try_for_each(|(j, row)| {
        let points: Vec<Vec3> = (0..nv).map(|i| grid.vertex(i, j, k)).collect();
        let scales: Vec<f64> = (0..nv).map(|i| a.scale_at_vertex(i, j, k)).collect();
        source.evaluate(&points, &scales, row)
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::smem::Grid;

    fn sphere(r: f64) -> FnSource<impl Fn(&Vec3, f64) -> f64 + Sync> {
        FnSource(move |p: &Vec3, _s: f64| p.norm() - r)
    }

    fn constant(resolution: usize) -> ScaleAssignment {
        ScaleAssignment::constant(Grid::new(resolution).unwrap(), 64, 1e-3).unwrap()
    }

    #[test]
    fn every_case_closes_its_contours() {
        let t = tables();
        for case in 0..256usize {
            for mask in 0..64usize {
                let tris = &t.triangles[case * 64 + mask];
                let crossings = t
                    .edges
                    .iter()
                    .filter(|&&(lo, hi, _)| (case >> lo & 1) != (case >> hi & 1))
                    .count();
                let used: std::collections::BTreeSet<u8> = tris.iter().flatten().copied().collect();
                assert_eq!(used.len(), crossings, "case {case:08b} mask {mask}");
                // Each loop of m crossings gives m - 2 triangles.
                if crossings == 0 {
                    assert!(tris.is_empty());
                }
            }
        }
        // One inside corner, or one outside corner, cuts a single triangle.
        assert_eq!(t.triangles[0b0000_0001 * 64].len(), 1);
        assert_eq!(t.triangles[0b1111_1110 * 64].len(), 1);
    }

    #[test]
    fn sphere_vertices_lie_on_the_surface() {
        let r = 128;
        let mesh = marching_cubes(&sphere(0.5), &constant(r)).unwrap();
        mesh.validate().unwrap();
        let tol = 2.0 * (2.0 / r as f64);
        let worst = mesh.vertices.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
        assert!(worst < tol, "worst radius error {worst}");
        assert!(mesh.is_watertight());
        let vol = mesh.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((vol - exact).abs() / exact < 1e-2, "volume {vol} vs {exact}");
    }

    #[test]
    fn all_positive_field_gives_empty_mesh() {
        let mesh = marching_cubes(&FnSource(|_: &Vec3, _: f64| 1.0), &constant(8)).unwrap();
        assert!(mesh.is_empty());
        assert!(mesh.vertices.is_empty());
    }

    /// Triangles as position triples, rotated so the smallest corner leads.
    fn oriented_faces(m: &Mesh) -> std::collections::BTreeSet<[[u64; 3]; 3]> {
        m.triangles
            .iter()
            .map(|t| {
                let c = t.map(|i| m.vertices[i as usize].map(f64::to_bits).into());
                let lead = (0..3).min_by_key(|&k| c[k]).unwrap();
                [c[lead], c[(lead + 1) % 3], c[(lead + 2) % 3]]
            })
            .collect()
    }

    #[test]
    fn sign_flip_reverses_orientation() {
        let a = marching_cubes(&sphere(0.43), &constant(24)).unwrap();
        let mut b = marching_cubes(&FnSource(|p: &Vec3, _: f64| 0.43 - p.norm()), &constant(24)).unwrap();
        assert!(a.signed_volume() > 0.0 && b.signed_volume() < 0.0);
        b.flip();
        assert_eq!(oriented_faces(&a), oriented_faces(&b));
    }

    fn blobs(p: &Vec3) -> f64 {
        (7.0 * p.x).sin() * (7.0 * p.y).sin() * (7.0 * p.z).sin() + 0.05
    }

    #[test]
    fn saddle_fields_stay_watertight() {
        // Interleaved blobs produce many ambiguous faces; clipping by a sphere
        // keeps the surface away from the grid boundary.
        let closed = |p: &Vec3| blobs(p).max(p.norm() - 0.8);
        let m = marching_cubes(&FnSource(|p: &Vec3, _: f64| closed(p)), &constant(29)).unwrap();
        assert!(m.is_watertight());
        let mut flipped = marching_cubes(&FnSource(|p: &Vec3, _: f64| -closed(p)), &constant(29)).unwrap();
        assert!(flipped.is_watertight());
        flipped.flip();
        assert_eq!(oriented_faces(&m), oriented_faces(&flipped));

        let open = marching_cubes(&FnSource(|p: &Vec3, _: f64| blobs(p)), &constant(29)).unwrap();
        assert!(!open.is_empty());
        assert_eq!(open.inconsistent_edges(), 0);
    }

    #[test]
    fn vertices_carry_unit_scales() {
        let grid = Grid::new(16).unwrap();
        let mut a = ScaleAssignment::constant(grid, 9, 0.0).unwrap();
        for (u, s) in a.scales.iter_mut().enumerate() {
            *s = 1.0 + u as f64;
        }
        let seen = std::sync::Mutex::new(Vec::new());
        let field = FnSource(|p: &Vec3, s: f64| {
            seen.lock().unwrap().push((*p, s));
            p.norm() - 0.6
        });
        let mesh = marching_cubes(&field, &a).unwrap();
        for (p, s) in seen.into_inner().unwrap() {
            assert_eq!(s, a.scales[a.unit_of_point(&p)]);
        }
        let scales = mesh.scales.as_ref().unwrap();
        assert_eq!(scales.len(), mesh.vertices.len());
        assert!(scales.iter().all(|s| a.scales.contains(s)));
    }

    #[test]
    fn field_params_source_matches_pointwise_sdf() {
        use rand::SeedableRng;
        let config = crate::field::tests::mini_config();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let params = FieldParams::geometric_init(&config, 0.5, &mut rng).unwrap();
        let pts = [Vec3::new(0.1, 0.2, -0.3), Vec3::new(-0.7, 0.0, 0.4)];
        let sc = [2e-3, 5e-3];
        let mut out = [0.0; 2];
        params.evaluate(&pts, &sc, &mut out).unwrap();
        for i in 0..2 {
            assert_eq!(out[i], params.sdf(&pts[i], sc[i]).unwrap());
        }
    }
}
