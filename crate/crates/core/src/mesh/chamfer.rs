//! Symmetric Chamfer distance: the mean of the two directed mean
//! nearest-neighbour Euclidean distances between point samples.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Mesh;
use crate::camera::Vec3;
use crate::error::{Error, Result};

/// `count` points distributed uniformly by area over the mesh surface.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, count: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += 0.5 * mesh.face_normal(t).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Empty("mesh has no surface area to sample".into()));
    }
    Ok((0..count)
        .map(|_| {
            let u = rng.random_range(0.0..total);
            let t = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let [a, b, c] = mesh.corners(t);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// Mean distance from each point of `from` to its nearest point of `to`.
pub fn directed_mean_distance(from: &[Vec3], to: &[Vec3]) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::Empty("Chamfer distance needs two non-empty point sets".into()));
    }
    let entries: Vec<[f64; 3]> = to.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&entries)
        .map_err(|e| Error::format("point set", format!("kd-tree construction failed: {e:?}")))?;
    let distances: Vec<f64> = from
        .par_iter()
        .map(|p| {
            tree.query(&[p.x, p.y, p.z])
                .nearest_one::<SquaredEuclidean<f64>>()
                .execute()
                .distance
                .sqrt()
        })
        .collect();
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}

/// Symmetric Chamfer distance between two point sets.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    Ok(0.5 * (directed_mean_distance(a, b)? + directed_mean_distance(b, a)?))
}

/// Chamfer distance between `samples` area-uniform points on each mesh. Both
/// meshes are sampled from the same seeded stream, so identical meshes give
/// identical samples.
pub fn chamfer_between(a: &Mesh, b: &Mesh, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Empty("Chamfer distance needs at least one sample".into()));
    }
    let pa = sample_surface(a, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let pb = sample_surface(b, samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
    chamfer_points(&pa, &pb)
}
