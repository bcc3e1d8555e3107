//! Evaluation of `f(p, s)` at one position and many scales.
//!
//! Only the triplane features depend on `s`, so the hash lookup and the
//! position/hash part of the first layer are computed once per point. The
//! backward pass likewise folds the per-scale hidden sensitivities before
//! touching the hash tables.

use super::hash::Corners;
use super::triplane::PlaneCorners;
use super::{dot, FieldParams, GradSink};
use crate::camera::Vec3;

#[derive(Clone, Debug, Default)]
pub struct ScaleSweep {
    /// Inputs with the triplane block left at zero.
    base_x: Vec<f64>,
    /// `b1 + W1·base_x`.
    base_z: Vec<f64>,
    hash: Vec<Corners>,
    /// Per scale: three planes of corners.
    planes: Vec<[PlaneCorners; 3]>,
    /// Per scale: triplane features, `3 · plane_features` each.
    tri: Vec<f64>,
    /// Per scale: hidden pre-activations.
    z: Vec<f64>,
    pub values: Vec<f64>,
}

impl FieldParams {
    /// `f(p, s_i)` for every `s_i` in `scales`; the values land in `sweep.values`.
    pub fn scale_sweep(&self, p: &Vec3, scales: &[f64], sweep: &mut ScaleSweep) {
        let nf = self.hash.features();
        let levels = self.hash.levels().len();
        let pf = self.triplane.features;
        let tw = 3 * pf;
        let inputs = self.mlp.inputs;
        let hidden = self.mlp.hidden;
        let plane_off = 3 + levels * nf;

        sweep.base_x.clear();
        sweep.base_x.resize(inputs, 0.0);
        sweep.base_x[..3].copy_from_slice(p.as_slice());
        sweep.hash.clear();
        for l in 0..levels {
            let (corners, _) = self.hash.corners(l, p);
            let out = &mut sweep.base_x[3 + l * nf..3 + (l + 1) * nf];
            for (e, w) in corners.entry.iter().zip(corners.weight) {
                for (o, v) in out.iter_mut().zip(&self.hash.data[e * nf..(e + 1) * nf]) {
                    *o += w * v;
                }
            }
            sweep.hash.push(corners);
        }
        sweep.base_z.clear();
        for h in 0..hidden {
            let row = &self.mlp.w1[h * inputs..h * inputs + plane_off];
            let z = dot(row, &sweep.base_x[..plane_off]);
            sweep.base_z.push(self.mlp.b1[h] + z);
        }

        let n = scales.len();
        sweep.planes.clear();
        sweep.tri.clear();
        sweep.tri.resize(n * tw, 0.0);
        sweep.z.clear();
        sweep.z.resize(n * hidden, 0.0);
        sweep.values.clear();
        for (i, &s) in scales.iter().enumerate() {
            let (sc, _) = self.triplane.scale_coordinate(s);
            let mut corners = [PlaneCorners::default(); 3];
            let tri = &mut sweep.tri[i * tw..(i + 1) * tw];
            for plane in 0..3 {
                let (c, _) = self.triplane.corners(plane, p[plane], sc);
                let out = &mut tri[plane * pf..(plane + 1) * pf];
                for (e, w) in c.entry.iter().zip(c.weight) {
                    for (o, v) in out.iter_mut().zip(&self.triplane.data[e * pf..(e + 1) * pf]) {
                        *o += w * v;
                    }
                }
                corners[plane] = c;
            }
            sweep.planes.push(corners);
            let mut f = self.mlp.b2;
            for h in 0..hidden {
                let row = &self.mlp.w1[h * inputs + plane_off..(h + 1) * inputs];
                let z = sweep.base_z[h] + dot(row, tri);
                sweep.z[i * hidden + h] = z;
                if z > 0.0 {
                    f += self.mlp.w2[h] * z;
                }
            }
            sweep.values.push(f);
        }
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂f(p, s_i)` for each scale of a sweep.
    pub fn scale_sweep_backward<S: GradSink>(&self, sweep: &ScaleSweep, df: &[f64], sink: &mut S) {
        let nf = self.hash.features();
        let levels = self.hash.levels().len();
        let pf = self.triplane.features;
        let tw = 3 * pf;
        let inputs = self.mlp.inputs;
        let hidden = self.mlp.hidden;
        let plane_off = 3 + levels * nf;

        let mut dz_total = vec![0.0; hidden];
        let mut dtri = vec![0.0; tw];
        for (i, &d) in df.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            dtri.iter_mut().for_each(|v| *v = 0.0);
            let tri = &sweep.tri[i * tw..(i + 1) * tw];
            {
                let g = sink.mlp();
                g.b2 += d;
                for h in 0..hidden {
                    let z = sweep.z[i * hidden + h];
                    if z <= 0.0 {
                        continue;
                    }
                    let dz = d * self.mlp.w2[h];
                    g.w2[h] += d * z;
                    g.b1[h] += dz;
                    dz_total[h] += dz;
                    let row = &self.mlp.w1[h * inputs + plane_off..(h + 1) * inputs];
                    let grow = &mut g.w1[h * inputs + plane_off..(h + 1) * inputs];
                    for k in 0..tw {
                        grow[k] += dz * tri[k];
                        dtri[k] += dz * row[k];
                    }
                }
            }
            for plane in 0..3 {
                let c = &sweep.planes[i][plane];
                for (e, w) in c.entry.iter().zip(c.weight) {
                    for k in 0..pf {
                        let v = w * dtri[plane * pf + k];
                        if v != 0.0 {
                            sink.add_plane(e * pf + k, v);
                        }
                    }
                }
            }
        }

        let mut dx = vec![0.0; plane_off];
        {
            let g = sink.mlp();
            for h in 0..hidden {
                let dz = dz_total[h];
                if dz == 0.0 {
                    continue;
                }
                let row = &self.mlp.w1[h * inputs..h * inputs + plane_off];
                let grow = &mut g.w1[h * inputs..h * inputs + plane_off];
                for k in 0..plane_off {
                    grow[k] += dz * sweep.base_x[k];
                    dx[k] += dz * row[k];
                }
            }
        }
        for (l, c) in sweep.hash.iter().enumerate() {
            for (e, w) in c.entry.iter().zip(c.weight) {
                for k in 0..nf {
                    let v = w * dx[3 + l * nf + k];
                    if v != 0.0 {
                        sink.add_hash(e * nf + k, v);
                    }
                }
            }
        }
    }
}
