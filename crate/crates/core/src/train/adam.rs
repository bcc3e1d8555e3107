use crate::error::{Error, Result};
use crate::field::{FieldGrads, FieldParams};

/// Adam with bias correction, one moment pair per parameter tensor.
///
/// A step is computed into scratch buffers and committed only when every
/// updated value is finite, so a failed step changes nothing.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    next_params: Vec<Vec<f64>>,
    next_first: Vec<Vec<f64>>,
    next_second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &FieldParams, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let shapes: Vec<Vec<f64>> = params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: shapes.clone(),
            second: shapes.clone(),
            next_params: shapes.clone(),
            next_first: shapes.clone(),
            next_second: shapes,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut FieldParams, grads: &FieldGrads, lr: f64) -> Result<()> {
        let t = self.step + 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for (k, ((_, p), (_, g))) in params.tensors().into_iter().zip(grads.tensors()).enumerate() {
            let (m, v) = (&self.first[k], &self.second[k]);
            let (np, nm, nv) = (&mut self.next_params[k], &mut self.next_first[k], &mut self.next_second[k]);
            let mut finite = true;
            for i in 0..p.len() {
                let gi = g[i];
                let mi = b1 * m[i] + (1.0 - b1) * gi;
                let vi = b2 * v[i] + (1.0 - b2) * gi * gi;
                let pi = p[i] - lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                finite &= pi.is_finite() & mi.is_finite() & vi.is_finite();
                nm[i] = mi;
                nv[i] = vi;
                np[i] = pi;
            }
            if !finite {
                let (name, _) = params.tensors()[k];
                let i = (0..p.len())
                    .find(|&i| !(np[i].is_finite() && nm[i].is_finite() && nv[i].is_finite()))
                    .unwrap_or(0);
                return Err(Error::NonFinite {
                    what: format!("Adam update of {name}"),
                    detail: format!("entry {i}: grad = {}, param -> {}, moments -> ({}, {})", g[i], np[i], nm[i], nv[i]),
                });
            }
        }
        std::mem::swap(&mut self.first, &mut self.next_first);
        std::mem::swap(&mut self.second, &mut self.next_second);
        for ((_, p), np) in params.tensors_mut().into_iter().zip(&self.next_params) {
            p.copy_from_slice(np);
        }
        self.step = t;
        Ok(())
    }
}
