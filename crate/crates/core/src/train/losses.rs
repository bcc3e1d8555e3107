//! Loss terms and their gradients with respect to rendered quantities.

use crate::camera::Vec3;
use crate::error::{Error, Result};

/// Clamp applied to the rendered opacity inside the mask loss.
pub const MASK_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub normal: f64,
    pub mask: f64,
    pub eikonal: f64,
    pub csr: f64,
    pub total: f64,
}

impl LossTerms {
    /// `normal + mask + eikonal + λ·csr`; a non-finite term is an error naming it.
    pub fn combine(normal: f64, mask: f64, eikonal: f64, csr: f64, lambda: f64) -> Result<Self> {
        for (name, v) in [("normal", normal), ("mask", mask), ("eikonal", eikonal), ("csr", csr)] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{name} loss"),
                    detail: format!("value {v}"),
                });
            }
        }
        Ok(LossTerms {
            normal,
            mask,
            eikonal,
            csr,
            total: total_loss(normal, mask, eikonal, csr, lambda),
        })
    }
}

pub fn total_loss(normal: f64, mask: f64, eikonal: f64, csr: f64, lambda: f64) -> f64 {
    normal + mask + eikonal + lambda * csr
}

/// A loss value with its gradient with respect to each input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Graded<T> {
    pub value: f64,
    pub grad: Vec<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormalLoss {
    pub value: f64,
    /// `∂L/∂n̂_j` for every input ray (zero for excluded rays).
    pub grad: Vec<Vec3>,
    /// Foreground rays that entered the mean.
    pub rays: usize,
    /// Foreground rays skipped because their rendered normal had zero length.
    pub skipped: usize,
}

/// Mean L1 distance between the normalized rendered normal and the observed
/// normal over foreground rays.
pub fn normal_loss(rendered: &[Vec3], truth: &[Vec3], mask: &[bool]) -> NormalLoss {
    let mut out = NormalLoss {
        grad: vec![Vec3::zeros(); rendered.len()],
        ..Default::default()
    };
    for (j, ((n_hat, n), &m)) in rendered.iter().zip(truth).zip(mask).enumerate() {
        if !m {
            continue;
        }
        let len = n_hat.norm();
        if len == 0.0 || !len.is_finite() {
            out.skipped += 1;
            continue;
        }
        let u = n_hat / len;
        let r = u - n;
        out.value += r.abs().sum();
        let sign = r.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
        // d(n̂/‖n̂‖) = (I − u uᵀ)/‖n̂‖
        out.grad[j] = (sign - u * u.dot(&sign)) / len;
        out.rays += 1;
    }
    if out.skipped > 0 {
        log::warn!("normal loss skipped {} rays with zero rendered normal", out.skipped);
    }
    if out.rays > 0 {
        let k = 1.0 / out.rays as f64;
        out.value *= k;
        out.grad.iter_mut().for_each(|g| *g *= k);
    }
    out
}

/// Mean binary cross-entropy between rendered opacity and mask. The opacity is
/// clamped to `[ε, 1 − ε]`; the gradient is taken at the clamped value and
/// passed straight through, so saturated rays still receive a signal.
pub fn mask_loss(opacity: &[f64], mask: &[bool]) -> Graded<f64> {
    let n = opacity.len().max(1) as f64;
    let mut out = Graded {
        value: 0.0,
        grad: Vec::with_capacity(opacity.len()),
    };
    for (&o, &m) in opacity.iter().zip(mask) {
        let c = o.clamp(MASK_EPS, 1.0 - MASK_EPS);
        if m {
            out.value -= c.ln();
            out.grad.push(-1.0 / (c * n));
        } else {
            out.value -= (1.0 - c).ln();
            out.grad.push(1.0 / ((1.0 - c) * n));
        }
    }
    out.value /= n;
    out
}

/// Mean of `(‖∇f‖ − 1)²`.
pub fn eikonal_loss(gradients: &[Vec3]) -> Graded<Vec3> {
    let n = gradients.len().max(1) as f64;
    let mut out = Graded {
        value: 0.0,
        grad: Vec::with_capacity(gradients.len()),
    };
    for g in gradients {
        let len = g.norm();
        out.value += (len - 1.0).powi(2);
        out.grad.push(if len > 0.0 {
            g * (2.0 * (len - 1.0) / (len * n))
        } else {
            Vec3::zeros()
        });
    }
    out.value /= n;
    out
}

/// Per-point variance of `f` across scales, averaged over points. `values`
/// holds `scales` consecutive entries per point.
pub fn csr_loss(values: &[f64], scales: usize) -> Graded<f64> {
    let mut out = Graded {
        value: 0.0,
        grad: vec![0.0; values.len()],
    };
    if scales == 0 || values.is_empty() {
        return out;
    }
    let total = values.len() as f64;
    for (chunk, grad) in values.chunks(scales).zip(out.grad.chunks_mut(scales)) {
        let mu = chunk.iter().sum::<f64>() / chunk.len() as f64;
        for (v, g) in chunk.iter().zip(grad) {
            out.value += (v - mu).powi(2);
            // The mean's own dependence sums to zero over the point.
            *g = 2.0 * (v - mu) / total;
        }
    }
    out.value /= total;
    out
}
