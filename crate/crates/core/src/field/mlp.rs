//! Single-hidden-layer ReLU decoder.

use std::f64::consts::PI;

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    /// Row-major `[hidden][inputs]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Mlp {
            inputs,
            hidden,
            w1: vec![0.0; inputs * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Sphere initialization: `f(p) ≈ ‖p‖ − r0`.
    ///
    /// Hidden unit `h` computes `relu(d_h · p)` for directions `d_h` on a
    /// Fibonacci sphere. Averaged over the sphere, `relu(cos θ)` has mean 1/4,
    /// so an output weight of `4 / hidden` recovers `‖p‖`. Feature columns get
    /// small random weights so that gradients reach the encodings.
    pub fn geometric_init<R: Rng + ?Sized>(&mut self, r0: f64, feature_weight: f64, rng: &mut R) {
        let golden = PI * (1.0 + 5f64.sqrt());
        let n = self.hidden as f64;
        for h in 0..self.hidden {
            let i = h as f64 + 0.5;
            let polar = (1.0 - 2.0 * i / n).acos();
            let azimuth = golden * i;
            let dir = [
                azimuth.cos() * polar.sin(),
                azimuth.sin() * polar.sin(),
                polar.cos(),
            ];
            let row = &mut self.w1[h * self.inputs..(h + 1) * self.inputs];
            row[..3].copy_from_slice(&dir);
            for w in &mut row[3..] {
                *w = rng.random_range(-feature_weight..=feature_weight);
            }
        }
        self.b1.iter_mut().for_each(|b| *b = 0.0);
        self.w2.iter_mut().for_each(|w| *w = 4.0 / n);
        self.b2 = -r0;
    }
}
