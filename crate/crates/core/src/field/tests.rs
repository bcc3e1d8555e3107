use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn mini_config() -> FieldConfig {
    FieldConfig {
        hash_levels: 2,
        hash_features: 2,
        hash_log2_table: 4,
        hash_base_resolution: 2,
        hash_finest_resolution: 5,
        plane_resolution: 6,
        plane_scale_bins: 4,
        plane_features: 2,
        hidden: 8,
        scale_min: 1e-3,
        scale_max: 4e-2,
    }
}

pub(crate) fn randomize(params: &mut FieldParams, rng: &mut ChaCha8Rng) {
    params.hash.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    params.triplane.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    params.mlp.w1.iter_mut().for_each(|v| *v = rng.random_range(-0.6..0.6));
    params.mlp.b1.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    params.mlp.w2.iter_mut().for_each(|v| *v = rng.random_range(-0.6..0.6));
    params.mlp.b2 = rng.random_range(-0.2..0.2);
}

fn random_point(rng: &mut ChaCha8Rng, extent: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
        rng.random_range(-extent..extent),
    )
}

// Independent reference: explicit corner enumeration with its own indexing.
fn oracle_hash(grid: &HashGrid, p: &Vec3) -> Vec<f64> {
    let nf = grid.features();
    let table = grid
        .levels()
        .iter()
        .find(|l| !l.dense)
        .map(|l| l.entries)
        .unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for level in grid.levels() {
        let n = level.resolution as f64;
        let scaled: Vec<f64> = (0..3).map(|k| (p[k] + 1.0) / 2.0 * n).collect();
        let lo: Vec<usize> = scaled
            .iter()
            .map(|x| (x.floor() as usize).min(level.resolution - 1))
            .collect();
        let mut acc = vec![0.0; nf];
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let idx = [lo[0] + dx, lo[1] + dy, lo[2] + dz];
                    let mut w = 1.0;
                    for (k, &d) in [dx, dy, dz].iter().enumerate() {
                        let t = scaled[k] - lo[k] as f64;
                        w *= if d == 1 { t } else { 1.0 - t };
                    }
                    let local = if level.dense {
                        let m = level.resolution + 1;
                        idx[0] + m * idx[1] + m * m * idx[2]
                    } else {
                        let h = (idx[0] as u64) ^ ((idx[1] as u64 * 2_654_435_761) & 0xffff_ffff)
                            ^ ((idx[2] as u64 * 805_459_861) & 0xffff_ffff);
                        (h as usize) % table
                    };
                    for k in 0..nf {
                        acc[k] += w * grid.data[(level.offset + local) * nf + k];
                    }
                }
            }
        }
        out.extend(acc);
    }
    out
}

fn oracle_triplane(tp: &ScaleTriplane, p: &Vec3, s: f64) -> Vec<f64> {
    let s = s.clamp(tp.scale_min, tp.scale_max);
    let v = (s / tp.scale_min).ln() / (tp.scale_max / tp.scale_min).ln() * (tp.scale_bins - 1) as f64;
    let mut out = Vec::new();
    for plane in 0..3 {
        let u = (p[plane] + 1.0) / 2.0 * (tp.resolution - 1) as f64;
        let (i0, j0) = (
            (u.floor() as usize).min(tp.resolution - 2),
            (v.floor() as usize).min(tp.scale_bins - 2),
        );
        let (a, b) = (u - i0 as f64, v - j0 as f64);
        for k in 0..tp.features {
            let at = |i: usize, j: usize| {
                tp.data[((plane * tp.resolution + i) * tp.scale_bins + j) * tp.features + k]
            };
            out.push(
                (1.0 - a) * (1.0 - b) * at(i0, j0)
                    + a * (1.0 - b) * at(i0 + 1, j0)
                    + (1.0 - a) * b * at(i0, j0 + 1)
                    + a * b * at(i0 + 1, j0 + 1),
            );
        }
    }
    out
}

fn oracle_sdf(params: &FieldParams, p: &Vec3, s: f64) -> f64 {
    let mut x = vec![p.x, p.y, p.z];
    x.extend(oracle_hash(&params.hash, p));
    x.extend(oracle_triplane(&params.triplane, p, s));
    let m = &params.mlp;
    let mut f = m.b2;
    for h in 0..m.hidden {
        let mut z = m.b1[h];
        for i in 0..m.inputs {
            z += m.w1[h * m.inputs + i] * x[i];
        }
        f += m.w2[h] * z.max(0.0);
    }
    f
}

fn random_compact(seed: u64) -> (FieldParams, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = FieldConfig::compact();
    config.scale_min = 2e-4;
    config.scale_max = 2e-2;
    let mut params = FieldParams::zeros(&config).unwrap();
    randomize(&mut params, &mut rng);
    params.mlp.w1.iter_mut().for_each(|v| *v *= 0.3);
    (params, rng)
}

fn random_scale(rng: &mut ChaCha8Rng, params: &FieldParams) -> f64 {
    let (lo, hi) = (params.config.scale_min.ln(), params.config.scale_max.ln());
    rng.random_range(lo..hi).exp()
}

#[test]
fn default_config_widths() {
    let c = FieldConfig::default();
    c.validate().unwrap();
    assert_eq!(c.hash_width(), 28);
    assert_eq!(c.triplane_width(), 24);
    assert_eq!(c.input_width(), 55);
    assert_eq!(c.hidden, 64);
    assert_eq!((c.plane_resolution, c.plane_scale_bins), (128, 32));
    let compact = FieldConfig::compact();
    assert_eq!(compact.input_width(), 55);
    compact.validate().unwrap();
}

#[test]
fn config_validation() {
    let mut c = FieldConfig::default();
    c.scale_min = 0.0;
    assert!(c.validate().is_err());
    let mut c = FieldConfig::default();
    c.hash_base_resolution = 16;
    c.hash_finest_resolution = 17;
    assert!(c.validate().is_err());
}

#[test]
fn hash_lookup_matches_bruteforce() {
    let (params, mut rng) = random_compact(1);
    for _ in 0..100 {
        let p = random_point(&mut rng, 1.0);
        let (got, clamped) = params.hash.lookup(&p);
        assert!(!clamped);
        let want = oracle_hash(&params.hash, &p);
        assert_eq!(got.len(), 28);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn triplane_lookup_matches_bruteforce() {
    let (params, mut rng) = random_compact(2);
    for _ in 0..100 {
        let p = random_point(&mut rng, 1.0);
        let s = random_scale(&mut rng, &params);
        let (got, _) = params.triplane.lookup(&p, s);
        let want = oracle_triplane(&params.triplane, &p, s);
        assert_eq!(got.len(), 24);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn forward_matches_reference() {
    let (params, mut rng) = random_compact(3);
    for _ in 0..200 {
        let p = random_point(&mut rng, 1.0);
        let s = random_scale(&mut rng, &params);
        let f = params.sdf(&p, s).unwrap();
        assert!((f - oracle_sdf(&params, &p, s)).abs() < 1e-6);
    }
}

#[test]
fn zero_weights_collapse_to_bias() {
    let (mut params, mut rng) = random_compact(4);
    params.mlp.w1.iter_mut().for_each(|v| *v = 0.0);
    params.mlp.b1.iter_mut().for_each(|v| *v = 0.0);
    params.mlp.w2.iter_mut().for_each(|v| *v = 0.0);
    params.mlp.b2 = 0.37;
    for _ in 0..20 {
        let p = random_point(&mut rng, 1.0);
        let (f, g) = params.sdf_and_gradient(&p, 1e-3).unwrap();
        assert_eq!(f, 0.37);
        assert_eq!(g, Vec3::zeros());
    }
}

#[test]
fn scale_only_enters_through_triplane() {
    let (mut params, mut rng) = random_compact(5);
    params.triplane.data.iter_mut().for_each(|v| *v = 0.0);
    for _ in 0..50 {
        let p = random_point(&mut rng, 1.0);
        let a = params.sdf_and_gradient(&p, 3e-4).unwrap();
        let b = params.sdf_and_gradient(&p, 1.5e-2).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn geometric_init_approximates_sphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = FieldParams::geometric_init(&FieldConfig::compact(), 0.5, &mut rng).unwrap();
    assert!(params.triplane.data.iter().all(|v| *v == 0.0));
    assert!(params.hash.data.iter().all(|v| v.abs() <= 1e-4));
    assert!(params.sdf(&Vec3::zeros(), 1e-3).unwrap() < 0.0);

    let mut tape = Tape::default();
    params.record(&Vec3::new(0.2, 0.1, -0.3), 1e-3, &mut tape, false);
    assert!(tape.features()[31..].iter().all(|v| *v == 0.0));

    let mut angles = Vec::new();
    for _ in 0..1000 {
        let dir = random_point(&mut rng, 1.0).normalize();
        // Sign agreement with ‖p‖ − 0.5 away from the zero level.
        let r = rng.random_range(0.0..0.95);
        if (r - 0.5f64).abs() > 0.05 {
            let f = params.sdf(&(dir * r), 1e-3).unwrap();
            assert_eq!(f < 0.0, r < 0.5, "r = {r}, f = {f}");
        }
        let on_surface = params.sdf(&(dir * 0.5), 1e-3).unwrap();
        assert!(on_surface.abs() < 0.05, "{on_surface}");

        let p = dir * rng.random_range(0.25..0.95);
        let g = params.spatial_gradient(&p, 1e-3).unwrap();
        angles.push(g.angle(&p).to_degrees());
    }
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    let max = angles.iter().cloned().fold(0.0, f64::max);
    // 64 ReLU directions give a piecewise-constant gradient; see README.
    assert!(mean < 5.0, "mean angle {mean}");
    assert!(max < 12.0, "max angle {max}");
}

/// Points whose central-difference stencil stays inside one interpolation
/// cell on every level and one linear region of the MLP.
pub(crate) fn smooth_point(params: &FieldParams, rng: &mut ChaCha8Rng, h: f64) -> (Vec3, f64) {
    let margin = 2.0 * h;
    loop {
        let p = random_point(rng, 0.95);
        let s = random_scale(rng, params);
        let mut near_face = false;
        let mut resolutions: Vec<usize> = params.hash.levels().iter().map(|l| l.resolution).collect();
        resolutions.push(params.triplane.resolution - 1);
        for &n in &resolutions {
            let cell = 2.0 / n as f64;
            for k in 0..3 {
                let x = (p[k] + 1.0) / cell;
                let d = (x - x.round()).abs() * cell;
                if d < margin {
                    near_face = true;
                }
            }
        }
        if near_face {
            continue;
        }
        // Every hidden unit keeps its activation pattern over the stencil.
        let mut base = Tape::default();
        params.record(&p, s, &mut base, false);
        let mut probe = Tape::default();
        let kink = (0..6).any(|i| {
            let mut e = Vec3::zeros();
            e[i / 2] = if i % 2 == 0 { h } else { -h };
            params.record(&(p + e), s, &mut probe, false);
            base.z
                .iter()
                .zip(&probe.z)
                .any(|(a, b)| (*a > 0.0) != (*b > 0.0) || a.abs() < 2.0 * (a - b).abs())
        });
        if !kink {
            return (p, s);
        }
    }
}

#[test]
fn spatial_gradient_matches_finite_differences() {
    let (params, mut rng) = random_compact(7);
    let h = 1e-4;
    for _ in 0..1000 {
        let (p, s) = smooth_point(&params, &mut rng, h);
        let g = params.spatial_gradient(&p, s).unwrap();
        let mut fd = Vec3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            fd[k] = (params.sdf(&(p + e), s).unwrap() - params.sdf(&(p - e), s).unwrap()) / (2.0 * h);
        }
        let rel = (g - fd).norm() / fd.norm().max(1e-8);
        assert!(rel < 1e-3, "rel {rel} at {p:?}: {g:?} vs {fd:?}");
    }
}

#[test]
fn sdf_is_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = FieldParams::geometric_init(&FieldConfig::compact(), 0.5, &mut rng).unwrap();
    params.hash.data.iter_mut().for_each(|v| *v = rng.random_range(-1e-2..1e-2));
    params.triplane.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    for _ in 0..200 {
        let p = random_point(&mut rng, 0.99);
        let d = random_point(&mut rng, 1.0).normalize() * 1e-6;
        let s = random_scale(&mut rng, &params);
        let df = (params.sdf(&p, s).unwrap() - params.sdf(&(p + d), s).unwrap()).abs();
        assert!(df < 1e-4);
    }
}

#[test]
fn output_bias_gradient_of_squared_value() {
    let (params, mut rng) = random_compact(9);
    let p = random_point(&mut rng, 0.9);
    let mut tape = Tape::default();
    params.record(&p, 1e-3, &mut tape, false);
    let mut grads = FieldGrads::zeros(&params);
    params.backward(&tape, 2.0 * tape.f, &Vec3::zeros(), &mut grads);
    assert_eq!(grads.mlp.b2, 2.0 * tape.f);
}

#[test]
fn untouched_hash_entries_get_zero_gradient() {
    let (params, mut rng) = random_compact(10);
    let mut grads = FieldGrads::zeros(&params);
    let mut touched = std::collections::HashSet::new();
    for _ in 0..4 {
        let p = random_point(&mut rng, 0.9);
        let mut tape = Tape::default();
        params.record(&p, 1e-3, &mut tape, true);
        for c in &tape.hash {
            touched.extend(c.entry.iter().copied());
        }
        params.backward(&tape, 0.3, &Vec3::new(0.2, -0.1, 0.5), &mut grads);
    }
    let nf = params.hash.features();
    for (i, g) in grads.hash.iter().enumerate() {
        if !touched.contains(&(i / nf)) {
            assert_eq!(*g, 0.0);
        }
    }
    assert!(grads.hash.iter().any(|g| *g != 0.0));
}

/// `L = c·f + d·∇ₚf + e·‖∇ₚf‖²` summed over a few samples.
fn probe_loss(params: &FieldParams, pts: &[(Vec3, f64)], coef: &[(f64, Vec3, f64)]) -> f64 {
    pts.iter()
        .zip(coef)
        .map(|((p, s), (c, d, e))| {
            let (f, g) = params.sdf_and_gradient(p, *s).unwrap();
            c * f + d.dot(&g) + e * g.norm_squared()
        })
        .sum()
}

fn probe_grads(params: &FieldParams, pts: &[(Vec3, f64)], coef: &[(f64, Vec3, f64)]) -> FieldGrads {
    let mut grads = FieldGrads::zeros(params);
    for ((p, s), (c, d, e)) in pts.iter().zip(coef) {
        let mut tape = Tape::default();
        params.record(p, *s, &mut tape, true);
        let dg = d + tape.gradient * (2.0 * e);
        params.backward(&tape, *c, &dg, &mut grads);
    }
    grads
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = FieldParams::zeros(&mini_config()).unwrap();
    randomize(&mut params, &mut rng);
    let pts: Vec<(Vec3, f64)> = (0..5)
        .map(|_| smooth_point(&params, &mut rng, 1e-4))
        .collect();
    let coef: Vec<(f64, Vec3, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                random_point(&mut rng, 1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let grads = probe_grads(&params, &pts, &coef);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for t in 0..TENSOR_NAMES.len() {
        let len = params.tensors()[t].1.len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1[i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1[i] -= h;
            let fd = (probe_loss(&plus, &pts, &coef) - probe_loss(&minus, &pts, &coef)) / (2.0 * h);
            let an = grads.tensors()[t].1[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-3, "{}[{i}]: analytic {an} vs fd {fd}", TENSOR_NAMES[t]);
        }
    }
    assert!(worst < 1e-3);
}

#[test]
fn gradients_are_additive_over_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = FieldParams::zeros(&mini_config()).unwrap();
    randomize(&mut params, &mut rng);
    let pts = vec![(random_point(&mut rng, 0.9), 2e-3), (random_point(&mut rng, 0.9), 1e-2)];
    let coef = vec![(0.5, Vec3::new(0.1, 0.2, 0.3), 0.7), (-0.4, Vec3::new(-0.3, 0.0, 0.9), 0.2)];
    let both = probe_grads(&params, &pts, &coef);
    let mut sum = probe_grads(&params, &pts[..1], &coef[..1]);
    sum.add(&probe_grads(&params, &pts[1..], &coef[1..]));
    for ((_, a), (_, b)) in both.tensors().iter().zip(sum.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn sparse_and_dense_accumulators_agree() {
    let (params, mut rng) = random_compact(13);
    let mut dense = FieldGrads::zeros(&params);
    let mut sparse = SparseGrads::new(&params);
    for _ in 0..3 {
        let p = random_point(&mut rng, 0.9);
        let mut tape = Tape::default();
        params.record(&p, 5e-3, &mut tape, true);
        let dg = Vec3::new(0.3, 0.1, -0.2);
        params.backward(&tape, -0.7, &dg, &mut dense);
        params.backward(&tape, -0.7, &dg, &mut sparse);
    }
    let mut merged = FieldGrads::zeros(&params);
    merged.absorb(&sparse);
    for ((_, a), (_, b)) in dense.tensors().iter().zip(merged.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn non_finite_parameters_are_reported() {
    let (mut params, _) = random_compact(14);
    params.mlp.w2[3] = f64::NAN;
    let err = params.sdf(&Vec3::new(0.1, 0.2, 0.3), 1e-3);
    assert!(matches!(err, Err(Error::NonFinite { .. })) || err.is_ok());
    assert!(params.check_finite().unwrap_err().to_string().contains("mlp.w2"));
    params.mlp.b2 = f64::INFINITY;
    assert!(params.sdf(&Vec3::zeros(), 1e-3).is_err());
}

#[test]
fn scale_sweep_matches_pointwise_evaluation() {
    let (params, mut rng) = random_compact(15);
    let mut sweep = sweep::ScaleSweep::default();
    for _ in 0..5 {
        let p = random_point(&mut rng, 0.9);
        let scales: Vec<f64> = (0..9).map(|_| random_scale(&mut rng, &params)).collect();
        params.scale_sweep(&p, &scales, &mut sweep);
        let df: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut folded = FieldGrads::zeros(&params);
        params.scale_sweep_backward(&sweep, &df, &mut folded);
        let mut direct = FieldGrads::zeros(&params);
        for ((s, v), d) in scales.iter().zip(&sweep.values).zip(&df) {
            assert!((params.sdf(&p, *s).unwrap() - v).abs() < 1e-12);
            let mut tape = Tape::default();
            params.record(&p, *s, &mut tape, false);
            params.backward(&tape, *d, &Vec3::zeros(), &mut direct);
        }
        for ((name, a), (_, b)) in folded.tensors().iter().zip(direct.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10, "{name}: {x} vs {y}");
            }
        }
    }
}
