use crate::camera::Vec3;
use crate::error::{Error, Result};

/// Angle between two directions in degrees. Both are normalized first; a zero
/// vector carries no direction and scores 90°.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    match (a.try_normalize(1e-300), b.try_normalize(1e-300)) {
        (Some(a), Some(b)) => a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees(),
        _ => 90.0,
    }
}

/// Mean angular error in degrees over the pixels where `mask` is set.
pub fn mean_angular_error(predicted: &[Vec3], truth: &[Vec3], mask: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.len() != mask.len() {
        return Err(Error::format(
            "normal maps",
            format!(
                "size mismatch: {} predicted, {} truth, {} mask",
                predicted.len(),
                truth.len(),
                mask.len()
            ),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, t), &m) in predicted.iter().zip(truth).zip(mask) {
        if m {
            sum += angle_deg(p, t);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("mask selects no pixels".into()));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn fixtures() {
        let a = vec![Vec3::x(); 5];
        let b = vec![Vec3::y(); 5];
        let m = vec![true; 5];
        assert_eq!(mean_angular_error(&a, &a, &m).unwrap(), 0.0);
        assert!((mean_angular_error(&a, &b, &m).unwrap() - 90.0).abs() < 1e-12);
        assert!(mean_angular_error(&a, &b, &[false; 5]).is_err());
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 400;
        let a: Vec<Vec3> = (0..n).map(|_| random_unit(&mut rng)).collect();
        let b: Vec<Vec3> = (0..n).map(|_| random_unit(&mut rng)).collect();
        let m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..n {
            if m[i] {
                let d = a[i][0] * b[i][0] + a[i][1] * b[i][1] + a[i][2] * b[i][2];
                sum += d.max(-1.0).min(1.0).acos() * 180.0 / std::f64::consts::PI;
                count += 1.0;
            }
        }
        let got = mean_angular_error(&a, &b, &m).unwrap();
        assert!((got - sum / count).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn symmetric_and_rotation_invariant(seed in 0u64..1000, angle in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<Vec3> = (0..20).map(|_| random_unit(&mut rng)).collect();
            let b: Vec<Vec3> = (0..20).map(|_| random_unit(&mut rng)).collect();
            let m = vec![true; 20];
            let ab = mean_angular_error(&a, &b, &m).unwrap();
            prop_assert!((ab - mean_angular_error(&b, &a, &m).unwrap()).abs() < 1e-9);
            let axis = Unit::new_normalize(random_unit(&mut rng));
            let r = Rotation3::from_axis_angle(&axis, angle);
            let ra: Vec<Vec3> = a.iter().map(|v| r * v).collect();
            let rb: Vec<Vec3> = b.iter().map(|v| r * v).collect();
            prop_assert!((ab - mean_angular_error(&ra, &rb, &m).unwrap()).abs() < 1e-6);
            prop_assert!((0.0..=180.0).contains(&ab));
        }
    }
}
