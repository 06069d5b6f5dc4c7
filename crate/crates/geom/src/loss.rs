use crate::vec3;
use crate::{Camera, PoseVector};

/// Default Huber transition point for pose residuals.
pub const DEFAULT_HUBER_DELTA: f64 = 0.1;

/// Huber penalty of a single residual.
#[inline]
pub fn huber_residual(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Element-wise Huber loss summed over the nine pose components.
pub fn huber(pred: &PoseVector, gt: &PoseVector, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    pred.0.iter().zip(gt.0.iter()).map(|(p, g)| huber_residual(p - g, delta)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation: f64,
    pub focal: f64,
}

/// Geodesic rotation angle, camera-center distance and focal L1 distance.
pub fn pose_error(pred: &Camera, gt: &Camera) -> PoseError {
    let (a, b) = (pred.rotation(), gt.rotation());
    let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let rotation_deg = 2.0 * d.abs().min(1.0).acos().to_degrees();
    let translation = vec3::norm(vec3::sub(pred.center(), gt.center()));
    let (fa, fb) = (pred.focal(), gt.focal());
    PoseError { rotation_deg, translation, focal: (fa[0] - fb[0]).abs() + (fa[1] - fb[1]).abs() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(r: f64, idx: usize) -> PoseVector {
        let mut v = [0.0; 9];
        v[idx] = r;
        PoseVector(v)
    }

    #[test]
    fn huber_branches() {
        let zero = PoseVector([0.0; 9]);
        assert_eq!(huber(&zero, &zero, 1.0), 0.0);
        assert_eq!(huber(&pv(0.5, 3), &zero, 1.0), 0.125);
        assert_eq!(huber(&pv(2.0, 8), &zero, 1.0), 1.5);
    }

    #[test]
    fn pose_error_quarter_turn() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = Camera::identity();
        let b = Camera::new([h, 0.0, 0.0, h], [0.0; 3], [1.0, 1.0]).unwrap();
        let e = pose_error(&a, &b);
        assert!((e.rotation_deg - 90.0).abs() < 1e-9);
        assert_eq!((e.translation, e.focal), (0.0, 0.0));
        assert_eq!(pose_error(&a, &a), PoseError { rotation_deg: 0.0, translation: 0.0, focal: 0.0 });
    }

    proptest! {
        #[test]
        fn huber_properties(res in prop::array::uniform9(-3.0f64..3.0), delta in 0.01f64..2.0) {
            let zero = PoseVector([0.0; 9]);
            let p = PoseVector(res);
            let flipped = PoseVector(res.map(|v| -v));
            let l = huber(&p, &zero, delta);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l, huber(&flipped, &zero, delta));
            prop_assert_eq!(l == 0.0, res.iter().all(|v| *v == 0.0));
        }
    }
}
