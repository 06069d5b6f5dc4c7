use crate::vec3;
use crate::{Camera, GeomError, Result};

/// Per-pixel Plücker ray encoding `(o × d, d)` in the world frame, laid out
/// row-major as `[H, W, 6]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PluckerMap {
    pub fn at(&self, i: usize, j: usize) -> [f64; 6] {
        let k = (i * self.width + j) * 6;
        let mut out = [0.0; 6];
        out.copy_from_slice(&self.values[k..k + 6]);
        out
    }
}

/// Plücker coordinates of the ray through every pixel center. Directions are
/// unit length, so the encoding is comparable across resolutions.
pub fn plucker_map(camera: &Camera, height: usize, width: usize) -> Result<PluckerMap> {
    if height == 0 || width == 0 {
        return Err(GeomError::InvalidInput(format!("empty image {height}x{width}")));
    }
    let pv = camera.pose_vector();
    if pv.0.iter().any(|v| !v.is_finite()) {
        return Err(GeomError::InvalidInput("non-finite camera".into()));
    }
    let rot = camera.rotation_matrix();
    let origin = camera.center();
    let mut values = Vec::with_capacity(height * width * 6);
    for i in 0..height {
        let v = (i as f64 + 0.5) / height as f64;
        for j in 0..width {
            let u = (j as f64 + 0.5) / width as f64;
            let d = vec3::normalize(vec3::mat_vec(&rot, camera.camera_ray(u, v)));
            let m = vec3::cross(origin, d);
            values.extend_from_slice(&m);
            values.extend_from_slice(&d);
        }
    }
    Ok(PluckerMap { height, width, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_camera() -> impl Strategy<Value = Camera> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-5.0f64..5.0),
            prop::array::uniform2(0.3f64..3.0),
        )
            .prop_filter_map("degenerate quaternion", |(q, t, f)| {
                let n: f64 = q.iter().map(|v| v * v).sum();
                (n > 1e-3).then(|| Camera::new(q, t, f).unwrap())
            })
    }

    #[test]
    fn identity_camera_center_ray_is_optical_axis() {
        let map = plucker_map(&Camera::identity(), 5, 7).unwrap();
        assert_eq!(map.at(2, 3), [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn translated_camera_moment() {
        let cam = Camera::new([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0]).unwrap();
        let r = plucker_map(&cam, 3, 3).unwrap().at(1, 1);
        let expected = [0.0, -1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{r:?}");
        }
    }

    #[test]
    fn rejects_empty_image() {
        assert!(plucker_map(&Camera::identity(), 0, 4).is_err());
    }

    proptest! {
        #[test]
        fn incidence_and_unit_direction(cam in arb_camera(), h in 1usize..9, w in 1usize..9) {
            let map = plucker_map(&cam, h, w).unwrap();
            for i in 0..h {
                for j in 0..w {
                    let r = map.at(i, j);
                    let m = [r[0], r[1], r[2]];
                    let d = [r[3], r[4], r[5]];
                    prop_assert!(vec3::dot(m, d).abs() < 1e-6);
                    prop_assert!((vec3::norm(d) - 1.0).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn resolution_scaling_preserves_rays(cam in arb_camera(), h in 1usize..5, w in 1usize..5) {
            let coarse = plucker_map(&cam, h, w).unwrap();
            let fine = plucker_map(&cam, 3 * h, 3 * w).unwrap();
            for i in 0..h {
                for j in 0..w {
                    let a = coarse.at(i, j);
                    let b = fine.at(3 * i + 1, 3 * j + 1);
                    for k in 0..6 {
                        prop_assert!((a[k] - b[k]).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
