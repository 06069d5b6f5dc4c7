use crate::vec3::{self, Mat3, Vec3};
use crate::{GeomError, Result};

/// Number of reals in a [`PoseVector`].
pub const POSE_DIM: usize = 9;

/// Quaternions whose norm is already this close to 1 are left untouched, which
/// makes normalization idempotent bit-for-bit.
const UNIT_SLACK: f64 = 1e-12;

/// `(qw, qx, qy, qz, tx, ty, tz, fx, fy)`: the flat pose parameterization the
/// geometry module regresses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector(pub [f64; POSE_DIM]);

impl PoseVector {
    pub fn to_f32(&self) -> [f32; POSE_DIM] {
        self.0.map(|v| v as f32)
    }

    pub fn from_f32(values: &[f32; POSE_DIM]) -> Self {
        PoseVector(values.map(f64::from))
    }
}

/// Pinhole camera with the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    rotation: [f64; 4],
    translation: Vec3,
    focal: [f64; 2],
}

impl Camera {
    /// Builds a camera, normalizing the quaternion and flipping it so `qw >= 0`.
    pub fn new(rotation: [f64; 4], translation: Vec3, focal: [f64; 2]) -> Result<Self> {
        if rotation.iter().chain(&translation).chain(&focal).any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidInput("non-finite camera field".into()));
        }
        if focal.iter().any(|&f| f <= 0.0) {
            return Err(GeomError::InvalidInput(format!("focal must be positive, got {focal:?}")));
        }
        let n2: f64 = rotation.iter().map(|q| q * q).sum();
        if n2 < 1e-24 {
            return Err(GeomError::InvalidInput("zero-norm rotation quaternion".into()));
        }
        let n = n2.sqrt();
        let mut q = if (n - 1.0).abs() > UNIT_SLACK { rotation.map(|v| v / n) } else { rotation };
        if q[0] < 0.0 {
            q = q.map(|v| -v);
        }
        Ok(Camera { rotation: q, translation, focal })
    }

    pub fn identity() -> Self {
        Camera { rotation: [1.0, 0.0, 0.0, 0.0], translation: [0.0; 3], focal: [1.0, 1.0] }
    }

    /// Camera at `eye` looking at `target` with world +y as the up hint.
    pub fn look_at(eye: Vec3, target: Vec3, focal: [f64; 2]) -> Result<Self> {
        let fwd = vec3::sub(target, eye);
        if vec3::norm(fwd) < 1e-9 {
            return Err(GeomError::InvalidInput("look_at target coincides with eye".into()));
        }
        let fwd = vec3::normalize(fwd);
        let right = vec3::cross(fwd, [0.0, 1.0, 0.0]);
        if vec3::norm(right) < 1e-6 {
            return Err(GeomError::InvalidInput("look_at direction parallel to up".into()));
        }
        let right = vec3::normalize(right);
        let down = vec3::cross(fwd, right);
        let m = [
            [right[0], down[0], fwd[0]],
            [right[1], down[1], fwd[1]],
            [right[2], down[2], fwd[2]],
        ];
        Camera::new(quat_from_matrix(&m), eye, focal)
    }

    pub fn rotation(&self) -> [f64; 4] {
        self.rotation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn focal(&self) -> [f64; 2] {
        self.focal
    }

    /// Camera-to-world rotation matrix.
    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix(self.rotation)
    }

    pub fn pose_vector(&self) -> PoseVector {
        let [qw, qx, qy, qz] = self.rotation;
        let [tx, ty, tz] = self.translation;
        let [fx, fy] = self.focal;
        PoseVector([qw, qx, qy, qz, tx, ty, tz, fx, fy])
    }

    pub fn from_pose_vector(p: &PoseVector) -> Result<Self> {
        let v = p.0;
        Camera::new([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]], [v[7], v[8]])
    }

    /// Unnormalized camera-frame ray (z = 1) through normalized image point `(u, v)`.
    #[inline]
    pub fn camera_ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - 0.5) / self.focal[0], (v - 0.5) / self.focal[1], 1.0]
    }

    /// Unit world-frame direction through the center of pixel `(i, j)`.
    pub fn pixel_direction(&self, i: usize, j: usize, height: usize, width: usize) -> Vec3 {
        let u = (j as f64 + 0.5) / width as f64;
        let v = (i as f64 + 0.5) / height as f64;
        let rot = self.rotation_matrix();
        vec3::normalize(vec3::mat_vec(&rot, self.camera_ray(u, v)))
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        vec3::mat_t_vec(&self.rotation_matrix(), vec3::sub(p, self.translation))
    }

    pub fn camera_to_world(&self, p: Vec3) -> Vec3 {
        vec3::add(vec3::mat_vec(&self.rotation_matrix(), p), self.translation)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        let m = self.rotation_matrix();
        [m[0][2], m[1][2], m[2][2]]
    }
}

pub(crate) fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Shepperd's method; picks the numerically largest pivot.
pub(crate) fn quat_from_matrix(m: &Mat3) -> [f64; 4] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_fields() {
        assert!(Camera::new([1.0, 0.0, 0.0, 0.0], [0.0; 3], [0.0, 1.0]).is_err());
        assert!(Camera::new([1.0, 0.0, 0.0, 0.0], [f64::NAN, 0.0, 0.0], [1.0, 1.0]).is_err());
        assert!(Camera::new([0.0; 4], [0.0; 3], [1.0, 1.0]).is_err());
    }

    #[test]
    fn canonicalizes_sign_and_norm() {
        let c = Camera::new([-2.0, 0.0, 0.0, 0.0], [0.0; 3], [1.0, 1.0]).unwrap();
        assert_eq!(c.rotation(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pose_vector_round_trip_is_bit_exact() {
        let c = Camera::new([0.3, -0.2, 0.9, 0.1], [1.0, 2.0, -3.0], [0.8, 1.1]).unwrap();
        let back = Camera::from_pose_vector(&c.pose_vector()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let c = Camera::look_at([1.0, 1.5, -2.0], [0.0, 1.0, 1.0], [1.0, 1.0]).unwrap();
        let p = c.world_to_camera([0.0, 1.0, 1.0]);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] > 0.0);
        // camera y axis points down in the world
        let down = vec3::mat_vec(&c.rotation_matrix(), [0.0, 1.0, 0.0]);
        assert!(down[1] < 0.0);
    }

    #[test]
    fn matrix_quaternion_round_trip() {
        let c = Camera::new([0.1, 0.7, -0.5, 0.3], [0.0; 3], [1.0, 1.0]).unwrap();
        let q = quat_from_matrix(&c.rotation_matrix());
        let q = if q[0] < 0.0 { q.map(|v| -v) } else { q };
        for (a, b) in q.iter().zip(c.rotation()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
