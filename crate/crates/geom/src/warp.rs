use crate::vec3::{self, Vec3};
use crate::{Camera, GeomError, Result};

/// Points at or closer than this z (camera frame) are behind the camera.
pub const MIN_VALID_Z: f64 = 1e-6;

/// World points lifted from a depth map, with the source pixel index
/// (`i * W + j`) of each point so attributes such as color can be carried.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub pixels: Vec<usize>,
}

/// A point seen from a camera. `x`, `y` are continuous pixel coordinates
/// (column, row) in which the center of pixel `(i, j)` is `(j + 0.5, i + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub valid: bool,
}

/// Z-buffered splat of colored points onto a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    /// `[H, W, 3]`, zero where `mask` is false.
    pub rgb: Vec<f64>,
    /// z-depth of the winning point, zero where `mask` is false.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Lifts every pixel of a z-depth map to a world point.
pub fn unproject(depth: &[f64], height: usize, width: usize, camera: &Camera) -> Result<PointCloud> {
    if depth.len() != height * width {
        return Err(GeomError::InvalidInput(format!(
            "depth has {} values, expected {height}x{width}",
            depth.len()
        )));
    }
    if let Some(bad) = depth.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(GeomError::InvalidInput(format!("depth[{bad}] = {} is not positive", depth[bad])));
    }
    let rot = camera.rotation_matrix();
    let origin = camera.center();
    let mut points = Vec::with_capacity(depth.len());
    for i in 0..height {
        let v = (i as f64 + 0.5) / height as f64;
        for j in 0..width {
            let u = (j as f64 + 0.5) / width as f64;
            let z = depth[i * width + j];
            let p_cam = vec3::scale(camera.camera_ray(u, v), z);
            points.push(vec3::add(vec3::mat_vec(&rot, p_cam), origin));
        }
    }
    Ok(PointCloud { points, pixels: (0..depth.len()).collect() })
}

/// Projects world points into a camera's image plane.
pub fn reproject(points: &[Vec3], camera: &Camera, height: usize, width: usize) -> Vec<Projection> {
    let rot = camera.rotation_matrix();
    let origin = camera.center();
    let [fx, fy] = camera.focal();
    points
        .iter()
        .map(|&p| {
            let c = vec3::mat_t_vec(&rot, vec3::sub(p, origin));
            if c[2] <= MIN_VALID_Z {
                return Projection { x: f64::NAN, y: f64::NAN, z: c[2], valid: false };
            }
            let u = c[0] / c[2] * fx + 0.5;
            let v = c[1] / c[2] * fy + 0.5;
            Projection { x: u * width as f64, y: v * height as f64, z: c[2], valid: true }
        })
        .collect()
}

/// Splats points into the target view; when several land in one pixel the
/// nearest one wins.
pub fn rasterize(points: &[Vec3], colors: &[[f64; 3]], camera: &Camera, height: usize, width: usize) -> Raster {
    assert_eq!(points.len(), colors.len(), "one color per point");
    let mut raster = Raster {
        height,
        width,
        rgb: vec![0.0; height * width * 3],
        depth: vec![0.0; height * width],
        mask: vec![false; height * width],
    };
    for (proj, color) in reproject(points, camera, height, width).iter().zip(colors) {
        if !proj.valid || proj.x < 0.0 || proj.y < 0.0 {
            continue;
        }
        let (j, i) = (proj.x.floor() as usize, proj.y.floor() as usize);
        if i >= height || j >= width {
            continue;
        }
        let k = i * width + j;
        if !raster.mask[k] || proj.z < raster.depth[k] {
            raster.mask[k] = true;
            raster.depth[k] = proj.z;
            raster.rgb[3 * k..3 * k + 3].copy_from_slice(color);
        }
    }
    raster
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_pixel_unprojects_along_axis() {
        let depth = vec![2.0; 9];
        let pc = unproject(&depth, 3, 3, &Camera::identity()).unwrap();
        assert_eq!(pc.points[4], [0.0, 0.0, 2.0]);
        assert_eq!(pc.pixels[4], 4);
    }

    #[test]
    fn translated_camera_hits_origin() {
        let cam = Camera::new([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [1.0, 1.0]).unwrap();
        let pc = unproject(&[1.0], 1, 1, &cam).unwrap();
        assert_eq!(pc.points[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_non_positive_depth() {
        assert!(unproject(&[1.0, 0.0], 1, 2, &Camera::identity()).is_err());
        assert!(unproject(&[1.0, f64::INFINITY], 1, 2, &Camera::identity()).is_err());
        assert!(unproject(&[1.0], 1, 2, &Camera::identity()).is_err());
    }

    #[test]
    fn projection_validity() {
        let p = reproject(&[[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]], &Camera::identity(), 5, 5);
        assert!(p[0].valid);
        assert_eq!((p[0].x, p[0].y, p[0].z), (2.5, 2.5, 2.0));
        assert!(!p[1].valid);
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let points = [[0.0, 0.0, 3.0], [0.0, 0.0, 1.0], [0.0, 0.0, 2.0]];
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let r = rasterize(&points, &colors, &Camera::identity(), 3, 3);
        assert!(r.mask[4]);
        assert_eq!(r.depth[4], 1.0);
        assert_eq!(&r.rgb[12..15], &[0.0, 1.0, 0.0]);
        assert_eq!(r.mask.iter().filter(|m| **m).count(), 1);
    }

    #[test]
    fn round_trip_recovers_pixels_and_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let t = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let f = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let cam = Camera::new(q, t, f).unwrap();
            let (h, w) = (6, 5);
            let depth: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.1..20.0)).collect();
            let pc = unproject(&depth, h, w, &cam).unwrap();
            for (k, p) in reproject(&pc.points, &cam, h, w).iter().enumerate() {
                let (i, j) = (k / w, k % w);
                assert!(p.valid);
                assert!((p.x - (j as f64 + 0.5)).abs() < 1e-4);
                assert!((p.y - (i as f64 + 0.5)).abs() < 1e-4);
                assert!((p.z - depth[k]).abs() / depth[k] < 1e-6);
            }
        }
    }
}
