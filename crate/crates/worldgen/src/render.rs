use omniview_geom::vec3::{self, Vec3};
use omniview_geom::Camera;

use crate::scene::{Aabb, Scene};
use crate::{Result, WorldError};

/// Ambient floor of the flat shading; the rest scales with `|⟨n, d⟩|`.
const AMBIENT: f64 = 0.25;

/// Room surfaces, indexed by `2 * axis + (hit on max side)`.
const ROOM_COLORS: [[f64; 3]; 6] = [
    [0.80, 0.78, 0.72], // -x wall
    [0.68, 0.72, 0.80], // +x wall
    [0.45, 0.36, 0.28], // floor
    [0.92, 0.92, 0.90], // ceiling
    [0.74, 0.68, 0.66], // -z wall
    [0.66, 0.78, 0.68], // +z wall
];

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub height: usize,
    pub width: usize,
    /// `[H, W, 3]` in `[0, 1]`.
    pub rgb: Vec<f64>,
    /// z-depth of the nearest surface along each pixel ray.
    pub depth: Vec<f64>,
    /// Index of the object hit at each pixel, `None` for room surfaces.
    pub object_ids: Vec<Option<usize>>,
}

/// Slab-method ray/box intersection: `(t_near, t_far, axis of t_near, axis of t_far)`,
/// or `None` if the line misses the box.
pub fn ray_aabb(origin: Vec3, dir: Vec3, b: &Aabb) -> Option<(f64, f64, usize, usize)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let (mut near_axis, mut far_axis) = (0, 0);
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k] < b.min[k] || origin[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let (t1, t2) = ((b.min[k] - origin[k]) * inv, (b.max[k] - origin[k]) * inv);
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            near_axis = k;
        }
        if hi < t_far {
            t_far = hi;
            far_axis = k;
        }
    }
    (t_near <= t_far).then_some((t_near, t_far, near_axis, far_axis))
}

/// Ray-casts the scene: nearest hit per pixel, flat shading and z-depth.
pub fn render_view(scene: &Scene, camera: &Camera, height: usize, width: usize) -> Result<RenderedView> {
    let eye = camera.center();
    if !scene.room.contains(eye) {
        return Err(WorldError::InvalidInput(format!("camera {eye:?} is outside the room")));
    }
    if let Some(k) = scene.objects.iter().position(|o| o.aabb().contains(eye)) {
        return Err(WorldError::InvalidInput(format!("camera {eye:?} is inside object {k}")));
    }
    let rot = camera.rotation_matrix();
    let fwd = camera.forward();
    let boxes: Vec<Aabb> = scene.objects.iter().map(|o| o.aabb()).collect();

    let n = height * width;
    let mut view = RenderedView {
        height,
        width,
        rgb: Vec::with_capacity(3 * n),
        depth: Vec::with_capacity(n),
        object_ids: Vec::with_capacity(n),
    };
    for i in 0..height {
        let v = (i as f64 + 0.5) / height as f64;
        for j in 0..width {
            let u = (j as f64 + 0.5) / width as f64;
            let dir = vec3::normalize(vec3::mat_vec(&rot, camera.camera_ray(u, v)));

            // The eye is inside the closed room, so the exit point always exists.
            let (_, t_exit, _, exit_axis) =
                ray_aabb(eye, dir, &scene.room).expect("eye inside room implies a hit");
            let side = usize::from(dir[exit_axis] > 0.0);
            let mut best = (t_exit, exit_axis, ROOM_COLORS[2 * exit_axis + side], None);
            for (k, b) in boxes.iter().enumerate() {
                if let Some((t_near, _, axis, _)) = ray_aabb(eye, dir, b) {
                    if t_near > 0.0 && t_near < best.0 {
                        best = (t_near, axis, scene.objects[k].color.rgb(), Some(k));
                    }
                }
            }
            let (t, axis, color, id) = best;
            let shade = AMBIENT + (1.0 - AMBIENT) * dir[axis].abs();
            view.rgb.extend(color.iter().map(|c| (c * shade).clamp(0.0, 1.0)));
            view.depth.push(t * vec3::dot(dir, fwd));
            view.object_ids.push(id);
        }
    }
    Ok(view)
}
