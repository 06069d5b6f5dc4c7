use std::f64::consts::PI;

use omniview_geom::vec3::{self, Vec3};
use omniview_geom::Camera;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::Scene;
use crate::{Result, WorldError};

/// Maximum distance between consecutive camera centers, as a fraction of the
/// room diagonal.
pub const MAX_STEP_FRACTION: f64 = 0.3;
const WALL_MARGIN: f64 = 0.3;
const OBJECT_CLEARANCE: f64 = 0.25;
const MAX_ATTEMPTS: usize = 10_000;

/// A panning arc: camera centers on a horizontal circle around the room
/// center, each looking outward-and-sideways so objects enter the view one
/// after another.
pub fn sample_trajectory(scene: &Scene, frame_count: usize, seed: u64) -> Result<Vec<Camera>> {
    if frame_count < 2 {
        return Err(WorldError::InvalidInput(format!("trajectory needs at least 2 frames, got {frame_count}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6a65_6374_6f72);
    let room = &scene.room;
    let center = room.center();
    let half_x = 0.5 * (room.max[0] - room.min[0]);
    let half_z = 0.5 * (room.max[2] - room.min[2]);
    let max_step = MAX_STEP_FRACTION * room.diagonal();

    for _ in 0..MAX_ATTEMPTS {
        let radius = rng.random_range(0.2..0.55) * half_x.min(half_z);
        let cx = center[0] + rng.random_range(-0.3..0.3);
        let cz = center[2] + rng.random_range(-0.3..0.3);
        let eye_h = rng.random_range(1.1..1.8);
        let theta0 = rng.random_range(0.0..2.0 * PI);
        let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let dtheta = dir * rng.random_range(0.15..0.35);
        let look_offset = rng.random_range(-0.6..0.6);
        let pitch_target_h = rng.random_range(0.4..1.0);
        let focal = rng.random_range(0.85..1.2);

        let mut cams = Vec::with_capacity(frame_count);
        let mut ok = true;
        for f in 0..frame_count {
            let theta = theta0 + dtheta * f as f64;
            let eye: Vec3 = [cx + radius * theta.cos(), eye_h, cz + radius * theta.sin()];
            let look = theta + look_offset;
            let reach = 0.9 * half_x.min(half_z);
            let mut target: Vec3 = [eye[0] + reach * look.cos(), pitch_target_h, eye[2] + reach * look.sin()];
            for k in [0, 2] {
                target[k] = target[k].clamp(room.min[k] + 0.05, room.max[k] - 0.05);
            }
            if !free_space(scene, eye) || !room.contains(target) {
                ok = false;
                break;
            }
            match Camera::look_at(eye, target, [focal, focal]) {
                Ok(c) => cams.push(c),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && cams.windows(2).all(|w| vec3::norm(vec3::sub(w[0].center(), w[1].center())) <= max_step) {
            return Ok(cams);
        }
    }
    Err(WorldError::Generation(format!("no valid trajectory after {MAX_ATTEMPTS} attempts")))
}

fn free_space(scene: &Scene, p: Vec3) -> bool {
    let room = &scene.room;
    let inside = (0..3).all(|k| p[k] > room.min[k] + WALL_MARGIN && p[k] < room.max[k] - WALL_MARGIN);
    inside && scene.objects.iter().all(|o| o.aabb().distance_to(p) > OBJECT_CLEARANCE)
}
