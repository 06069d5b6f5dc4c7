use omniview_geom::vec3::Vec3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Result, WorldError};

pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 6;
const MAX_PLACEMENT_RETRIES: usize = 1000;
/// Free gap kept between objects and between objects and walls.
const PLACEMENT_GAP: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center(center: Vec3, half: Vec3) -> Self {
        Aabb {
            min: [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
            max: [center[0] + half[0], center[1] + half[1], center[2] + half[2]],
        }
    }

    pub fn center(&self) -> Vec3 {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]), 0.5 * (self.min[2] + self.max[2])]
    }

    pub fn diagonal(&self) -> f64 {
        (0..3).map(|k| (self.max[k] - self.min[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Open-interval overlap test.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] < other.max[k] && other.min[k] < self.max[k])
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| self.min[k] < p[k] && p[k] < self.max[k])
    }

    /// Whether `other` lies strictly inside `self`.
    pub fn strictly_contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] < other.min[k] && other.max[k] < self.max[k])
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance_to(&self, p: Vec3) -> f64 {
        (0..3)
            .map(|k| (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Fixed eight-color palette; the color word doubles as the object's name in
/// questions and answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    Orange,
    Purple,
}

impl Color {
    pub const ALL: [Color; 8] =
        [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Cyan, Color::Magenta, Color::Orange, Color::Purple];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.9, 0.1, 0.1],
            Color::Green => [0.1, 0.8, 0.2],
            Color::Blue => [0.1, 0.2, 0.9],
            Color::Yellow => [0.95, 0.9, 0.1],
            Color::Cyan => [0.1, 0.85, 0.9],
            Color::Magenta => [0.9, 0.1, 0.8],
            Color::Orange => [1.0, 0.55, 0.05],
            Color::Purple => [0.5, 0.15, 0.7],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
            Color::Orange => "orange",
            Color::Purple => "purple",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Cube,
    Tower,
    Slab,
}

impl Shape {
    pub fn word(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Tower => "tower",
            Shape::Slab => "slab",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub center: Vec3,
    pub half: Vec3,
    pub color: Color,
    pub shape: Shape,
}

impl SceneObject {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center(self.center, self.half)
    }
}

/// Closed axis-aligned room holding a handful of colored cuboids. The floor is
/// at `y = 0` and +y points up.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: Aabb,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl Scene {
    /// Checks the structural invariants: object count, containment and
    /// pairwise disjointness.
    pub fn validate(&self) -> Result<()> {
        let k = self.objects.len();
        if !(MIN_OBJECTS..=MAX_OBJECTS).contains(&k) {
            return Err(WorldError::InvalidInput(format!("scene has {k} objects")));
        }
        for (a, oa) in self.objects.iter().enumerate() {
            if !self.room.strictly_contains(&oa.aabb()) {
                return Err(WorldError::InvalidInput(format!("object {a} leaves the room")));
            }
            for (b, ob) in self.objects.iter().enumerate().skip(a + 1) {
                if oa.aabb().intersects(&ob.aabb()) {
                    return Err(WorldError::InvalidInput(format!("objects {a} and {b} overlap")));
                }
            }
        }
        Ok(())
    }

    pub fn object_with_color(&self, color: Color) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.color == color)
    }
}

/// Samples a room and rejection-samples object placements. Deterministic in
/// `seed`; fails if placement does not succeed within the retry budget.
pub fn sample_scene(seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_w = rng.random_range(2.0..3.0);
    let half_d = rng.random_range(2.0..3.0);
    let height = rng.random_range(2.5..3.0);
    let room = Aabb { min: [-half_w, 0.0, -half_d], max: [half_w, height, half_d] };

    let k = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let mut palette = Color::ALL;
    palette.shuffle(&mut rng);

    let mut objects: Vec<SceneObject> = Vec::with_capacity(k);
    let mut retries = 0;
    while objects.len() < k {
        let shape = [Shape::Cube, Shape::Tower, Shape::Slab][rng.random_range(0..3)];
        let half = match shape {
            Shape::Cube => {
                let s = rng.random_range(0.2..0.4);
                [s, s, s]
            }
            Shape::Tower => [rng.random_range(0.15..0.3), rng.random_range(0.4..0.8), rng.random_range(0.15..0.3)],
            Shape::Slab => [rng.random_range(0.35..0.6), rng.random_range(0.1..0.2), rng.random_range(0.35..0.6)],
        };
        let lo_x = room.min[0] + half[0] + PLACEMENT_GAP;
        let lo_z = room.min[2] + half[2] + PLACEMENT_GAP;
        let center = [
            rng.random_range(lo_x..-lo_x),
            half[1] + 0.01,
            rng.random_range(lo_z..-lo_z),
        ];
        let candidate = SceneObject { center, half, color: palette[objects.len()], shape };
        let padded = Aabb::from_center(center, [half[0] + PLACEMENT_GAP, half[1], half[2] + PLACEMENT_GAP]);
        if objects.iter().all(|o| !padded.intersects(&o.aabb())) {
            objects.push(candidate);
        } else {
            retries += 1;
            if retries >= MAX_PLACEMENT_RETRIES {
                return Err(WorldError::Generation(format!(
                    "placed {} of {k} objects after {MAX_PLACEMENT_RETRIES} retries (seed {seed})",
                    objects.len()
                )));
            }
        }
    }
    let scene = Scene { room, objects, seed };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(sample_scene(42).unwrap(), sample_scene(42).unwrap());
        assert_ne!(sample_scene(42).unwrap(), sample_scene(43).unwrap());
    }

    #[test]
    fn many_seeds_respect_invariants() {
        let mut failures = 0;
        for seed in 0..10_000u64 {
            let scene = match sample_scene(seed) {
                Ok(s) => s,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            let k = scene.objects.len();
            assert!((MIN_OBJECTS..=MAX_OBJECTS).contains(&k));
            // independent AABB overlap oracle on raw extents
            for a in 0..k {
                for b in a + 1..k {
                    let (oa, ob) = (&scene.objects[a], &scene.objects[b]);
                    let overlap = (0..3).all(|ax| (oa.center[ax] - ob.center[ax]).abs() < oa.half[ax] + ob.half[ax]);
                    assert!(!overlap, "seed {seed}: objects {a},{b} overlap");
                }
            }
        }
        assert!(failures < 100, "{failures} placement failures");
    }

    #[test]
    fn colors_are_distinct() {
        for seed in 0..200 {
            let s = sample_scene(seed).unwrap();
            let mut colors: Vec<_> = s.objects.iter().map(|o| o.color).collect();
            colors.sort();
            colors.dedup();
            assert_eq!(colors.len(), s.objects.len());
        }
    }
}
