use omniview_geom::vec3;
use omniview_geom::Camera;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::render::render_view;
use crate::scene::Scene;
use crate::vocab::{Token, Vocabulary};
use crate::{Result, WorldError};

/// Minimum gap between the two candidate distances in a relative-distance
/// question, so the answer is not decided by rounding.
const MIN_DISTANCE_GAP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum QaCategory {
    ObjectCount = 0,
    RelativeDistance = 1,
    AbsoluteDistanceBin = 2,
    AppearanceOrder = 3,
}

impl QaCategory {
    pub const ALL: [QaCategory; 4] = [
        QaCategory::ObjectCount,
        QaCategory::RelativeDistance,
        QaCategory::AbsoluteDistanceBin,
        QaCategory::AppearanceOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QaCategory::ObjectCount => "object_count",
            QaCategory::RelativeDistance => "relative_distance",
            QaCategory::AbsoluteDistanceBin => "absolute_distance_bin",
            QaCategory::AppearanceOrder => "appearance_order",
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        QaCategory::ALL.get(v as usize).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        QaCategory::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub category: QaCategory,
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
}

/// "a room with a red cube and a blue slab ..."
pub fn caption_tokens(scene: &Scene) -> Vec<Token> {
    let parts: Vec<String> =
        scene.objects.iter().map(|o| format!("a {} {}", o.color.word(), o.shape.word())).collect();
    let text = format!("a room with {}", parts.join(" and "));
    Vocabulary::standard().encode(&text).expect("caption grammar is in vocabulary")
}

/// Index of the first frame in which each object covers at least one pixel.
pub fn first_visible_frames(scene: &Scene, cameras: &[Camera], height: usize, width: usize) -> Result<Vec<Option<usize>>> {
    let mut first = vec![None; scene.objects.len()];
    for (f, cam) in cameras.iter().enumerate() {
        let view = render_view(scene, cam, height, width)?;
        for id in view.object_ids.iter().flatten() {
            first[*id].get_or_insert(f);
        }
    }
    Ok(first)
}

fn center_distance(scene: &Scene, a: usize, b: usize) -> f64 {
    vec3::norm(vec3::sub(scene.objects[a].center, scene.objects[b].center))
}

/// Distance bin word for a center-to-center distance: thirds of the room diagonal.
pub(crate) fn distance_bin(distance: f64, diagonal: f64) -> &'static str {
    if distance < diagonal / 3.0 {
        "near"
    } else if distance < 2.0 * diagonal / 3.0 {
        "mid"
    } else {
        "far"
    }
}

/// Builds one templated question with an answer computed exactly from the
/// scene geometry (and, for appearance order, from per-frame visibility).
pub fn make_qa(
    scene: &Scene,
    cameras: &[Camera],
    height: usize,
    width: usize,
    category: QaCategory,
    seed: u64,
) -> Result<QaPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((category as u64 + 1) << 56));
    let vocab = Vocabulary::standard();
    let color = |i: usize| scene.objects[i].color.word();
    let k = scene.objects.len();

    let (question, answer) = match category {
        QaCategory::ObjectCount => ("how many objects are in the room".to_string(), k.to_string()),
        QaCategory::RelativeDistance => {
            let mut triples = Vec::new();
            for c in 0..k {
                for a in 0..k {
                    for b in a + 1..k {
                        if a == c || b == c {
                            continue;
                        }
                        let (da, db) = (center_distance(scene, a, c), center_distance(scene, b, c));
                        if (da - db).abs() >= MIN_DISTANCE_GAP {
                            triples.push((c, a, b, if da < db { a } else { b }));
                        }
                    }
                }
            }
            let &(c, a, b, winner) = triples
                .choose(&mut rng)
                .ok_or_else(|| WorldError::Unsatisfiable(format!("relative distance needs 3 separable objects, scene has {k}")))?;
            let (first, second) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            (
                format!("which object is closer to the {} {} or {}", color(c), color(first), color(second)),
                color(winner).to_string(),
            )
        }
        QaCategory::AbsoluteDistanceBin => {
            let a = rng.random_range(0..k);
            let b = (a + rng.random_range(1..k)) % k;
            let bin = distance_bin(center_distance(scene, a, b), scene.room.diagonal());
            (format!("how far is the {} from the {}", color(a), color(b)), bin.to_string())
        }
        QaCategory::AppearanceOrder => {
            let first = first_visible_frames(scene, cameras, height, width)?;
            let mut pairs = Vec::new();
            for a in 0..k {
                for b in a + 1..k {
                    if let (Some(fa), Some(fb)) = (first[a], first[b]) {
                        if fa != fb {
                            pairs.push((a, b, if fa < fb { a } else { b }));
                        }
                    }
                }
            }
            let &(a, b, winner) = pairs
                .choose(&mut rng)
                .ok_or_else(|| WorldError::Unsatisfiable("no two objects first appear in different frames".into()))?;
            let (x, y) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            (format!("which object appears first {} or {}", color(x), color(y)), color(winner).to_string())
        }
    };
    Ok(QaPair { category, question: vocab.encode(&question)?, answer: vocab.encode(&answer)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, Aabb, Color, SceneObject, Shape};

    fn obj(x: f64, color: Color) -> SceneObject {
        SceneObject { center: [x, 0.3, 0.0], half: [0.2; 3], color, shape: Shape::Cube }
    }

    fn line_scene() -> Scene {
        Scene {
            room: Aabb { min: [-3.0, 0.0, -3.0], max: [3.0, 2.5, 3.0] },
            objects: vec![obj(0.0, Color::Green), obj(1.0, Color::Red), obj(-2.0, Color::Blue), obj(2.5, Color::Cyan)],
            seed: 0,
        }
    }

    fn answer_word(qa: &QaPair) -> String {
        Vocabulary::standard().decode(&qa.answer).unwrap()
    }

    #[test]
    fn object_count_answer() {
        let scene = line_scene();
        let qa = make_qa(&scene, &[], 8, 8, QaCategory::ObjectCount, 1).unwrap();
        assert_eq!(answer_word(&qa), "4");
    }

    #[test]
    fn relative_distance_is_argmin() {
        let scene = line_scene();
        let vocab = Vocabulary::standard();
        for seed in 0..50 {
            let qa = make_qa(&scene, &[], 8, 8, QaCategory::RelativeDistance, seed).unwrap();
            let q = vocab.decode(&qa.question).unwrap();
            let words: Vec<&str> = q.split(' ').collect();
            // "which object is closer to the C A or B"
            let (c, a, b) = (words[6], words[7], words[9]);
            let pos = |w: &str| scene.objects.iter().find(|o| o.color.word() == w).unwrap().center;
            let da = vec3::norm(vec3::sub(pos(a), pos(c)));
            let db = vec3::norm(vec3::sub(pos(b), pos(c)));
            assert_eq!(answer_word(&qa), if da < db { a } else { b });
        }
    }

    #[test]
    fn two_objects_cannot_ask_relative_distance() {
        let mut scene = line_scene();
        scene.objects.truncate(2);
        assert!(matches!(
            make_qa(&scene, &[], 8, 8, QaCategory::RelativeDistance, 0),
            Err(WorldError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn distance_bins_split_diagonal_in_thirds() {
        assert_eq!(distance_bin(0.9, 3.0), "near");
        assert_eq!(distance_bin(1.0, 3.0), "mid");
        assert_eq!(distance_bin(2.5, 3.0), "far");
    }

    #[test]
    fn caption_lists_objects() {
        let scene = line_scene();
        let text = Vocabulary::standard().decode(&caption_tokens(&scene)).unwrap();
        assert_eq!(text, "a room with a green cube and a red cube and a blue cube and a cyan cube");
    }

    #[test]
    fn categories_round_trip_through_u8_and_name() {
        for c in QaCategory::ALL {
            assert_eq!(QaCategory::from_u8(c as u8), Some(c));
            assert_eq!(QaCategory::from_name(c.name()), Some(c));
        }
        assert_eq!(QaCategory::from_u8(4), None);
    }

    #[test]
    fn generated_scenes_support_count_and_bins() {
        for seed in 0..20 {
            let scene = sample_scene(seed).unwrap();
            assert!(make_qa(&scene, &[], 8, 8, QaCategory::ObjectCount, seed).is_ok());
            assert!(make_qa(&scene, &[], 8, 8, QaCategory::AbsoluteDistanceBin, seed).is_ok());
        }
    }
}
