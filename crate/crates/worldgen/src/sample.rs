use omniview_geom::{Camera, PoseVector, POSE_DIM};

use crate::qa::{caption_tokens, make_qa, QaCategory, QaPair};
use crate::render::render_view;
use crate::scene::sample_scene;
use crate::trajectory::sample_trajectory;
use crate::vocab::Token;
use crate::{Result, WorldError};

/// Shape of a generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec { frames: 8, height: 32, width: 32 }
    }
}

/// One training unit: a rendered trajectory through a scene plus its caption
/// and questions. Pixel, depth and camera payloads are kept in the `f32`
/// precision they are stored with on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewSample {
    pub seed: u64,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    /// `[F, H, W, 3]` in `[0, 1]`.
    pub frames: Vec<f32>,
    /// `[F, H, W]` z-depth.
    pub depth: Vec<f32>,
    /// One pose record per frame, in `PoseVector` order.
    pub poses: Vec<[f32; POSE_DIM]>,
    pub caption: Vec<Token>,
    pub qa: Vec<QaPair>,
}

impl MultiviewSample {
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = 3 * self.pixels_per_frame();
        &self.frames[f * n..(f + 1) * n]
    }

    pub fn depth_map(&self, f: usize) -> &[f32] {
        let n = self.pixels_per_frame();
        &self.depth[f * n..(f + 1) * n]
    }

    pub fn camera(&self, f: usize) -> Camera {
        Camera::from_pose_vector(&PoseVector::from_f32(&self.poses[f])).expect("stored poses are valid cameras")
    }

    pub fn cameras(&self) -> Vec<Camera> {
        (0..self.frame_count).map(|f| self.camera(f)).collect()
    }

    pub fn qa_for(&self, category: QaCategory) -> Option<&QaPair> {
        self.qa.iter().find(|q| q.category == category)
    }
}

/// SplitMix64 step, used to derive independent per-sample seeds.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene, trajectory, renders, caption and one question per satisfiable
/// category, all derived from `seed`.
pub fn generate_sample(seed: u64, spec: SampleSpec) -> Result<MultiviewSample> {
    let SampleSpec { frames, height, width } = spec;
    if frames < 2 || height == 0 || width == 0 || frames > u16::MAX as usize || height > u16::MAX as usize || width > u16::MAX as usize {
        return Err(WorldError::InvalidInput(format!("bad sample shape {frames}x{height}x{width}")));
    }
    let scene = sample_scene(seed)?;
    let trajectory = sample_trajectory(&scene, frames, seed)?;
    // Quantize first so renders agree exactly with the stored cameras.
    let poses: Vec<[f32; POSE_DIM]> = trajectory.iter().map(|c| c.pose_vector().to_f32()).collect();
    let cameras = poses
        .iter()
        .map(|p| Camera::from_pose_vector(&PoseVector::from_f32(p)))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let n = height * width;
    let mut rgb = Vec::with_capacity(frames * n * 3);
    let mut depth = Vec::with_capacity(frames * n);
    for cam in &cameras {
        let view = render_view(&scene, cam, height, width)?;
        rgb.extend(view.rgb.iter().map(|&v| v as f32));
        depth.extend(view.depth.iter().map(|&v| v as f32));
    }

    let mut qa = Vec::new();
    for category in QaCategory::ALL {
        match make_qa(&scene, &cameras, height, width, category, seed) {
            Ok(pair) => qa.push(pair),
            Err(WorldError::Unsatisfiable(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(MultiviewSample {
        seed,
        frame_count: frames,
        height,
        width,
        frames: rgb,
        depth,
        poses,
        caption: caption_tokens(&scene),
        qa,
    })
}

/// `count` samples with per-index derived seeds. An index whose scene cannot
/// be generated is reseeded deterministically.
pub fn generate_dataset(base_seed: u64, count: usize, spec: SampleSpec) -> Result<Vec<MultiviewSample>> {
    (0..count as u64)
        .map(|i| {
            let mut last_err = None;
            for attempt in 0..16u64 {
                match generate_sample(sample_seed(base_seed ^ attempt.wrapping_mul(0xA5A5_A5A5), i), spec) {
                    Ok(s) => return Ok(s),
                    Err(e @ WorldError::Generation(_)) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_sample_shapes() {
        let spec = SampleSpec { frames: 3, height: 8, width: 10 };
        let s = generate_sample(11, spec).unwrap();
        assert_eq!(s.frames.len(), 3 * 8 * 10 * 3);
        assert_eq!(s.depth.len(), 3 * 8 * 10);
        assert_eq!(s.poses.len(), 3);
        assert!(s.depth.iter().all(|d| *d > 0.0));
        assert!(s.frames.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.qa_for(QaCategory::ObjectCount).is_some());
        assert_eq!(s.frame(2).len(), 240);
    }

    #[test]
    fn dataset_is_deterministic() {
        let spec = SampleSpec { frames: 2, height: 4, width: 4 };
        assert_eq!(generate_dataset(5, 3, spec).unwrap(), generate_dataset(5, 3, spec).unwrap());
    }

    #[test]
    fn seeds_differ_per_index() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| sample_seed(1, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
