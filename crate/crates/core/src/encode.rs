//! Pixel-space latents: RGB and inverse-depth patch grids, Plücker patch
//! grids, and per-sample preparation for the model.

use omniview_geom::{plucker_map, Camera};
use omniview_nn::{patchify, unpatchify, Mat, ModelConfig};
use omniview_worldgen::{MultiviewSample, QaPair, Token};

use crate::{CoreError, Result};

/// `[h, w, 3]` RGB in `[0, 1]` to a `[(h/p)·(w/p), 3p²]` grid in `[-1, 1]`.
pub fn encode_rgb(rgb: &[f64], h: usize, w: usize, p: usize) -> Result<Mat> {
    let scaled: Vec<f64> = rgb.iter().map(|v| 2.0 * v - 1.0).collect();
    Ok(patchify(&scaled, h, w, 3, p)?)
}

/// Inverse of [`encode_rgb`], clamped to `[0, 1]`.
pub fn decode_rgb(latent: &Mat, h: usize, w: usize, p: usize) -> Result<Vec<f64>> {
    Ok(unpatchify(latent, h, w, 3, p)?.into_iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect())
}

/// Depth to inverse-depth `u = 1/(1+d)` mapped to `2u - 1`, patchified.
pub fn encode_depth(depth: &[f64], h: usize, w: usize, p: usize) -> Result<Mat> {
    if let Some(d) = depth.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(CoreError::Contract(format!("depth must be positive and finite, got {d}")));
    }
    let u: Vec<f64> = depth.iter().map(|d| 2.0 / (1.0 + d) - 1.0).collect();
    Ok(patchify(&u, h, w, 1, p)?)
}

/// Smallest inverse depth accepted by [`decode_depth`]; bounds decoded depth.
const MIN_U: f64 = 1e-4;
const MAX_U: f64 = 1.0 - 1e-9;

/// Inverse of [`encode_depth`]. Latents outside the valid range are clamped
/// so decoded depth is always positive and finite.
pub fn decode_depth(latent: &Mat, h: usize, w: usize, p: usize) -> Result<Vec<f64>> {
    Ok(unpatchify(latent, h, w, 1, p)?
        .into_iter()
        .map(|x| {
            let u = ((x + 1.0) * 0.5).clamp(MIN_U, MAX_U);
            1.0 / u - 1.0
        })
        .collect())
}

/// Plücker map of `camera` patchified to `[(h/p)·(w/p), 6p²]`.
pub fn encode_plucker(camera: &Camera, h: usize, w: usize, p: usize) -> Result<Mat> {
    let map = plucker_map(camera, h, w)?;
    Ok(patchify(&map.values, h, w, 6, p)?)
}

/// A sample converted to the model's latent grids. Computed once per sample
/// and reused across iterations.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<Vec<f64>>,
    pub depth: Vec<Vec<f64>>,
    pub rgb_latents: Vec<Mat>,
    pub depth_latents: Vec<Mat>,
    pub plucker: Vec<Mat>,
    pub cameras: Vec<Camera>,
    pub poses: Vec<[f64; 9]>,
    pub caption: Vec<Token>,
    pub qa: Vec<QaPair>,
}

impl PreparedSample {
    pub fn new(sample: &MultiviewSample, config: &ModelConfig) -> Result<Self> {
        let (h, w, p) = (sample.height, sample.width, config.patch);
        if (h, w) != (config.height, config.width) {
            return Err(CoreError::Contract(format!(
                "sample is {h}x{w}, model expects {}x{}",
                config.height, config.width
            )));
        }
        if sample.frame_count > config.max_frames {
            return Err(CoreError::Contract(format!("{} frames exceed max_frames {}", sample.frame_count, config.max_frames)));
        }
        let mut out = PreparedSample {
            seed: sample.seed,
            height: h,
            width: w,
            rgb: Vec::new(),
            depth: Vec::new(),
            rgb_latents: Vec::new(),
            depth_latents: Vec::new(),
            plucker: Vec::new(),
            cameras: sample.cameras(),
            poses: Vec::new(),
            caption: sample.caption.clone(),
            qa: sample.qa.clone(),
        };
        for f in 0..sample.frame_count {
            let rgb: Vec<f64> = sample.frame(f).iter().map(|&v| v as f64).collect();
            let depth: Vec<f64> = sample.depth_map(f).iter().map(|&v| v as f64).collect();
            out.rgb_latents.push(encode_rgb(&rgb, h, w, p)?);
            out.depth_latents.push(encode_depth(&depth, h, w, p)?);
            out.plucker.push(encode_plucker(&out.cameras[f], h, w, p)?);
            out.poses.push(out.cameras[f].pose_vector().0);
            out.rgb.push(rgb);
            out.depth.push(depth);
        }
        Ok(out)
    }

    pub fn frames(&self) -> usize {
        self.rgb.len()
    }
}
