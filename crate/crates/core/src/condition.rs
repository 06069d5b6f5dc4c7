//! Point-cloud warp conditioning: lift a reference view with its depth into
//! the world and splat it into each target camera.

use omniview_geom::{rasterize, unproject, Camera};
use omniview_nn::{patchify, Mat};

use crate::Result;

/// A reference view splatted into a target camera.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedView {
    /// `[H, W, 3]`, zero where `mask` is false.
    pub rgb: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WarpedView {
    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Unprojects the reference (`[H, W, 3]` RGB and `[H, W]` z-depth) and
/// rasterizes it into every target camera with z-buffering.
pub fn pointcloud_condition(
    rgb: &[f64],
    depth: &[f64],
    reference: &Camera,
    targets: &[Camera],
    height: usize,
    width: usize,
) -> Result<Vec<WarpedView>> {
    let cloud = unproject(depth, height, width, reference)?;
    let colors: Vec<[f64; 3]> = cloud.pixels.iter().map(|&k| [rgb[3 * k], rgb[3 * k + 1], rgb[3 * k + 2]]).collect();
    Ok(targets
        .iter()
        .map(|cam| {
            let r = rasterize(&cloud.points, &colors, cam, height, width);
            WarpedView { rgb: r.rgb, mask: r.mask }
        })
        .collect())
}

/// Patch grid `[T, 4p²]` of the warped RGB (scaled to `[-1, 1]`, zero where
/// invalid) and the validity mask.
pub fn warp_grid(view: &WarpedView, height: usize, width: usize, patch: usize) -> Result<Mat> {
    let mut buf = vec![0.0; height * width * 4];
    for k in 0..height * width {
        if view.mask[k] {
            for c in 0..3 {
                buf[4 * k + c] = 2.0 * view.rgb[3 * k + c] - 1.0;
            }
            buf[4 * k + 3] = 1.0;
        }
    }
    Ok(patchify(&buf, height, width, 4, patch)?)
}

/// Warp grids for a whole trajectory conditioned on frame 0: frame 0 itself
/// gets an all-zero grid, every other frame the warp of frame 0.
pub fn trajectory_warp_grids(
    rgb0: &[f64],
    depth0: &[f64],
    cameras: &[Camera],
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Vec<Mat>> {
    let views = pointcloud_condition(rgb0, depth0, &cameras[0], &cameras[1..], height, width)?;
    let t = (height / patch) * (width / patch);
    let mut grids = vec![Mat::zeros(t, 4 * patch * patch)];
    for v in &views {
        grids.push(warp_grid(v, height, width, patch)?);
    }
    Ok(grids)
}
