//! Inference: autoregressive view generation with the texture module and
//! joint depth/pose generation with the geometry module.

use omniview_geom::{Camera, PoseVector};
use omniview_nn::{Graph, Mat, Var};
use omniview_worldgen::{vocab::SEP, Token};
use rand::Rng;

use crate::flow::{euler_step, gaussian, time_grid};
use crate::geometry::GeoInput;
use crate::model::OmniView;
use crate::texture::TexInput;
use crate::{CoreError, Result};

/// Inputs of view generation. The first `context.len()` frames are given;
/// the remaining `plucker.len() - context.len()` frames are generated.
#[derive(Debug, Clone, Copy)]
pub struct ViewRequest<'a> {
    pub caption: &'a [Token],
    pub context: &'a [Mat],
    pub plucker: &'a [Mat],
    pub warp: Option<&'a [Mat]>,
    pub steps: usize,
    pub causal: bool,
}

/// Generates target frames one at a time. Each target starts from unit
/// Gaussian noise and is integrated over `steps` Euler steps while all
/// earlier frames sit clean at `t = 0`; later frames are not fed in.
/// Returns latents for every frame, context included, clamped to [-1, 1].
pub fn sample_views(model: &OmniView, req: &ViewRequest, rng: &mut impl Rng) -> Result<Vec<Mat>> {
    if req.steps == 0 {
        return Err(CoreError::Contract("sampler needs at least one step".into()));
    }
    let nf = req.plucker.len();
    if req.context.is_empty() || req.context.len() >= nf {
        return Err(CoreError::Contract(format!("{} context frames for {nf} frames", req.context.len())));
    }
    if req.warp.is_some_and(|w| w.len() != nf) {
        return Err(CoreError::Contract("warp grids disagree on frame count".into()));
    }
    let grid = time_grid(req.steps);
    let mut frames: Vec<Mat> = req.context.to_vec();
    let (rows, cols) = frames[0].shape();
    for f in req.context.len()..nf {
        let mut x = gaussian(rows, cols, rng);
        for k in 0..req.steps {
            let (t, t_next) = (grid[k], grid[k + 1]);
            let mut latents = frames.clone();
            latents.push(x.clone());
            let mut times = vec![0.0; f + 1];
            times[f] = t;
            let mut g = Graph::new(&model.store);
            let inp = TexInput {
                caption: req.caption,
                latents: &latents,
                times: &times,
                plucker: &req.plucker[..=f],
                warp: req.warp.map(|w| &w[..=f]),
                causal: req.causal,
            };
            let out = model.tex.forward(&mut g, model.und.tok_embed, &inp)?;
            let eps = g.value(out.pred).slice_rows(f * rows, rows);
            x = euler_step(&x, &eps, t, t_next);
        }
        frames.push(x.map(|v| v.clamp(-1.0, 1.0)));
    }
    Ok(frames)
}

/// Texture hidden states of clean frames, as fed to the geometry module.
pub fn texture_hidden(model: &OmniView, g: &mut Graph, caption: &[Token], latents: &[Mat], plucker: &[Mat], warp: Option<&[Mat]>, causal: bool) -> Result<Var> {
    let times = vec![0.0; latents.len()];
    let inp = TexInput { caption, latents, times: &times, plucker, warp, causal };
    Ok(model.tex.forward(g, model.und.tok_embed, &inp)?.hidden)
}

/// Understanding features of the visual tokens. The causal stack places
/// visual tokens first, so the features do not depend on the text; a lone
/// separator token is used.
pub fn understanding_features(model: &OmniView, g: &mut Graph, latents: &[Mat]) -> Result<Var> {
    Ok(model.und.forward(g, latents, &[SEP])?.f_und)
}

/// Depth latents and decoded poses of every frame.
#[derive(Debug, Clone)]
pub struct GeometrySample {
    pub depth_latents: Vec<Mat>,
    pub poses: Vec<[f64; 9]>,
}

impl GeometrySample {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.poses.iter().map(|p| Ok(Camera::from_pose_vector(&PoseVector(*p))?)).collect()
    }
}

/// Generates depth latents for all frames jointly over `steps` Euler steps
/// from Gaussian noise, conditioned on clean-frame texture latents and,
/// with `cross_attention`, on understanding features. Poses are read from
/// the final step's camera queries.
pub fn sample_geometry(
    model: &OmniView,
    caption: &[Token],
    latents: &[Mat],
    plucker: &[Mat],
    warp: Option<&[Mat]>,
    opts: GeometryOptions,
    rng: &mut impl Rng,
) -> Result<GeometrySample> {
    if opts.steps == 0 {
        return Err(CoreError::Contract("sampler needs at least one step".into()));
    }
    let nf = latents.len();
    let c = &model.config;
    let (rows, cols) = (c.tokens_per_frame(), c.patch * c.patch);

    // The conditioning is fixed across steps, so compute it once.
    let (hidden, f_und) = {
        let mut g = Graph::new(&model.store);
        let h = texture_hidden(model, &mut g, caption, latents, plucker, warp, opts.causal)?;
        let h = g.value(h).clone();
        let f = if opts.cross_attention {
            let f = understanding_features(model, &mut g, latents)?;
            Some(g.value(f).clone())
        } else {
            None
        };
        (h, f)
    };

    let grid = time_grid(opts.steps);
    let mut depth: Vec<Mat> = (0..nf).map(|_| gaussian(rows, cols, rng)).collect();
    let mut poses = Vec::new();
    for k in 0..opts.steps {
        let (t, t_next) = (grid[k], grid[k + 1]);
        let mut g = Graph::new(&model.store);
        let tex_hidden = g.constant(hidden.clone());
        let f = f_und.clone().map(|m| g.constant(m));
        let times = vec![t; nf];
        let out = model.geo.forward(&mut g, &GeoInput { tex_hidden, depth_latents: &depth, times: &times }, f, opts.cross_attention)?;
        let eps = g.value(out.depth_pred);
        depth = (0..nf).map(|fr| euler_step(&depth[fr], &eps.slice_rows(fr * rows, rows), t, t_next)).collect();
        if k + 1 == opts.steps {
            let p = g.value(out.pose);
            poses = (0..nf).map(|fr| std::array::from_fn(|j| p.get(fr, j))).collect();
        }
    }
    let depth_latents = depth.into_iter().map(|m| m.map(|v| v.clamp(-1.0, 1.0))).collect();
    Ok(GeometrySample { depth_latents, poses })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometryOptions {
    pub steps: usize,
    pub causal: bool,
    pub cross_attention: bool,
}
