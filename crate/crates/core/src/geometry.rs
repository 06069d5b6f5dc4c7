//! Depth denoiser and camera regressor over
//! `[texture latents][depth tokens][camera queries]`, optionally
//! cross-attending into understanding features.

use omniview_geom::DEFAULT_HUBER_DELTA;
use omniview_nn::{sinusoidal_embedding, Graph, Init, LayerNorm, Linear, Mat, ModelConfig, ParamId, ParamStore, TransformerBlock, Var};
use rand::Rng;

use crate::flow::precondition_output;
use crate::texture::{check_grids, PatchHead};
use crate::{CoreError, Result};

const SEG_TEXTURE: usize = 0;
const SEG_DEPTH: usize = 1;
const SEG_CAMERA: usize = 2;

#[derive(Debug, Clone)]
pub struct Geometry {
    pub tex_in: Linear,
    pub depth_in: Linear,
    pub time_in: Linear,
    pub cam_query: ParamId,
    pub frame_embed: ParamId,
    pub seg_embed: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub depth_out: Linear,
    pub depth_head: PatchHead,
    pub pose_ln: LayerNorm,
    pub pose_fc1: Linear,
    pub pose_fc2: Linear,
    config: ModelConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct GeoInput<'a> {
    /// `[F·T, D]` last-layer texture hidden states.
    pub tex_hidden: Var,
    /// Noised depth latents `[T, p²]` per frame.
    pub depth_latents: &'a [Mat],
    pub times: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct GeoForward {
    /// `[F·T, p²]` predicted depth noise.
    pub depth_pred: Var,
    /// `[F, 9]` decoded pose vectors.
    pub pose: Var,
}

/// Depth, pose and combined geometry loss terms.
#[derive(Debug, Clone, Copy)]
pub struct GeoLoss {
    pub depth: Option<Var>,
    pub pose: Option<Var>,
    pub total: Var,
}

impl Geometry {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d_model;
        let p2 = config.patch * config.patch;
        Geometry {
            tex_in: Linear::new(store, "geo.tex_in", d, d, true, rng),
            depth_in: Linear::new(store, "geo.depth_in", p2, d, true, rng),
            time_in: Linear::new(store, "geo.time_in", d, d, true, rng),
            cam_query: store.add_init("geo.cam_query", 1, d, Init::Normal(1.0), rng),
            frame_embed: store.add_init("geo.frame_embed", config.max_frames, d, Init::Normal(0.02), rng),
            seg_embed: store.add_init("geo.seg_embed", 3, d, Init::Normal(0.02), rng),
            pos_embed: store.add_init("geo.pos_embed", config.tokens_per_frame(), d, Init::Normal(0.02), rng),
            blocks: (0..config.geo_layers)
                .map(|l| TransformerBlock::new(store, &format!("geo.block{l}"), d, config.n_heads, true, rng))
                .collect(),
            ln_f: LayerNorm::new(store, "geo.ln_f", d, rng),
            depth_out: Linear::new(store, "geo.depth_out", d, p2, true, rng),
            depth_head: PatchHead::new(store, "geo.depth_head", d, p2, None, rng),
            pose_ln: LayerNorm::new(store, "geo.pose_ln", d, rng),
            pose_fc1: Linear::new(store, "geo.pose_fc1", d, d, true, rng),
            pose_fc2: Linear::new(store, "geo.pose_fc2", d, 9, true, rng),
            config: *config,
        }
    }

    /// Full self-attention over the concatenated sequence. With
    /// `cross_attention` on, every layer also attends into `f_und`, which is
    /// then required; with it off `f_und` is ignored.
    pub fn forward(&self, g: &mut Graph, inp: &GeoInput, f_und: Option<Var>, cross_attention: bool) -> Result<GeoForward> {
        let c = &self.config;
        let (t, d, p2) = (c.tokens_per_frame(), c.d_model, c.patch * c.patch);
        let nf = inp.depth_latents.len();
        if nf == 0 || nf > c.max_frames || inp.times.len() != nf {
            return Err(CoreError::Contract(format!("{nf} depth frames with {} times", inp.times.len())));
        }
        check_grids(inp.depth_latents, t, p2, "depth")?;
        let nv = nf * t;
        if g.value(inp.tex_hidden).shape() != (nv, d) {
            return Err(CoreError::Contract(format!("texture latents {:?}, expected ({nv}, {d})", g.value(inp.tex_hidden).shape())));
        }
        let ctx = match (cross_attention, f_und) {
            (true, None) => return Err(CoreError::Contract("cross-attention on but no understanding features".into())),
            (true, Some(f)) => Some(f),
            (false, _) => None,
        };

        let pos = g.param(self.pos_embed);
        let pos = g.gather_rows(pos, (0..nv).map(|r| r % t).collect());
        let fe = g.param(self.frame_embed);
        let fe_tok = g.gather_rows(fe, (0..nv).map(|r| r / t).collect());
        let seg = g.param(self.seg_embed);
        let base = g.add(pos, fe_tok);

        let xt = self.tex_in.forward(g, inp.tex_hidden);
        let xt = g.add(xt, base);
        let st = g.gather_rows(seg, vec![SEG_TEXTURE; nv]);
        let xt = g.add(xt, st);

        let dl = g.constant(Mat::concat_rows(&inp.depth_latents.iter().collect::<Vec<_>>()));
        let xd = self.depth_in.forward(g, dl);
        let te = g.constant(Mat::from_fn(nf, d, |f, j| sinusoidal_embedding(inp.times[f], d)[j]));
        let te = self.time_in.forward(g, te);
        let te = g.gather_rows(te, (0..nv).map(|r| r / t).collect());
        let xd = g.add(xd, te);
        let xd = g.add(xd, base);
        let sd = g.gather_rows(seg, vec![SEG_DEPTH; nv]);
        let xd = g.add(xd, sd);

        let q = g.param(self.cam_query);
        let xq = g.gather_rows(q, vec![0; nf]);
        let fq = g.gather_rows(fe, (0..nf).collect());
        let xq = g.add(xq, fq);
        let sq = g.gather_rows(seg, vec![SEG_CAMERA; nf]);
        let xq = g.add(xq, sq);

        let mut x = g.concat_rows(&[xt, xd, xq]);
        for block in &self.blocks {
            x = block.forward(g, x, None, ctx)?;
        }
        let h = self.ln_f.forward(g, x);
        let hd = g.slice_rows(h, nv, nv);
        let raw = self.depth_out.forward(g, hd);
        let fine = self.depth_head.forward(g, hd, dl, None);
        let raw = g.add(raw, fine);
        let depth_pred = precondition_output(g, raw, inp.depth_latents, inp.times);
        let hq = g.slice_rows(h, 2 * nv, nf);
        let hq = self.pose_ln.forward(g, hq);
        let hq = self.pose_fc1.forward(g, hq);
        let hq = g.gelu(hq);
        let raw = self.pose_fc2.forward(g, hq);
        let pose = g.pose_decode(raw);
        Ok(GeoForward { depth_pred, pose })
    }
}

/// Depth-noise MSE plus per-frame mean Huber pose loss. Either term can be
/// switched off; at least one must remain.
pub fn geo_loss(
    g: &mut Graph,
    out: &GeoForward,
    depth_noise: &[Mat],
    gt_poses: &[[f64; 9]],
    delta: f64,
    use_depth: bool,
    use_pose: bool,
) -> Result<GeoLoss> {
    if !use_depth && !use_pose {
        return Err(CoreError::Contract("geometry loss with both terms disabled".into()));
    }
    let depth = if use_depth {
        let target = Mat::concat_rows(&depth_noise.iter().collect::<Vec<_>>());
        if g.value(out.depth_pred).shape() != target.shape() {
            return Err(CoreError::Contract("depth prediction and noise shapes differ".into()));
        }
        let rows = (0..target.rows()).collect();
        Some(g.mse_rows(out.depth_pred, target, rows))
    } else {
        None
    };
    let pose = if use_pose {
        if g.value(out.pose).rows() != gt_poses.len() {
            return Err(CoreError::Contract("pose count differs from ground truth".into()));
        }
        let target = Mat::from_fn(gt_poses.len(), 9, |i, j| gt_poses[i][j]);
        Some(g.huber_rows(out.pose, target, delta))
    } else {
        None
    };
    let total = match (depth, pose) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!(),
    };
    Ok(GeoLoss { depth, pose, total })
}

/// Default Huber threshold for pose residuals.
pub const POSE_HUBER_DELTA: f64 = DEFAULT_HUBER_DELTA;
