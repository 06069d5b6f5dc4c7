//! Flow-matching view generator over `[caption][frame 0]…[frame F-1]`.
//! Visual tokens carry their noised latent, a Plücker-ray encoding of the
//! frame's camera, the frame's noise level and, optionally, a warped
//! point-cloud condition.

use std::rc::Rc;

use omniview_nn::{sinusoidal_embedding, AttentionMask, Graph, Init, LayerNorm, Linear, Mat, ModelConfig, ParamId, ParamStore, TransformerBlock, Var};
use omniview_worldgen::Token;
use rand::Rng;

use crate::flow::precondition_output;
use crate::{CoreError, Result};

/// Text keys are visible to every query; text queries see only text; a
/// frame-`f` query sees text and every token of frames `0..=f`.
pub fn frame_causal_mask(frames: usize, tokens_per_frame: usize, text_len: usize) -> AttentionMask {
    let n = text_len + frames * tokens_per_frame;
    AttentionMask::from_fn(n, n, |q, k| {
        if k < text_len {
            true
        } else if q < text_len {
            false
        } else {
            (q - text_len) / tokens_per_frame >= (k - text_len) / tokens_per_frame
        }
    })
}

#[derive(Debug, Clone)]
pub struct Texture {
    pub txt_proj: Linear,
    pub txt_pos: ParamId,
    pub latent_in: Linear,
    pub plucker_in: Linear,
    pub time_in: Linear,
    pub warp_in: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    pub out: Linear,
    pub head: PatchHead,
    config: ModelConfig,
}

/// Per-frame inputs to one texture pass. All slices have one entry per frame.
#[derive(Debug, Clone, Copy)]
pub struct TexInput<'a> {
    pub caption: &'a [Token],
    /// Noised RGB latents `[T, 3p²]`; clean for reference frames.
    pub latents: &'a [Mat],
    pub times: &'a [f64],
    /// Plücker grids `[T, 6p²]`.
    pub plucker: &'a [Mat],
    /// Warped RGB + validity grids `[T, 4p²]`, when conditioning on a point cloud.
    pub warp: Option<&'a [Mat]>,
    /// Frame-causal attention when true, full attention otherwise.
    pub causal: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TexForward {
    /// `[F·T, 3p²]` predicted noise.
    pub pred: Var,
    /// `[F·T, D]` last-layer hidden states (after the final norm).
    pub hidden: Var,
}

impl Texture {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d_model;
        let p2 = config.patch * config.patch;
        Texture {
            txt_proj: Linear::new(store, "tex.txt_proj", d, d, true, rng),
            txt_pos: store.add_init("tex.txt_pos", config.max_text, d, Init::Normal(0.02), rng),
            latent_in: Linear::new(store, "tex.latent_in", 3 * p2, d, true, rng),
            plucker_in: Linear::new(store, "tex.plucker_in", 6 * p2, d, false, rng),
            time_in: Linear::new(store, "tex.time_in", d, d, true, rng),
            warp_in: Linear::new(store, "tex.warp_in", 4 * p2, d, false, rng),
            blocks: (0..config.tex_layers)
                .map(|l| TransformerBlock::new(store, &format!("tex.block{l}"), d, config.n_heads, false, rng))
                .collect(),
            ln_f: LayerNorm::new(store, "tex.ln_f", d, rng),
            out: Linear::new(store, "tex.out", d, 3 * p2, true, rng),
            head: PatchHead::new(store, "tex.head", d, 3 * p2, Some(4 * p2), rng),
            config: *config,
        }
    }

    /// `tok_embed` is the understanding model's tied embedding / LM-head
    /// matrix through which caption tokens enter.
    pub fn forward(&self, g: &mut Graph, tok_embed: ParamId, inp: &TexInput) -> Result<TexForward> {
        let c = &self.config;
        let (t, d, p2) = (c.tokens_per_frame(), c.d_model, c.patch * c.patch);
        let nf = inp.latents.len();
        if nf == 0 || nf > c.max_frames {
            return Err(CoreError::Contract(format!("{nf} frames, expected 1..={}", c.max_frames)));
        }
        if inp.times.len() != nf || inp.plucker.len() != nf || inp.warp.is_some_and(|w| w.len() != nf) {
            return Err(CoreError::Contract("per-frame inputs disagree on frame count".into()));
        }
        check_grids(inp.latents, t, 3 * p2, "latent")?;
        check_grids(inp.plucker, t, 6 * p2, "plucker")?;
        if let Some(w) = inp.warp {
            check_grids(w, t, 4 * p2, "warp")?;
        }
        if inp.caption.len() > c.max_text || inp.caption.iter().any(|&x| x as usize >= c.vocab_size) {
            return Err(CoreError::Contract("caption too long or out of vocabulary".into()));
        }
        let nv = nf * t;
        let frame_of: Vec<usize> = (0..nv).map(|r| r / t).collect();

        let lat = g.constant(Mat::concat_rows(&inp.latents.iter().collect::<Vec<_>>()));
        let mut x = self.latent_in.forward(g, lat);
        let pl = g.constant(Mat::concat_rows(&inp.plucker.iter().collect::<Vec<_>>()));
        let pl = self.plucker_in.forward(g, pl);
        x = g.add(x, pl);
        let te = g.constant(Mat::from_fn(nf, d, |f, j| sinusoidal_embedding(inp.times[f], d)[j]));
        let te = self.time_in.forward(g, te);
        let te = g.gather_rows(te, frame_of);
        x = g.add(x, te);
        let warp = inp.warp.map(|w| g.constant(Mat::concat_rows(&w.iter().collect::<Vec<_>>())));
        if let Some(w) = warp {
            let w = self.warp_in.forward(g, w);
            x = g.add(x, w);
        }

        let nt = inp.caption.len();
        if nt > 0 {
            let emb = g.param(tok_embed);
            let cap = g.gather_rows(emb, inp.caption.iter().map(|&x| x as usize).collect());
            let cap = self.txt_proj.forward(g, cap);
            let pos = g.param(self.txt_pos);
            let pos = g.gather_rows(pos, (0..nt).collect());
            let cap = g.add(cap, pos);
            x = g.concat_rows(&[cap, x]);
        }

        let mask = inp.causal.then(|| Rc::new(frame_causal_mask(nf, t, nt)));
        for block in &self.blocks {
            x = block.forward(g, x, mask.clone(), None)?;
        }
        let h = self.ln_f.forward(g, x);
        let hidden = if nt > 0 { g.slice_rows(h, nt, nv) } else { h };
        let raw = self.out.forward(g, hidden);
        let fine = self.head.forward(g, hidden, lat, warp);
        let raw = g.add(raw, fine);
        let pred = precondition_output(g, raw, inp.latents, inp.times);
        Ok(TexForward { pred, hidden })
    }
}

/// Per-token decoder from the hidden state, the token's own noised patch and
/// its warp patch to a full patch. Patches are wider than tokens, so a
/// linear read-out of the hidden state alone spans only a subspace.
#[derive(Debug, Clone)]
pub struct PatchHead {
    pub from_hidden: Linear,
    pub from_patch: Linear,
    pub from_warp: Option<Linear>,
    pub out: Linear,
}

impl PatchHead {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, patch_dim: usize, warp_dim: Option<usize>, rng: &mut impl Rng) -> Self {
        let hd = 4 * d;
        PatchHead {
            from_hidden: Linear::new(store, &format!("{name}.hidden"), d, hd, true, rng),
            from_patch: Linear::new(store, &format!("{name}.patch"), patch_dim, hd, false, rng),
            from_warp: warp_dim.map(|w| Linear::new(store, &format!("{name}.warp"), w, hd, false, rng)),
            out: Linear::new(store, &format!("{name}.out"), hd, patch_dim, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, hidden: Var, patch: Var, warp: Option<Var>) -> Var {
        let a = self.from_hidden.forward(g, hidden);
        let b = self.from_patch.forward(g, patch);
        let mut x = g.add(a, b);
        if let (Some(l), Some(w)) = (&self.from_warp, warp) {
            let w = l.forward(g, w);
            x = g.add(x, w);
        }
        let x = g.gelu(x);
        self.out.forward(g, x)
    }
}

pub(crate) fn check_grids(grids: &[Mat], rows: usize, cols: usize, what: &str) -> Result<()> {
    match grids.iter().find(|m| m.shape() != (rows, cols)) {
        Some(m) => Err(CoreError::Contract(format!("{what} grid {:?}, expected ({rows}, {cols})", m.shape()))),
        None => Ok(()),
    }
}

/// Mean squared error between predicted and true noise over the tokens of
/// non-reference frames.
pub fn tex_loss(g: &mut Graph, pred: Var, noise: &[Mat], reference: &[bool]) -> Result<Var> {
    if noise.len() != reference.len() || noise.is_empty() {
        return Err(CoreError::Contract("noise and reference mask disagree".into()));
    }
    let t = noise[0].rows();
    let rows: Vec<usize> = (0..noise.len()).filter(|&f| !reference[f]).flat_map(|f| f * t..(f + 1) * t).collect();
    if rows.is_empty() {
        return Err(CoreError::Contract("every frame is a reference; nothing to denoise".into()));
    }
    let target = Mat::concat_rows(&noise.iter().collect::<Vec<_>>());
    if g.value(pred).shape() != target.shape() {
        return Err(CoreError::Contract(format!("prediction {:?} vs noise {:?}", g.value(pred).shape(), target.shape())));
    }
    Ok(g.mse_rows(pred, target, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_matches_loop_construction() {
        for frames in 1..=5 {
            for t in 1..=3 {
                for text in 0..=2 {
                    let m = frame_causal_mask(frames, t, text);
                    let n = text + frames * t;
                    for q in 0..n {
                        for k in 0..n {
                            let expected = if k < text {
                                true
                            } else if q < text {
                                false
                            } else {
                                let (fq, fk) = ((q - text) / t, (k - text) / t);
                                fk <= fq
                            };
                            assert_eq!(m.allows(q, k), expected, "F={frames} t={t} text={text} q={q} k={k}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_frame_is_fully_visible_and_later_frames_hidden() {
        let m = frame_causal_mask(1, 4, 0);
        assert!((0..4).all(|q| (0..4).all(|k| m.allows(q, k))));
        let m = frame_causal_mask(3, 2, 1);
        // frame 1 (tokens 3..5) cannot see frame 2 (tokens 5..7)
        assert!((3..5).all(|q| (5..7).all(|k| !m.allows(q, k))));
    }

    #[test]
    fn tex_loss_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let noise = vec![Mat::filled(2, 3, 1.0), Mat::filled(2, 3, 1.0)];
        let pred = g.constant(Mat::zeros(4, 3));
        let l = tex_loss(&mut g, pred, &noise, &[false, false]).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let same = g.constant(Mat::filled(4, 3, 1.0));
        let l = tex_loss(&mut g, same, &noise, &[true, false]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert!(tex_loss(&mut g, pred, &noise, &[true, true]).is_err());
    }
}
