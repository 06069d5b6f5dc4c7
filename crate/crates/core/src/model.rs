//! The full model: understanding, texture and geometry modules sharing one
//! parameter store, and the per-sample loss assemblies of both stages.

use omniview_nn::{read_checkpoint_bytes, write_checkpoint_bytes, Graph, Mat, ModelConfig, ParamStore, Var};
use omniview_worldgen::Vocabulary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encode::PreparedSample;
use crate::flow::FlowBatch;
use crate::geometry::{geo_loss, GeoInput, Geometry, POSE_HUBER_DELTA};
use crate::texture::{tex_loss, TexInput, Texture};
use crate::understanding::{und_sequence, Understanding};
use crate::{CoreError, Result};

/// Parameter-name prefixes of the three modules.
pub const UND_PREFIX: &str = "und.";
pub const TEX_PREFIX: &str = "tex.";
pub const GEO_PREFIX: &str = "geo.";

#[derive(Debug, Clone)]
pub struct OmniView {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub und: Understanding,
    pub tex: Texture,
    pub geo: Geometry,
}

impl OmniView {
    /// Freshly initialized model; initialization is deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::standard().len();
        if config.vocab_size < vocab {
            return Err(CoreError::Contract(format!("vocab_size {} below vocabulary of {vocab}", config.vocab_size)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let und = Understanding::new(&mut store, &config, &mut rng);
        let tex = Texture::new(&mut store, &config, &mut rng);
        let geo = Geometry::new(&mut store, &config, &mut rng);
        Ok(OmniView { config, store, und, tex, geo })
    }

    /// Checkpoint bytes: parameters plus the model config as text.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        write_checkpoint_bytes(&self.store, &self.config.to_text())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = read_checkpoint_bytes(bytes)?;
        let config = ModelConfig::from_text(&ck.config_text)?;
        let mut model = Self::new(config, 0)?;
        ck.load_into(&mut model.store)?;
        Ok(model)
    }
}

/// Loss weights of the stage-1 objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub und: f64,
    pub tex: f64,
    pub geo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { und: 1.0, tex: 1.0, geo: 0.1 }
    }
}

/// Switches shared by both stages. `texture`, `geo_depth` and `geo_camera`
/// toggle individual loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub weights: LossWeights,
    pub ar_mask: bool,
    pub cross_attn: bool,
    pub texture: bool,
    pub geo_depth: bool,
    pub geo_camera: bool,
    pub huber_delta: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            weights: LossWeights::default(),
            ar_mask: true,
            cross_attn: true,
            texture: true,
            geo_depth: true,
            geo_camera: true,
            huber_delta: POSE_HUBER_DELTA,
        }
    }
}

impl LossOptions {
    fn und_active(&self) -> bool {
        self.weights.und > 0.0
    }

    fn tex_active(&self) -> bool {
        self.texture && self.weights.tex > 0.0
    }

    fn geo_active(&self) -> bool {
        self.weights.geo > 0.0 && (self.geo_depth || self.geo_camera)
    }
}

/// Random choices for one sample's loss: which question is asked, and the
/// texture and depth flow batches.
#[derive(Debug, Clone)]
pub struct LossDraw {
    pub qa: usize,
    pub tex: FlowBatch,
    pub depth: FlowBatch,
}

impl LossDraw {
    /// The first `n_ref` frames are clean texture references; every frame's
    /// depth gets its own noise level.
    pub fn sample(prep: &PreparedSample, n_ref: usize, rng: &mut impl Rng) -> Result<Self> {
        let nf = prep.frames();
        if n_ref == 0 || n_ref >= nf {
            return Err(CoreError::Contract(format!("{n_ref} references for {nf} frames")));
        }
        let qa = if prep.qa.is_empty() { 0 } else { rng.random_range(0..prep.qa.len()) };
        let tex = FlowBatch::sample(prep.rgb_latents.clone(), (0..nf).map(|f| f < n_ref).collect(), rng)?;
        let depth = FlowBatch::sample(prep.depth_latents.clone(), vec![false; nf], rng)?;
        Ok(LossDraw { qa, tex, depth })
    }
}

/// Loss nodes on a graph. Terms that were not computed are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub und: Option<Var>,
    pub tex: Option<Var>,
    pub geo: Option<Var>,
    pub depth: Option<Var>,
    pub pose: Option<Var>,
    pub total: Var,
}

/// Scalar loss values read off a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub und: Option<f64>,
    pub tex: Option<f64>,
    pub geo: Option<f64>,
    pub depth: Option<f64>,
    pub pose: Option<f64>,
    pub total: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Option<Var>| x.map(|x| g.value(x).item());
        LossValues {
            und: v(self.und),
            tex: v(self.tex),
            geo: v(self.geo),
            depth: v(self.depth),
            pose: v(self.pose),
            total: g.value(self.total).item(),
        }
    }
}

impl OmniView {
    /// Stage-1 objective `λ_und·L_und + λ_tex·L_tex + λ_geo·L_geo` on one
    /// sample. Terms with zero weight (or switched off) are skipped.
    pub fn stage1_losses(&self, g: &mut Graph, prep: &PreparedSample, draw: &LossDraw, opts: &LossOptions) -> Result<LossVars> {
        let need_und = opts.und_active() || (opts.geo_active() && opts.cross_attn);
        let need_tex = opts.tex_active() || opts.geo_active();
        let mut terms: Vec<(Var, f64)> = Vec::new();
        let (mut und_l, mut tex_l, mut geo_l) = (None, None, None);

        let mut f_und = None;
        if need_und {
            let qa = prep.qa.get(draw.qa).ok_or_else(|| CoreError::Contract("sample has no question".into()))?;
            let (text, targets) = und_sequence(&qa.question, &qa.answer);
            let fwd = self.und.forward(g, &prep.rgb_latents, &text)?;
            f_und = Some(fwd.f_und);
            if opts.und_active() {
                let l = self.und.loss(g, fwd.logits, targets);
                terms.push((l, opts.weights.und));
                und_l = Some(l);
            }
        }

        let mut geo = (None, None);
        if need_tex {
            let inp = TexInput {
                caption: &prep.caption,
                latents: &draw.tex.xt,
                times: &draw.tex.times,
                plucker: &prep.plucker,
                warp: None,
                causal: opts.ar_mask,
            };
            let tf = self.tex.forward(g, self.und.tok_embed, &inp)?;
            if opts.tex_active() {
                let l = tex_loss(g, tf.pred, &draw.tex.noise, &draw.tex.reference)?;
                terms.push((l, opts.weights.tex));
                tex_l = Some(l);
            }
            if opts.geo_active() {
                let gl = self.geometry_loss(g, tf.hidden, prep, draw, f_und, opts.cross_attn, opts)?;
                terms.push((gl.0, opts.weights.geo));
                geo_l = Some(gl.0);
                geo = (gl.1, gl.2);
            }
        }
        if terms.is_empty() {
            return Err(CoreError::Contract("every loss term is disabled".into()));
        }
        let total = g.weighted_sum(&terms);
        Ok(LossVars { und: und_l, tex: tex_l, geo: geo_l, depth: geo.0, pose: geo.1, total })
    }

    /// Stage-2 objective `λ_tex·L_tex + λ_geo·L_geo`: texture conditioned on
    /// `warp` grids (one per frame), geometry without understanding features.
    pub fn stage2_losses(&self, g: &mut Graph, prep: &PreparedSample, warp: &[Mat], draw: &LossDraw, opts: &LossOptions) -> Result<LossVars> {
        let inp = TexInput {
            caption: &prep.caption,
            latents: &draw.tex.xt,
            times: &draw.tex.times,
            plucker: &prep.plucker,
            warp: Some(warp),
            causal: opts.ar_mask,
        };
        let mut terms = Vec::new();
        let tf = self.tex.forward(g, self.und.tok_embed, &inp)?;
        let mut tex_l = None;
        if opts.tex_active() {
            let l = tex_loss(g, tf.pred, &draw.tex.noise, &draw.tex.reference)?;
            terms.push((l, opts.weights.tex));
            tex_l = Some(l);
        }
        let (mut geo_l, mut geo) = (None, (None, None));
        if opts.geo_active() {
            let gl = self.geometry_loss(g, tf.hidden, prep, draw, None, false, opts)?;
            terms.push((gl.0, opts.weights.geo));
            geo_l = Some(gl.0);
            geo = (gl.1, gl.2);
        }
        if terms.is_empty() {
            return Err(CoreError::Contract("every loss term is disabled".into()));
        }
        let total = g.weighted_sum(&terms);
        Ok(LossVars { und: None, tex: tex_l, geo: geo_l, depth: geo.0, pose: geo.1, total })
    }

    #[allow(clippy::too_many_arguments)]
    fn geometry_loss(
        &self,
        g: &mut Graph,
        tex_hidden: Var,
        prep: &PreparedSample,
        draw: &LossDraw,
        f_und: Option<Var>,
        cross: bool,
        opts: &LossOptions,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        let inp = GeoInput { tex_hidden, depth_latents: &draw.depth.xt, times: &draw.depth.times };
        let out = self.geo.forward(g, &inp, f_und, cross)?;
        let l = geo_loss(g, &out, &draw.depth.noise, &prep.poses, opts.huber_delta, opts.geo_depth, opts.geo_camera)?;
        Ok((l.total, l.depth, l.pose))
    }
}
