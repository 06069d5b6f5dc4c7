//! Model evaluation on held-out scenes, always paired with trivial
//! baselines.

use std::collections::BTreeMap;

use omniview_core::{
    decode_depth, decode_rgb, exact_match, sample_geometry, sample_views, trajectory_warp_grids, GeometryOptions, OmniView, PreparedSample,
    ViewRequest,
};
use omniview_geom::pose_error;
use omniview_worldgen::{MultiviewSample, QaCategory, Token, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::metrics::{depth_abs_rel, psnr, ssim};
use crate::{HarnessError, Result};

/// Categories whose accuracy forms the spatial-reasoning score.
pub const SPATIAL_CATEGORIES: [QaCategory; 2] = [QaCategory::RelativeDistance, QaCategory::AppearanceOrder];

/// Metric name of a model score mapped to the baseline it must be reported
/// with.
pub const BASELINE_PAIRS: [(&str, &str); 3] = [("em_spatial", "majority_em_spatial"), ("psnr", "copy_psnr"), ("depth_abs_rel", "mean_depth_abs_rel")];

/// Scores of one trained model on one held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub run_id: String,
    pub seed: u64,
    /// Short hash of the training configuration.
    pub fingerprint: String,
    pub metrics: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Checks every metric is finite and every model score has its baseline.
    pub fn new(run_id: impl Into<String>, seed: u64, fingerprint: impl Into<String>, metrics: BTreeMap<String, f64>) -> Result<Self> {
        let report = EvalReport { run_id: run_id.into(), seed, fingerprint: fingerprint.into(), metrics };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(HarnessError::Contract(format!("{}: metric {k} is {v}", self.run_id)));
        }
        for (score, base) in BASELINE_PAIRS {
            if self.metrics.contains_key(score) && !self.metrics.contains_key(base) {
                return Err(HarnessError::Contract(format!("{}: {score} reported without {base}", self.run_id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }
}

/// Short SHA-256 prefix identifying a configuration text.
pub fn fingerprint(config_text: &str) -> String {
    hex::encode(&Sha256::digest(config_text.as_bytes())[..8])
}

/// Most frequent training answer per category; ties go to the smallest
/// token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorityBaseline {
    pub answers: BTreeMap<QaCategory, Vec<Token>>,
}

impl MajorityBaseline {
    pub fn fit(train: &[MultiviewSample]) -> Self {
        let mut counts: BTreeMap<QaCategory, BTreeMap<Vec<Token>, usize>> = BTreeMap::new();
        for s in train {
            for qa in &s.qa {
                *counts.entry(qa.category).or_default().entry(qa.answer.clone()).or_default() += 1;
            }
        }
        let answers = counts
            .into_iter()
            .map(|(cat, c)| {
                let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))).map(|(k, _)| k.clone()).unwrap_or_default();
                (cat, best)
            })
            .collect();
        MajorityBaseline { answers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub qa: bool,
    /// Scenes used for view synthesis and geometry; 0 skips both.
    pub nvs_scenes: usize,
    pub sampler_steps: usize,
    /// Condition generated views on warps of the reference view.
    pub warp: bool,
    /// Frame-causal texture attention, matching how the model was trained.
    pub causal: bool,
    pub max_answer_tokens: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { qa: true, nvs_scenes: 0, sampler_steps: 10, warp: false, causal: true, max_answer_tokens: 6, seed: 0 }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Exact-match accuracy per category for the model and the majority
/// baseline, plus their means over the spatial categories.
pub fn qa_metrics(model: &OmniView, held_out: &[PreparedSample], majority: &MajorityBaseline, max_tokens: usize) -> Result<BTreeMap<String, f64>> {
    let vocab = Vocabulary::standard();
    let mut hits: BTreeMap<QaCategory, (usize, usize, usize)> = BTreeMap::new();
    for s in held_out {
        for qa in &s.qa {
            let pred = model.und.answer(&model.store, &s.rgb_latents, &qa.question, max_tokens)?;
            let gt = vocab.decode(&qa.answer)?;
            let ok = exact_match(&vocab.decode(&pred)?, &gt);
            let base = majority.answers.get(&qa.category).is_some_and(|a| exact_match(&vocab.decode(a).unwrap_or_default(), &gt));
            let e = hits.entry(qa.category).or_default();
            e.0 += ok as usize;
            e.1 += base as usize;
            e.2 += 1;
        }
    }
    let mut m = BTreeMap::new();
    for (cat, (ok, base, n)) in &hits {
        m.insert(format!("em_{}", cat.name()), *ok as f64 / *n as f64);
        m.insert(format!("majority_em_{}", cat.name()), *base as f64 / *n as f64);
    }
    let spatial = |prefix: &str| -> Option<f64> {
        let v: Vec<f64> = SPATIAL_CATEGORIES.iter().filter_map(|c| m.get(&format!("{prefix}{}", c.name())).copied()).collect();
        (v.len() == SPATIAL_CATEGORIES.len()).then(|| mean(&v))
    };
    if let (Some(a), Some(b)) = (spatial("em_"), spatial("majority_em_")) {
        m.insert("em_spatial".into(), a);
        m.insert("majority_em_spatial".into(), b);
    }
    Ok(m)
}

/// Single-view novel view synthesis: frame 0 is given, every later frame is
/// generated and scored against its render. The copy baseline scores
/// frame 0 itself against each later frame.
pub fn nvs_metrics(model: &OmniView, held_out: &[PreparedSample], opts: &EvalOptions) -> Result<BTreeMap<String, f64>> {
    let c = model.config;
    let (h, w, p) = (c.height, c.width, c.patch);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut ps, mut ss, mut cps, mut css) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in held_out {
        let warp = if opts.warp { Some(trajectory_warp_grids(&s.rgb[0], &s.depth[0], &s.cameras, h, w, p)?) } else { None };
        let req = ViewRequest {
            caption: &s.caption,
            context: &s.rgb_latents[..1],
            plucker: &s.plucker,
            warp: warp.as_deref(),
            steps: opts.sampler_steps,
            causal: opts.causal,
        };
        let frames = sample_views(model, &req, &mut rng)?;
        for f in 1..s.frames() {
            let img = decode_rgb(&frames[f], h, w, p)?;
            ps.push(psnr(&img, &s.rgb[f])?);
            cps.push(psnr(&s.rgb[0], &s.rgb[f])?);
            if h >= crate::metrics::SSIM_WINDOW && w >= crate::metrics::SSIM_WINDOW {
                ss.push(ssim(&img, &s.rgb[f], h, w)?);
                css.push(ssim(&s.rgb[0], &s.rgb[f], h, w)?);
            }
        }
    }
    let mut m = BTreeMap::new();
    m.insert("psnr".into(), mean(&ps));
    m.insert("copy_psnr".into(), mean(&cps));
    if !ss.is_empty() {
        m.insert("ssim".into(), mean(&ss));
        m.insert("copy_ssim".into(), mean(&css));
    }
    Ok(m)
}

/// Depth and pose generated from the clean frames of each scene. The depth
/// baseline predicts `train_mean_depth` everywhere.
pub fn geometry_metrics(model: &OmniView, held_out: &[PreparedSample], opts: &EvalOptions, cross_attention: bool, train_mean_depth: f64) -> Result<BTreeMap<String, f64>> {
    let c = model.config;
    let (h, w, p) = (c.height, c.width, c.patch);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let (mut rel, mut base, mut rot, mut trans) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in held_out {
        let warp = if opts.warp { Some(trajectory_warp_grids(&s.rgb[0], &s.depth[0], &s.cameras, h, w, p)?) } else { None };
        let gopts = GeometryOptions { steps: opts.sampler_steps, causal: opts.causal, cross_attention };
        let out = sample_geometry(model, &s.caption, &s.rgb_latents, &s.plucker, warp.as_deref(), gopts, &mut rng)?;
        let cams = out.cameras()?;
        for f in 0..s.frames() {
            let d = decode_depth(&out.depth_latents[f], h, w, p)?;
            rel.push(depth_abs_rel(&d, &s.depth[f])?);
            base.push(depth_abs_rel(&vec![train_mean_depth; h * w], &s.depth[f])?);
            let e = pose_error(&cams[f], &s.cameras[f]);
            rot.push(e.rotation_deg);
            trans.push(e.translation);
        }
    }
    let mut m = BTreeMap::new();
    m.insert("depth_abs_rel".into(), mean(&rel));
    m.insert("mean_depth_abs_rel".into(), mean(&base));
    m.insert("pose_rotation_deg".into(), mean(&rot));
    m.insert("pose_translation".into(), mean(&trans));
    Ok(m)
}

/// Mean ground-truth depth over a set of scenes.
pub fn mean_depth(samples: &[PreparedSample]) -> f64 {
    let v: Vec<f64> = samples.iter().flat_map(|s| s.depth.iter().flatten().copied()).collect();
    mean(&v)
}

/// Full evaluation. QA runs on every held-out scene; view synthesis and
/// geometry on the first `nvs_scenes`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &OmniView,
    held_out: &[PreparedSample],
    majority: &MajorityBaseline,
    train_mean_depth: f64,
    cross_attention: bool,
    opts: &EvalOptions,
    run_id: &str,
    seed: u64,
    fingerprint: &str,
) -> Result<EvalReport> {
    let mut m = BTreeMap::new();
    if opts.qa {
        m.extend(qa_metrics(model, held_out, majority, opts.max_answer_tokens)?);
    }
    if opts.nvs_scenes > 0 {
        let subset = &held_out[..opts.nvs_scenes.min(held_out.len())];
        m.extend(nvs_metrics(model, subset, opts)?);
        m.extend(geometry_metrics(model, subset, opts, cross_attention, train_mean_depth)?);
    }
    EvalReport::new(run_id, seed, fingerprint, m)
}
