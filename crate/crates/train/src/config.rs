//! Flat `key = value` training configuration.

use std::collections::BTreeSet;
use std::path::PathBuf;

use omniview_core::{LossOptions, LossWeights, POSE_HUBER_DELTA};
use omniview_nn::ModelConfig;

use crate::curriculum::RefSchedule;
use crate::{Result, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub seed: u64,
    pub iters: u64,
    pub batch: usize,
    /// Overrides the model's frame count when set.
    pub frames: Option<usize>,
    /// Overrides the model's square image size when set.
    pub size: Option<usize>,
    pub lambda_und: f64,
    pub lambda_tex: f64,
    pub lambda_geo: f64,
    pub lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub huber_delta: f64,
    pub d2s: RefSchedule,
    pub ar_mask: bool,
    pub cross_attn: bool,
    pub texture: bool,
    pub geo_depth: bool,
    pub geo_camera: bool,
    pub model: String,
    pub model_overrides: Vec<(String, usize)>,
    pub data: Option<PathBuf>,
    pub train_scenes: usize,
    pub data_seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            stage: 1,
            seed: 0,
            iters: 1000,
            batch: 1,
            frames: None,
            size: None,
            lambda_und: w.und,
            lambda_tex: w.tex,
            lambda_geo: w.geo,
            lr: 1e-5,
            warmup_frac: 0.05,
            weight_decay: 0.01,
            clip: 1.0,
            huber_delta: POSE_HUBER_DELTA,
            d2s: RefSchedule::DenseToSparse,
            ar_mask: true,
            cross_attn: true,
            texture: true,
            geo_depth: true,
            geo_camera: true,
            model: "desk".into(),
            model_overrides: Vec::new(),
            data: None,
            train_scenes: 512,
            data_seed: 1000,
            checkpoint_every: 0,
        }
    }
}

/// Texture conditioning regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    ReferenceFrames,
    PointcloudWarp,
}

/// What a stage trains and how it conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageConfig {
    pub stage: u8,
    pub frozen_prefixes: Vec<&'static str>,
    pub cross_attention: bool,
    pub conditioning: Conditioning,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(TrainError::Config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| TrainError::Config(format!("{key}: cannot parse {v:?}")))
}

fn on_off(b: bool) -> &'static str {
    if b { "on" } else { "off" }
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
    /// keys are errors. A stage-2 config defaults `cross_attn` to off.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(TrainError::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
            cfg.set(k, v)?;
        }
        if cfg.stage == 2 && !seen.contains("cross_attn") {
            cfg.cross_attn = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key. Keys of the form `model.<field>` override a model
    /// hyperparameter of the chosen preset.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "stage" => self.stage = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "iters" => self.iters = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "frames" => self.frames = Some(parse(key, v)?),
            "size" => self.size = Some(parse(key, v)?),
            "lambda_und" => self.lambda_und = parse(key, v)?,
            "lambda_tex" => self.lambda_tex = parse(key, v)?,
            "lambda_geo" => self.lambda_geo = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "warmup_frac" => self.warmup_frac = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "huber_delta" => self.huber_delta = parse(key, v)?,
            "d2s" => self.d2s = v.parse().map_err(TrainError::Config)?,
            "ar_mask" => self.ar_mask = parse_bool(key, v)?,
            "cross_attn" => self.cross_attn = parse_bool(key, v)?,
            "texture" => self.texture = parse_bool(key, v)?,
            "geo_depth" => self.geo_depth = parse_bool(key, v)?,
            "geo_camera" => self.geo_camera = parse_bool(key, v)?,
            "model" => {
                ModelConfig::preset(v).map_err(|e| TrainError::Config(e.to_string()))?;
                self.model = v.to_string();
            }
            "data" => self.data = Some(PathBuf::from(v)),
            "train_scenes" => self.train_scenes = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => match key.strip_prefix("model.") {
                Some(field) => {
                    let value: usize = parse(key, v)?;
                    if !ModelConfig::default().set(field, value) {
                        return Err(TrainError::Config(format!("unknown model field {field}")));
                    }
                    self.model_overrides.retain(|(f, _)| f != field);
                    self.model_overrides.push((field.to_string(), value));
                }
                None => return Err(TrainError::Config(format!("unknown key {key}"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !matches!(self.stage, 1 | 2) {
            return bad("stage must be 1 or 2");
        }
        if self.iters == 0 || self.batch == 0 {
            return bad("iters and batch must be positive");
        }
        if [self.lambda_und, self.lambda_tex, self.lambda_geo].iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("loss weights must be finite and nonnegative");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("lr must be positive and warmup_frac in [0, 1]");
        }
        if !(self.clip > 0.0) || !(self.weight_decay >= 0.0) || !(self.huber_delta > 0.0) {
            return bad("clip and huber_delta must be positive, weight_decay nonnegative");
        }
        if self.stage == 2 && self.cross_attn {
            return bad("stage 2 runs the geometry module without cross-attention");
        }
        if self.train_scenes == 0 {
            return bad("train_scenes must be positive");
        }
        let m = self.model_config()?;
        if m.max_frames < 2 {
            return bad("need at least two frames");
        }
        Ok(())
    }

    /// Model hyperparameters: preset, then `model.*` overrides, then
    /// `frames` and `size`.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(&self.model).map_err(|e| TrainError::Config(e.to_string()))?;
        for (k, v) in &self.model_overrides {
            m.set(k, *v);
        }
        if let Some(f) = self.frames {
            m.max_frames = f;
        }
        if let Some(s) = self.size {
            m.height = s;
            m.width = s;
        }
        m.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(m)
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            weights: LossWeights { und: self.lambda_und, tex: self.lambda_tex, geo: self.lambda_geo },
            ar_mask: self.ar_mask,
            cross_attn: self.cross_attn,
            texture: self.texture,
            geo_depth: self.geo_depth,
            geo_camera: self.geo_camera,
            huber_delta: self.huber_delta,
        }
    }

    pub fn stage_config(&self) -> StageConfig {
        match self.stage {
            2 => StageConfig {
                stage: 2,
                frozen_prefixes: vec![omniview_core::UND_PREFIX],
                cross_attention: false,
                conditioning: Conditioning::PointcloudWarp,
            },
            _ => StageConfig {
                stage: 1,
                frozen_prefixes: Vec::new(),
                cross_attention: self.cross_attn,
                conditioning: Conditioning::ReferenceFrames,
            },
        }
    }

    /// Canonical text form. Parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("stage", self.stage.to_string());
        put("seed", self.seed.to_string());
        put("iters", self.iters.to_string());
        put("batch", self.batch.to_string());
        if let Some(f) = self.frames {
            put("frames", f.to_string());
        }
        if let Some(sz) = self.size {
            put("size", sz.to_string());
        }
        put("lambda_und", format!("{:?}", self.lambda_und));
        put("lambda_tex", format!("{:?}", self.lambda_tex));
        put("lambda_geo", format!("{:?}", self.lambda_geo));
        put("lr", format!("{:?}", self.lr));
        put("warmup_frac", format!("{:?}", self.warmup_frac));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("clip", format!("{:?}", self.clip));
        put("huber_delta", format!("{:?}", self.huber_delta));
        put("d2s", self.d2s.to_string());
        put("ar_mask", on_off(self.ar_mask).into());
        put("cross_attn", on_off(self.cross_attn).into());
        put("texture", on_off(self.texture).into());
        put("geo_depth", on_off(self.geo_depth).into());
        put("geo_camera", on_off(self.geo_camera).into());
        put("model", self.model.clone());
        for (k, v) in &self.model_overrides {
            put(&format!("model.{k}"), v.to_string());
        }
        if let Some(p) = &self.data {
            put("data", p.display().to_string());
        }
        put("train_scenes", self.train_scenes.to_string());
        put("data_seed", self.data_seed.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = TrainConfig::from_text("# ablation cell\nseed = 3\nlambda_geo = 0\nd2s = sparse # fixed\nmodel = micro\nmodel.d_model = 16\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.lambda_geo, 0.0);
        assert_eq!(cfg.d2s, RefSchedule::Sparse);
        let m = cfg.model_config().unwrap();
        assert_eq!((m.d_model, m.max_frames), (16, 3));
        assert_eq!(cfg.lr, 1e-5);
    }

    #[test]
    fn text_form_round_trips() {
        let cfg = TrainConfig::from_text("stage = 2\nframes = 4\nsize = 16\nlr = 0.001\nmodel.geo_layers = 3\ndata = /tmp/x.bin\n").unwrap();
        assert!(!cfg.cross_attn);
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "bogus = 1",
            "seed = 1\nseed = 2",
            "stage = 3",
            "stage = 2\ncross_attn = on",
            "lambda_tex = -1",
            "ar_mask = sometimes",
            "model.nope = 3",
            "model = huge",
            "iters",
            "frames = 1",
        ] {
            assert!(TrainConfig::from_text(text).is_err(), "{text:?} accepted");
        }
    }

    #[test]
    fn stage_two_freezes_understanding() {
        let s = TrainConfig::from_text("stage = 2").unwrap().stage_config();
        assert_eq!(s.frozen_prefixes, vec!["und."]);
        assert_eq!(s.conditioning, Conditioning::PointcloudWarp);
        assert!(!s.cross_attention);
    }
}
