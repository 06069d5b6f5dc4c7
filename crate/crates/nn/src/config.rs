use std::fmt::Write as _;

use crate::{NnError, Result};

/// Architecture hyperparameters shared by the three model modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub und_layers: usize,
    pub tex_layers: usize,
    pub geo_layers: usize,
    pub patch: usize,
    pub vocab_size: usize,
    pub max_frames: usize,
    pub max_text: usize,
    pub height: usize,
    pub width: usize,
    pub latent_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            und_layers: 4,
            tex_layers: 4,
            geo_layers: 4,
            patch: 4,
            vocab_size: 49,
            max_frames: 8,
            max_text: 48,
            height: 32,
            width: 32,
            latent_channels: 3,
        }
    }
}

const KEYS: [&str; 12] = [
    "d_model",
    "n_heads",
    "und_layers",
    "tex_layers",
    "geo_layers",
    "patch",
    "vocab_size",
    "max_frames",
    "max_text",
    "height",
    "width",
    "latent_channels",
];

impl ModelConfig {
    /// Tiny configuration for gradient checks: D=8, two layers per module,
    /// 4x4 images.
    pub fn micro() -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            und_layers: 2,
            tex_layers: 2,
            geo_layers: 2,
            patch: 2,
            max_frames: 3,
            max_text: 48,
            height: 4,
            width: 4,
            ..Self::default()
        }
    }

    /// Small configuration sized for single-core CPU training runs.
    pub fn desk() -> Self {
        ModelConfig { d_model: 32, n_heads: 2, und_layers: 2, tex_layers: 2, geo_layers: 4, patch: 8, ..Self::default() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "micro" => Ok(Self::micro()),
            "desk" => Ok(Self::desk()),
            other => Err(NnError::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn tokens_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NnError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.und_layers == 0 || self.tex_layers == 0 || self.geo_layers == 0 {
            return fail("every module needs at least one layer".into());
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) || self.height == 0 || self.width == 0 {
            return fail(format!("{}x{} images not divisible by patch {}", self.height, self.width, self.patch));
        }
        if self.vocab_size < 2 || self.max_frames == 0 || self.max_text == 0 || self.latent_channels == 0 {
            return fail("vocab_size, max_frames, max_text and latent_channels must be positive".into());
        }
        Ok(())
    }

    fn get(&self, key: &str) -> usize {
        match key {
            "d_model" => self.d_model,
            "n_heads" => self.n_heads,
            "und_layers" => self.und_layers,
            "tex_layers" => self.tex_layers,
            "geo_layers" => self.geo_layers,
            "patch" => self.patch,
            "vocab_size" => self.vocab_size,
            "max_frames" => self.max_frames,
            "max_text" => self.max_text,
            "height" => self.height,
            "width" => self.width,
            "latent_channels" => self.latent_channels,
            _ => unreachable!(),
        }
    }

    /// Sets one field by name. Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: usize) -> bool {
        let slot = match key {
            "d_model" => &mut self.d_model,
            "n_heads" => &mut self.n_heads,
            "und_layers" => &mut self.und_layers,
            "tex_layers" => &mut self.tex_layers,
            "geo_layers" => &mut self.geo_layers,
            "patch" => &mut self.patch,
            "vocab_size" => &mut self.vocab_size,
            "max_frames" => &mut self.max_frames,
            "max_text" => &mut self.max_text,
            "height" => &mut self.height,
            "width" => &mut self.width,
            "latent_channels" => &mut self.latent_channels,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output. Every key must be present
    /// exactly once; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let value: usize = v.parse().map_err(|_| NnError::Config(format!("line {}: bad integer {v:?}", n + 1)))?;
            if seen.contains(&k.to_string()) {
                return Err(NnError::Config(format!("duplicate key {k}")));
            }
            if !cfg.set(k, value) {
                return Err(NnError::Config(format!("unknown key {k}")));
            }
            seen.push(k.to_string());
        }
        if let Some(missing) = KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(NnError::Config(format!("missing key {missing}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["default", "micro", "desk"] {
            let c = ModelConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        }
        assert_eq!(ModelConfig::default().geo_layers, 4);
        assert_eq!(ModelConfig::default().tokens_per_frame(), 64);
    }

    #[test]
    fn rejects_bad_text() {
        let good = ModelConfig::micro().to_text();
        assert!(ModelConfig::from_text(&good.replace("n_heads = 2", "n_heads = 3")).is_err());
        assert!(ModelConfig::from_text(&good.replace("patch = 2", "")).is_err());
        assert!(ModelConfig::from_text(&format!("{good}bogus = 1\n")).is_err());
        assert!(ModelConfig::from_text(&format!("{good}patch = 2\n")).is_err());
    }
}
