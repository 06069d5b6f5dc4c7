//! One optimizer step per call for either stage.

use omniview_core::{trajectory_warp_grids, LossDraw, LossValues, LossVars, OmniView, PreparedSample};
use omniview_nn::{clip_grad_norm, warmup_lr, AdamW, AdamWConfig, Grads, Graph, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::curriculum::CurriculumState;
use crate::{Result, TrainError};

/// Stream lane for noise, timestep and question draws.
pub const DRAW_LANE: u64 = 0;
/// Stream lane for batch composition.
pub const BATCH_LANE: u64 = 1;

/// Losses averaged over a batch plus step bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    pub lr: f64,
    pub n_ref: usize,
    pub losses: LossValues,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// A prepared sample together with its stage-2 warp grids.
#[derive(Debug, Clone)]
pub struct WarpedSample {
    pub sample: PreparedSample,
    pub warp: Vec<Mat>,
}

impl WarpedSample {
    /// Warps frame 0, with its ground-truth depth, into every other frame.
    pub fn new(sample: PreparedSample, patch: usize) -> Result<Self> {
        let warp = trajectory_warp_grids(&sample.rgb[0], &sample.depth[0], &sample.cameras, sample.height, sample.width, patch)?;
        Ok(WarpedSample { sample, warp })
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: OmniView,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub iteration: u64,
}

impl Trainer {
    /// Applies the stage's freezing to `model`.
    pub fn new(config: TrainConfig, mut model: OmniView) -> Result<Self> {
        config.validate()?;
        let stage = config.stage_config();
        model.store.set_frozen(omniview_core::UND_PREFIX, false);
        for p in &stage.frozen_prefixes {
            model.store.set_frozen(p, true);
        }
        let optimizer = AdamW::new(AdamWConfig { weight_decay: config.weight_decay, ..AdamWConfig::default() });
        Ok(Trainer { model, config, optimizer, iteration: 0 })
    }

    /// Fresh model initialized from the config seed.
    pub fn from_config(config: TrainConfig) -> Result<Self> {
        let model = OmniView::new(config.model_config()?, config.seed)?;
        Self::new(config, model)
    }

    pub fn curriculum(&self) -> CurriculumState {
        let frames = self.model.config.max_frames;
        match self.config.stage {
            2 => CurriculumState { iteration: self.iteration, total_iterations: self.config.iters, n_ref: 1 },
            _ => CurriculumState::at(self.config.d2s, self.iteration, self.config.iters, frames),
        }
    }

    pub fn lr(&self) -> f64 {
        warmup_lr(self.iteration, self.config.iters, self.config.lr, self.config.warmup_frac)
    }

    /// Random stream for one iteration and lane, independent of how the run
    /// got here.
    pub fn iteration_rng(&self, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * self.iteration + lane);
        rng
    }

    /// Picks `batch` sample indices uniformly with replacement.
    pub fn batch_indices(&self, rng: &mut impl Rng, len: usize) -> Vec<usize> {
        (0..self.config.batch).map(|_| rng.random_range(0..len)).collect()
    }

    pub fn stage1_step(&mut self, batch: &[&PreparedSample]) -> Result<StepReport> {
        if self.config.stage != 1 {
            return Err(TrainError::Stage("stage-1 step on a stage-2 trainer".into()));
        }
        let n_ref = self.curriculum().n_ref;
        let opts = self.config.loss_options();
        let mut rng = self.iteration_rng(DRAW_LANE);
        let mut draws = Vec::with_capacity(batch.len());
        for s in batch {
            draws.push(LossDraw::sample(s, n_ref, &mut rng)?);
        }
        self.apply(n_ref, batch.len(), |model, i, g| Ok(model.stage1_losses(g, batch[i], &draws[i], &opts)?))
    }

    pub fn stage2_step(&mut self, batch: &[&WarpedSample]) -> Result<StepReport> {
        if self.config.stage != 2 {
            return Err(TrainError::Stage("stage-2 step on a stage-1 trainer".into()));
        }
        let opts = self.config.loss_options();
        let mut rng = self.iteration_rng(DRAW_LANE);
        let mut draws = Vec::with_capacity(batch.len());
        for s in batch {
            draws.push(LossDraw::sample(&s.sample, 1, &mut rng)?);
        }
        self.apply(1, batch.len(), |model, i, g| Ok(model.stage2_losses(g, &batch[i].sample, &batch[i].warp, &draws[i], &opts)?))
    }

    /// Averages losses and gradients over the batch, clips, and takes one
    /// AdamW step. A non-finite loss rejects the step before any update.
    fn apply(
        &mut self,
        n_ref: usize,
        n: usize,
        loss: impl Fn(&OmniView, usize, &mut Graph) -> Result<LossVars>,
    ) -> Result<StepReport> {
        if n == 0 {
            return Err(TrainError::Stage("empty batch".into()));
        }
        let mut grads = Grads::new(self.model.store.len());
        let mut sums = [0.0; 6];
        let mut seen = [false; 6];
        for i in 0..n {
            let mut g = Graph::new(&self.model.store);
            let vars = loss(&self.model, i, &mut g)?;
            let v = vars.values(&g);
            if !v.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { iteration: self.iteration });
            }
            for (k, x) in [v.und, v.tex, v.geo, v.depth, v.pose, Some(v.total)].into_iter().enumerate() {
                if let Some(x) = x {
                    sums[k] += x;
                    seen[k] = true;
                }
            }
            grads.merge(&g.backward(vars.total));
        }
        let inv = 1.0 / n as f64;
        grads.scale(inv);
        let mean = |k: usize| seen[k].then_some(sums[k] * inv);
        let losses = LossValues { und: mean(0), tex: mean(1), geo: mean(2), depth: mean(3), pose: mean(4), total: sums[5] * inv };
        let grad_norm = clip_grad_norm(&mut grads, self.config.clip);
        let lr = self.lr();
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        let report = StepReport { iteration: self.iteration, lr, n_ref, losses, grad_norm };
        self.iteration += 1;
        Ok(report)
    }
}
