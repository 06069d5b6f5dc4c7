//! Config-driven training runs with metrics logging, periodic atomic
//! checkpoints and resume.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use omniview_core::{OmniView, PreparedSample};
use omniview_nn::{read_checkpoint, write_checkpoint, Checkpoint, Mat, ModelConfig, ParamStore};
use omniview_worldgen::{generate_dataset, read_dataset, MultiviewSample, SampleSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::trainer::{StepReport, Trainer, WarpedSample, BATCH_LANE};
use crate::{Result, TrainError};

pub const CHECKPOINT_FILE: &str = "checkpoint.omck";
pub const OPTIMIZER_FILE: &str = "optimizer.omck";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.txt";

/// One line of the metrics log. Loss terms that were not computed are
/// omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub lr: f64,
    pub n_ref: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_und: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_tex: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_geo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_pose: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rejected: bool,
}

impl From<&StepReport> for MetricsRow {
    fn from(r: &StepReport) -> Self {
        let l = &r.losses;
        MetricsRow {
            iteration: r.iteration,
            lr: r.lr,
            n_ref: r.n_ref,
            loss_total: Some(l.total),
            loss_und: l.und,
            loss_tex: l.tex,
            loss_geo: l.geo,
            loss_depth: l.depth,
            loss_pose: l.pose,
            grad_norm: Some(r.grad_norm),
            rejected: false,
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Metrics(e.to_string())))
        .collect()
}

/// Hex SHA-256 of checkpoint bytes.
pub fn checkpoint_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Training scenes named by the config: a dataset file, or freshly
/// generated scenes shaped like the model.
pub fn load_samples(cfg: &TrainConfig, model: &ModelConfig) -> Result<Vec<MultiviewSample>> {
    match &cfg.data {
        Some(path) => Ok(read_dataset(path)?),
        None => {
            let spec = SampleSpec { frames: model.max_frames, height: model.height, width: model.width };
            Ok(generate_dataset(cfg.data_seed, cfg.train_scenes, spec)?)
        }
    }
}

pub fn prepare(samples: &[MultiviewSample], model: &ModelConfig) -> Result<Vec<PreparedSample>> {
    samples.iter().map(|s| Ok(PreparedSample::new(s, model)?)).collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: OmniView,
    pub iterations: u64,
    pub rejected: u64,
    pub last: Option<StepReport>,
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
}

fn save_state(trainer: &Trainer, out: &Path) -> Result<()> {
    let mut moments = ParamStore::new();
    for (id, p) in trainer.model.store.iter() {
        if let Some((m, v)) = trainer.optimizer.moments(id) {
            moments.add(format!("m.{}", p.name), m.clone());
            moments.add(format!("v.{}", p.name), v.clone());
        }
    }
    let header = format!("iteration = {}\nsteps = {}\n", trainer.iteration, trainer.optimizer.steps());
    write_checkpoint(&out.join(OPTIMIZER_FILE), &moments, &header)?;
    write_checkpoint(&out.join(CHECKPOINT_FILE), &trainer.model.store, &trainer.model.config.to_text())?;
    Ok(())
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Load { path: path.to_path_buf(), message: e.to_string() }
}

fn load_model(path: &Path) -> Result<OmniView> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e))?;
    OmniView::from_checkpoint_bytes(&bytes).map_err(|e| load_err(path, e))
}

fn restore_state(trainer: &mut Trainer, out: &Path) -> Result<()> {
    let path = out.join(OPTIMIZER_FILE);
    let ck: Checkpoint = read_checkpoint(&path).map_err(|e| load_err(&path, e))?;
    let mut iteration = None;
    let mut steps = None;
    for line in ck.config_text.lines() {
        match line.split_once(" = ") {
            Some(("iteration", v)) => iteration = v.parse().ok(),
            Some(("steps", v)) => steps = v.parse().ok(),
            _ => return Err(load_err(&path, format!("unexpected header line {line:?}"))),
        }
    }
    let (Some(iteration), Some(steps)) = (iteration, steps) else {
        return Err(load_err(&path, "missing iteration or step count"));
    };
    let mut moments = Vec::new();
    for (id, p) in trainer.model.store.iter() {
        let (Some(m), Some(v)) = (ck.entry(&format!("m.{}", p.name)), ck.entry(&format!("v.{}", p.name))) else {
            continue;
        };
        let to_mat = |e: &omniview_nn::CheckpointEntry| -> Result<Mat> {
            if e.dims != [p.value.rows(), p.value.cols()] {
                return Err(load_err(&path, format!("moment shape {:?} for {}", e.dims, p.name)));
            }
            Ok(Mat::from_vec(p.value.rows(), p.value.cols(), e.data.iter().map(|&x| x as f64).collect()))
        };
        moments.push((id, to_mat(m)?, to_mat(v)?));
    }
    trainer.optimizer.restore(steps, moments);
    trainer.iteration = iteration;
    Ok(())
}

/// Runs `cfg.iters` iterations into `out`. Stage 2 starts from `init`, a
/// stage-1 checkpoint. With `resume`, an existing checkpoint in `out` is
/// continued from; a damaged one is an error. Metrics rows at or after the
/// resumed iteration are dropped before appending.
pub fn run_training(cfg: &TrainConfig, samples: &[MultiviewSample], out: &Path, init: Option<&Path>, resume: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let resuming = resume && ck_path.exists();

    let model = if resuming {
        load_model(&ck_path)?
    } else if let Some(init) = init {
        load_model(init)?
    } else if cfg.stage == 2 {
        return Err(TrainError::Stage("stage 2 needs a stage-1 checkpoint".into()));
    } else {
        OmniView::new(cfg.model_config()?, cfg.seed)?
    };
    let mut trainer = Trainer::new(cfg.clone(), model)?;
    let metrics_path = out.join(METRICS_FILE);
    if resuming {
        restore_state(&mut trainer, out)?;
        let kept: Vec<MetricsRow> = if metrics_path.exists() {
            read_metrics(&metrics_path)?.into_iter().filter(|r| r.iteration < trainer.iteration).collect()
        } else {
            Vec::new()
        };
        let mut text = String::new();
        for r in &kept {
            text.push_str(&serde_json::to_string(r).map_err(|e| TrainError::Metrics(e.to_string()))?);
            text.push('\n');
        }
        fs::write(&metrics_path, text)?;
    } else {
        fs::write(&metrics_path, "")?;
    }
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;

    let mc = trainer.model.config;
    let prepared = prepare(samples, &mc)?;
    if prepared.is_empty() {
        return Err(TrainError::Stage("no training samples".into()));
    }
    let warped = if cfg.stage == 2 {
        prepared.iter().map(|p| WarpedSample::new(p.clone(), mc.patch)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut log = fs::OpenOptions::new().append(true).open(&metrics_path)?;
    let mut rejected = 0;
    let mut last = None;
    while trainer.iteration < cfg.iters {
        let mut rng = trainer.iteration_rng(BATCH_LANE);
        let idx = trainer.batch_indices(&mut rng, prepared.len());
        let result = if cfg.stage == 2 {
            let batch: Vec<&WarpedSample> = idx.iter().map(|&i| &warped[i]).collect();
            trainer.stage2_step(&batch)
        } else {
            let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &prepared[i]).collect();
            trainer.stage1_step(&batch)
        };
        let row = match result {
            Ok(report) => {
                last = Some(report);
                MetricsRow::from(&report)
            }
            Err(e) if e.is_rejection() => {
                rejected += 1;
                let row = MetricsRow {
                    iteration: trainer.iteration,
                    lr: trainer.lr(),
                    n_ref: trainer.curriculum().n_ref,
                    loss_total: None,
                    loss_und: None,
                    loss_tex: None,
                    loss_geo: None,
                    loss_depth: None,
                    loss_pose: None,
                    grad_norm: None,
                    rejected: true,
                };
                trainer.iteration += 1;
                row
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", serde_json::to_string(&row).map_err(|e| TrainError::Metrics(e.to_string()))?)?;
        if cfg.checkpoint_every > 0 && trainer.iteration % cfg.checkpoint_every == 0 && trainer.iteration < cfg.iters {
            save_state(&trainer, out)?;
        }
    }
    save_state(&trainer, out)?;
    let bytes = fs::read(&ck_path)?;
    Ok(RunOutcome {
        iterations: trainer.iteration,
        rejected,
        last,
        checkpoint_hash: checkpoint_hash(&bytes),
        checkpoint: ck_path,
        model: trainer.model,
    })
}
