use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use omniview_core::{decode_depth, decode_rgb, sample_geometry, sample_views, trajectory_warp_grids, GeometryOptions, OmniView, PreparedSample, ViewRequest};
use omniview_harness::{
    collect_runs, emit_report, evaluate, fingerprint, mean_depth, run_ablation, write_report, AblationMatrix, EvalOptions, MajorityBaseline, SUMMARY_CSV,
};
use omniview_train::{load_samples, prepare, run_training, TrainConfig};
use omniview_worldgen::{generate_dataset, generate_sample, read_dataset, write_dataset, SampleSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "omniview", version, about = "Multi-view understanding and generation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file of rendered multi-view scenes.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Joint training of understanding, texture and geometry.
    TrainStage1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/stage1")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Generation refinement from a stage-1 checkpoint with understanding frozen.
    TrainStage2 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, default_value = "runs/stage2")]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Generate views, depth and cameras for one scene from its first frame.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file; without it the scene is generated from --scene-seed.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 424242)]
        scene_seed: u64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Condition on warps of the first frame (stage-2 models).
        #[arg(long)]
        warp: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training config; names the training data used for baselines.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 128)]
        held_out: usize,
        #[arg(long, default_value_t = 900_000)]
        held_out_seed: u64,
        #[arg(long, default_value_t = 32)]
        nvs_scenes: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value = "eval")]
        run_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every cell of an ablation matrix.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip cells that already hold a report for the same config.
        #[arg(long)]
        reuse: bool,
    },
    /// Regenerate CSV, JSON lines and plots from an ablation directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TrainConfig::from_text(&text)?)
}

fn train(config: &Path, init: Option<&Path>, out: &Path, resume: bool, stage: u8) -> Result<()> {
    let cfg = read_config(config)?;
    if cfg.stage != stage {
        bail!("{} is a stage-{} config", config.display(), cfg.stage);
    }
    let mc = match init {
        Some(p) => OmniView::from_checkpoint_bytes(&fs::read(p)?)?.config,
        None => cfg.model_config()?,
    };
    let samples = load_samples(&cfg, &mc)?;
    let outcome = run_training(&cfg, &samples, out, init, resume)?;
    println!("iterations {} rejected {}", outcome.iterations, outcome.rejected);
    if let Some(r) = outcome.last {
        println!("final loss {:.6}", r.losses.total);
    }
    println!("checkpoint {} sha256 {}", outcome.checkpoint.display(), outcome.checkpoint_hash);
    Ok(())
}

fn write_png(path: &Path, width: usize, height: usize, gray: bool, values: &[f64]) -> Result<()> {
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), width as u32, height as u32);
    enc.set_color(if gray { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    enc.write_header()?.write_image_data(&bytes)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample(checkpoint: &Path, data: Option<&Path>, index: usize, scene_seed: u64, steps: usize, warp: bool, seed: u64, out: &Path) -> Result<()> {
    let model = OmniView::from_checkpoint_bytes(&fs::read(checkpoint)?)?;
    let c = model.config;
    let scene = match data {
        Some(p) => read_dataset(p)?.into_iter().nth(index).context("scene index out of range")?,
        None => generate_sample(scene_seed, SampleSpec { frames: c.max_frames, height: c.height, width: c.width })?,
    };
    let prep = PreparedSample::new(&scene, &c)?;
    let grids = if warp { Some(trajectory_warp_grids(&prep.rgb[0], &prep.depth[0], &prep.cameras, c.height, c.width, c.patch)?) } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let req = ViewRequest { caption: &prep.caption, context: &prep.rgb_latents[..1], plucker: &prep.plucker, warp: grids.as_deref(), steps, causal: true };
    let frames = sample_views(&model, &req, &mut rng)?;
    let gopts = GeometryOptions { steps, causal: true, cross_attention: !warp };
    let geo = sample_geometry(&model, &prep.caption, &frames, &prep.plucker, grids.as_deref(), gopts, &mut rng)?;
    fs::create_dir_all(out)?;
    let mut cams = Vec::new();
    for f in 0..frames.len() {
        write_png(&out.join(format!("frame_{f:02}.png")), c.width, c.height, false, &decode_rgb(&frames[f], c.height, c.width, c.patch)?)?;
        write_png(&out.join(format!("truth_{f:02}.png")), c.width, c.height, false, &prep.rgb[f])?;
        let depth = decode_depth(&geo.depth_latents[f], c.height, c.width, c.patch)?;
        // Stored as 1 / (1 + d) so near surfaces are bright.
        let shown: Vec<f64> = depth.iter().map(|d| 1.0 / (1.0 + d)).collect();
        write_png(&out.join(format!("depth_{f:02}.png")), c.width, c.height, true, &shown)?;
        cams.extend(geo.poses[f].iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    fs::write(out.join("cameras.f32"), cams)?;
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(checkpoint: &Path, config: &Path, held_out: usize, held_out_seed: u64, nvs_scenes: usize, steps: usize, run_id: &str, out: &Path) -> Result<()> {
    let cfg = read_config(config)?;
    let model = OmniView::from_checkpoint_bytes(&fs::read(checkpoint)?)?;
    let c = model.config;
    let train = load_samples(&cfg, &c)?;
    let held = generate_dataset(held_out_seed, held_out, SampleSpec { frames: c.max_frames, height: c.height, width: c.width })?;
    if held.iter().any(|h| train.iter().any(|s| s.seed == h.seed)) {
        bail!("held-out scenes overlap the training scenes");
    }
    let held = prepare(&held, &c)?;
    let opts = EvalOptions { nvs_scenes, sampler_steps: steps, warp: cfg.stage == 2, causal: cfg.ar_mask, seed: cfg.seed, ..EvalOptions::default() };
    let depth = mean_depth(&prepare(&train, &c)?);
    let report = evaluate(&model, &held, &MajorityBaseline::fit(&train), depth, cfg.stage_config().cross_attention, &opts, run_id, cfg.seed, &fingerprint(&cfg.to_text()))?;
    for (k, v) in &report.metrics {
        println!("{k:<24} {v:.4}");
    }
    write_report(&report, out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { out, count, seed, frames, size } => {
            let samples = generate_dataset(seed, count, SampleSpec { frames, height: size, width: size })?;
            write_dataset(&samples, &out)?;
            println!("wrote {count} scenes to {}", out.display());
        }
        Command::TrainStage1 { config, out, resume } => train(&config, None, &out, resume, 1)?,
        Command::TrainStage2 { config, init, out, resume } => train(&config, Some(&init), &out, resume, 2)?,
        Command::Sample { checkpoint, data, index, scene_seed, steps, warp, seed, out } => {
            sample(&checkpoint, data.as_deref(), index, scene_seed, steps, warp, seed, &out)?
        }
        Command::Eval { checkpoint, config, held_out, held_out_seed, nvs_scenes, steps, run_id, out } => {
            eval(&checkpoint, &config, held_out, held_out_seed, nvs_scenes, steps, &run_id, &out)?
        }
        Command::Ablate { matrix, out, reuse } => {
            let m = AblationMatrix::from_file(&matrix)?;
            let table = run_ablation(&m, &out, reuse)?;
            for row in &table.rows {
                for f in &row.failures {
                    eprintln!("{} seed {} failed: {}", row.label, f.seed, f.error);
                }
            }
            let (reports, curves) = collect_runs(&out)?;
            emit_report(&reports, &curves, &out.join("report"))?;
            print!("{}", fs::read_to_string(out.join("report").join(SUMMARY_CSV))?);
        }
        Command::Report { input, out } => {
            let (reports, curves) = collect_runs(&input)?;
            let files = emit_report(&reports, &curves, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}
