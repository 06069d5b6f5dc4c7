use std::fs;

use omniview_core::{LossDraw, OmniView, PreparedSample};
use omniview_nn::{hash_params, Grads, Graph, Mat, NnError};
use omniview_train::*;
use omniview_worldgen::MultiviewSample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: &str = "model = desk\nmodel.patch = 4\nframes = 4\nsize = 16\ntrain_scenes = 16\nlr = 0.003\n";

fn config(extra: &str) -> TrainConfig {
    let mut cfg = TrainConfig::from_text(SMALL).unwrap();
    for line in extra.lines() {
        let (k, v) = line.split_once('=').unwrap();
        cfg.set(k.trim(), v.trim()).unwrap();
    }
    if cfg.stage == 2 {
        cfg.cross_attn = false;
    }
    cfg.validate().unwrap();
    cfg
}

fn data(cfg: &TrainConfig) -> (Vec<MultiviewSample>, Vec<PreparedSample>) {
    let mc = cfg.model_config().unwrap();
    let samples = load_samples(cfg, &mc).unwrap();
    let prepared = prepare(&samples, &mc).unwrap();
    (samples, prepared)
}

/// Mean stage-1 loss over every sample with fixed draws and one reference.
fn eval_stage1(model: &OmniView, cfg: &TrainConfig, prepared: &[PreparedSample]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let opts = cfg.loss_options();
    let mut sum = 0.0;
    for p in prepared {
        let d = LossDraw::sample(p, 1, &mut rng).unwrap();
        let mut g = Graph::new(&model.store);
        let l = model.stage1_losses(&mut g, p, &d, &opts).unwrap();
        sum += g.value(l.total).item();
    }
    sum / prepared.len() as f64
}

fn eval_stage2_tex(model: &OmniView, cfg: &TrainConfig, warped: &[WarpedSample]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let opts = cfg.loss_options();
    let mut sum = 0.0;
    for w in warped {
        let d = LossDraw::sample(&w.sample, 1, &mut rng).unwrap();
        let mut g = Graph::new(&model.store);
        let l = model.stage2_losses(&mut g, &w.sample, &w.warp, &d, &opts).unwrap();
        sum += g.value(l.tex.unwrap()).item();
    }
    sum / warped.len() as f64
}

#[test]
fn reported_total_is_the_weighted_sum() {
    let cfg = config("iters = 10\nbatch = 2\n");
    let (_, prepared) = data(&cfg);
    let mut t = Trainer::from_config(cfg).unwrap();
    for _ in 0..3 {
        let r = t.stage1_step(&[&prepared[0], &prepared[1]]).unwrap();
        let l = r.losses;
        let expect = 1.0 * l.und.unwrap() + 1.0 * l.tex.unwrap() + 0.1 * l.geo.unwrap();
        assert!((l.total - expect).abs() <= 1e-12 * expect.abs(), "{} vs {expect}", l.total);
        let geo = l.depth.unwrap() + l.pose.unwrap();
        assert!((l.geo.unwrap() - geo).abs() <= 1e-12 * geo);
    }
}

#[test]
fn zero_generation_weights_train_understanding_only() {
    let cfg = config("iters = 10\nlambda_tex = 0\nlambda_geo = 0\n");
    let (_, prepared) = data(&cfg);
    let mut t = Trainer::from_config(cfg).unwrap();
    let before = (hash_params(&t.model.store, "tex."), hash_params(&t.model.store, "geo."), hash_params(&t.model.store, "und."));
    // The first step runs at zero learning rate.
    for _ in 0..2 {
        let r = t.stage1_step(&[&prepared[3]]).unwrap();
        assert!(r.losses.tex.is_none() && r.losses.geo.is_none());
    }
    assert_eq!(hash_params(&t.model.store, "tex."), before.0);
    assert_eq!(hash_params(&t.model.store, "geo."), before.1);
    assert_ne!(hash_params(&t.model.store, "und."), before.2);
}

#[test]
fn stage_two_rejects_updates_to_understanding() {
    let cfg = config("stage = 2\niters = 5\n");
    let model = OmniView::new(cfg.model_config().unwrap(), 0).unwrap();
    let mut t = Trainer::new(cfg, model).unwrap();
    let id = t.model.und.tok_embed;
    let shape = t.model.store.value(id).shape();
    let mut grads = Grads::new(t.model.store.len());
    grads.accumulate(id, &Mat::filled(shape.0, shape.1, 1.0));
    let before = t.model.checkpoint_bytes();
    let err = t.optimizer.step(&mut t.model.store, &grads, 1e-3).unwrap_err();
    assert!(matches!(err, NnError::FrozenParameter(ref n) if n.starts_with("und.")));
    assert_eq!(t.model.checkpoint_bytes(), before);
    let (_, prepared) = data(&t.config);
    assert!(t.stage1_step(&[&prepared[0]]).is_err());
}

#[test]
fn stage_one_smoke_run_reduces_loss() {
    let cfg = config("iters = 300\nseed = 4\n");
    let (_, prepared) = data(&cfg);
    let mut t = Trainer::from_config(cfg.clone()).unwrap();
    let start = eval_stage1(&t.model, &cfg, &prepared);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    while t.iteration < cfg.iters {
        let idx = t.batch_indices(&mut rng, prepared.len());
        let batch: Vec<&PreparedSample> = idx.iter().map(|&i| &prepared[i]).collect();
        t.stage1_step(&batch).unwrap();
    }
    let end = eval_stage1(&t.model, &cfg, &prepared);
    assert!(end <= 0.7 * start, "loss {start} -> {end}");
}

#[test]
fn stage_two_smoke_run_reduces_texture_loss_and_keeps_understanding() {
    let cfg = config("stage = 2\niters = 300\nseed = 6\n");
    let (_, prepared) = data(&cfg);
    let mc = cfg.model_config().unwrap();
    let warped: Vec<WarpedSample> = prepared.into_iter().map(|p| WarpedSample::new(p, mc.patch).unwrap()).collect();
    let model = OmniView::new(mc, 6).unwrap();
    let und_hash = hash_params(&model.store, "und.");
    let mut t = Trainer::new(cfg.clone(), model).unwrap();
    let start = eval_stage2_tex(&t.model, &cfg, &warped);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    while t.iteration < cfg.iters {
        let idx = t.batch_indices(&mut rng, warped.len());
        let batch: Vec<&WarpedSample> = idx.iter().map(|&i| &warped[i]).collect();
        let r = t.stage2_step(&batch).unwrap();
        assert!(r.losses.und.is_none());
        if t.iteration == 100 {
            assert_eq!(hash_params(&t.model.store, "und."), und_hash);
        }
    }
    assert_eq!(hash_params(&t.model.store, "und."), und_hash);
    let end = eval_stage2_tex(&t.model, &cfg, &warped);
    assert!(end <= 0.7 * start, "texture loss {start} -> {end}");
}

#[test]
fn runs_are_deterministic_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("iters = 40\nbatch = 2\nlr = 0.00001\ncheckpoint_every = 15\n");
    let (samples, _) = data(&cfg);
    let a = run_training(&cfg, &samples, &dir.path().join("a"), None, false).unwrap();
    let b = run_training(&cfg, &samples, &dir.path().join("b"), None, false).unwrap();
    assert_eq!(a.checkpoint_hash, b.checkpoint_hash);
    assert_eq!(a.iterations, 40);

    let rows = read_metrics(&dir.path().join("a").join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.windows(2).all(|w| w[0].iteration < w[1].iteration));
    // Warmup covers the first 5% (two iterations); peak is reached exactly.
    assert_eq!(rows[2].lr, 1e-5);
    assert_eq!(rows[1].lr, 0.5e-5);
    assert!(rows.iter().all(|r| r.n_ref >= 1 && r.n_ref <= 3 && r.loss_und.is_some()));
    assert_eq!(rows[0].n_ref, 3);
    assert_eq!(rows[39].n_ref, 1);

    let stage2 = config("stage = 2\niters = 5");
    let s2 = run_training(&stage2, &samples, &dir.path().join("s2"), Some(&a.checkpoint), false).unwrap();
    let rows = read_metrics(&dir.path().join("s2").join(METRICS_FILE)).unwrap();
    assert!(rows.iter().all(|r| r.loss_und.is_none() && r.n_ref == 1));
    let text = fs::read_to_string(dir.path().join("s2").join(METRICS_FILE)).unwrap();
    assert!(!text.contains("loss_und"));
    let init = OmniView::from_checkpoint_bytes(&fs::read(&a.checkpoint).unwrap()).unwrap();
    assert_eq!(hash_params(&s2.model.store, "und."), hash_params(&init.store, "und."));
    assert!(run_training(&stage2, &samples, &dir.path().join("s2b"), None, false).is_err());
}

#[test]
fn resume_continues_and_rejects_damage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("iters = 12\ncheckpoint_every = 5\n");
    let (samples, _) = data(&cfg);
    let short = TrainConfig { iters: 5, ..cfg.clone() };
    let part = dir.path().join("part");
    run_training(&short, &samples, &part, None, false).unwrap();
    let resumed = run_training(&cfg, &samples, &part, None, true).unwrap();
    assert_eq!(resumed.iterations, 12);
    let rows = read_metrics(&part.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
    let again = dir.path().join("again");
    run_training(&short, &samples, &again, None, false).unwrap();
    assert_eq!(run_training(&cfg, &samples, &again, None, true).unwrap().checkpoint_hash, resumed.checkpoint_hash);

    let ck = part.join(CHECKPOINT_FILE);
    let bytes = fs::read(&ck).unwrap();
    fs::write(&ck, &bytes[..bytes.len() / 2]).unwrap();
    match run_training(&cfg, &samples, &part, None, true) {
        Err(TrainError::Load { path, .. }) => assert_eq!(path, ck),
        other => panic!("expected a load error, got {other:?}"),
    }
}
