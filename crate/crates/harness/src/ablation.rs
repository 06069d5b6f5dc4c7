//! Ablation matrices: named rows of config changes trained and evaluated
//! over several seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use omniview_core::{OmniView, PreparedSample};
use omniview_train::{load_samples, prepare, run_training, TrainConfig, CHECKPOINT_FILE, CONFIG_FILE};
use omniview_worldgen::{generate_dataset, MultiviewSample, SampleSpec};
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, fingerprint, mean_depth, EvalOptions, EvalReport, MajorityBaseline};
use crate::{HarnessError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

/// Evaluation settings of a matrix, overridable per row with `eval.<key>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub held_out: usize,
    pub held_out_seed: u64,
    pub nvs_scenes: usize,
    pub sampler_steps: usize,
    pub qa: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { held_out: 128, held_out_seed: 900_000, nvs_scenes: 0, sampler_steps: 10, qa: true }
    }
}

impl EvalSettings {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = || HarnessError::Matrix(format!("eval.{key}: cannot parse {v:?}"));
        match key {
            "held_out" => self.held_out = v.parse().map_err(|_| bad())?,
            "held_out_seed" => self.held_out_seed = v.parse().map_err(|_| bad())?,
            "nvs_scenes" => self.nvs_scenes = v.parse().map_err(|_| bad())?,
            "sampler_steps" => self.sampler_steps = v.parse().map_err(|_| bad())?,
            "qa" => {
                self.qa = match v {
                    "on" => true,
                    "off" => false,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(HarnessError::Matrix(format!("unknown eval key {key}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRowSpec {
    pub label: String,
    /// Training config changes relative to the base section.
    pub diff: Vec<(String, String)>,
    pub seeds: Vec<u64>,
    /// For stage-2 rows: the row whose checkpoint (same seed) is refined.
    pub init_row: Option<String>,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationMatrix {
    pub base: Vec<(String, String)>,
    pub eval: EvalSettings,
    pub rows: Vec<AblationRowSpec>,
}

fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = v
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| HarnessError::Matrix(format!("bad seed list {v:?}"))))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(HarnessError::Matrix("empty seed list".into()));
    }
    Ok(seeds)
}

impl AblationMatrix {
    /// Sections: `[base]` holds training keys shared by every row, `[eval]`
    /// evaluation settings, and each `[row <label>]` a config diff plus
    /// optional `seeds = 1,2,3`, `init = <row>` and `eval.<key>` lines.
    pub fn from_text(text: &str) -> Result<Self> {
        enum Section {
            None,
            Base,
            Eval,
            Row(usize),
        }
        let mut m = AblationMatrix { base: Vec::new(), eval: EvalSettings::default(), rows: Vec::new() };
        let mut row_eval: Vec<Vec<(String, String)>> = Vec::new();
        let mut section = Section::None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(head) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let head = head.trim();
                section = match head {
                    "base" => Section::Base,
                    "eval" => Section::Eval,
                    _ => match head.strip_prefix("row ") {
                        Some(label) => {
                            let label = label.trim().to_string();
                            if label.is_empty() || label.contains(['/', '\\']) || m.rows.iter().any(|r| r.label == label) {
                                return Err(HarnessError::Matrix(format!("line {}: bad or repeated row label {label:?}", n + 1)));
                            }
                            m.rows.push(AblationRowSpec { label, diff: Vec::new(), seeds: DEFAULT_SEEDS.to_vec(), init_row: None, eval: m.eval });
                            row_eval.push(Vec::new());
                            Section::Row(m.rows.len() - 1)
                        }
                        None => return Err(HarnessError::Matrix(format!("line {}: unknown section [{head}]", n + 1))),
                    },
                };
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Matrix(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            match section {
                Section::None => return Err(HarnessError::Matrix(format!("line {}: key outside a section", n + 1))),
                Section::Base => m.base.push((k, v)),
                Section::Eval => m.eval.set(&k, &v)?,
                Section::Row(i) => match k.as_str() {
                    "seeds" => m.rows[i].seeds = parse_seeds(&v)?,
                    "init" => m.rows[i].init_row = Some(v),
                    _ => match k.strip_prefix("eval.") {
                        Some(e) => row_eval[i].push((e.to_string(), v)),
                        None => m.rows[i].diff.push((k, v)),
                    },
                },
            }
        }
        // Row eval settings start from the final [eval] section.
        for (row, overrides) in m.rows.iter_mut().zip(row_eval) {
            row.eval = m.eval;
            for (k, v) in overrides {
                row.eval.set(&k, &v)?;
            }
        }
        for (i, row) in m.rows.iter().enumerate() {
            row.config(&m.base, 0)?;
            if let Some(init) = &row.init_row {
                if !m.rows[..i].iter().any(|r| &r.label == init) {
                    return Err(HarnessError::Matrix(format!("row {}: init row {init} must appear earlier", row.label)));
                }
            }
        }
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

impl AblationRowSpec {
    /// Training config of one cell: defaults, then base, then the row diff,
    /// then the seed.
    pub fn config(&self, base: &[(String, String)], seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut keys = Vec::new();
        for (k, v) in base.iter().chain(&self.diff) {
            cfg.set(k, v)?;
            keys.push(k.as_str());
        }
        if cfg.stage == 2 && !keys.contains(&"cross_attn") {
            cfg.cross_attn = false;
        }
        cfg.seed = seed;
        cfg.validate()?;
        if cfg.stage == 2 && self.init_row.is_none() {
            return Err(HarnessError::Matrix(format!("stage-2 row {} needs init = <row>", self.label)));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub reports: Vec<EvalReport>,
    pub failures: Vec<CellFailure>,
}

/// Mean and sample standard deviation of a metric across a row's seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl AblationRow {
    pub fn summary(&self) -> BTreeMap<String, MetricSummary> {
        let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.reports {
            for (k, v) in &r.metrics {
                by.entry(k.clone()).or_default().push(*v);
            }
        }
        by.into_iter().map(|(k, v)| (k, summarize(&v))).collect()
    }
}

pub fn summarize(v: &[f64]) -> MetricSummary {
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    MetricSummary { mean, std, n }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn reports(&self) -> Vec<EvalReport> {
        self.rows.iter().flat_map(|r| r.reports.iter().cloned()).collect()
    }
}

pub fn cell_dir(out: &Path, label: &str, seed: u64) -> PathBuf {
    out.join(label).join(format!("seed{seed}"))
}

/// Datasets shared by the cells of one matrix, keyed by what generates them.
#[derive(Default)]
struct DataCache {
    train: BTreeMap<String, (Vec<MultiviewSample>, MajorityBaseline, f64)>,
    held_out: BTreeMap<String, Vec<PreparedSample>>,
}

/// Trains and evaluates every (row, seed) cell in order. A failing cell is
/// recorded and the run continues. With `reuse`, a cell whose directory
/// already holds a report for an identical config is not retrained.
pub fn run_ablation(matrix: &AblationMatrix, out: &Path, reuse: bool) -> Result<AblationTable> {
    fs::create_dir_all(out)?;
    let mut cache = DataCache::default();
    let mut rows = Vec::new();
    for spec in &matrix.rows {
        let mut row = AblationRow { label: spec.label.clone(), reports: Vec::new(), failures: Vec::new() };
        for &seed in &spec.seeds {
            match run_cell(matrix, spec, seed, out, reuse, &mut cache) {
                Ok(r) => row.reports.push(r),
                Err(e) => row.failures.push(CellFailure { seed, error: e.to_string() }),
            }
        }
        rows.push(row);
    }
    Ok(AblationTable { rows })
}

fn run_cell(matrix: &AblationMatrix, spec: &AblationRowSpec, seed: u64, out: &Path, reuse: bool, cache: &mut DataCache) -> Result<EvalReport> {
    let cfg = spec.config(&matrix.base, seed)?;
    let dir = cell_dir(out, &spec.label, seed);
    let report_path = dir.join(REPORT_FILE);
    if reuse && report_path.exists() && fs::read_to_string(dir.join(CONFIG_FILE)).ok().as_deref() == Some(cfg.to_text().as_str()) {
        return read_report(&report_path);
    }

    let init = spec.init_row.as_ref().map(|r| cell_dir(out, r, seed).join(CHECKPOINT_FILE));
    let mc = match &init {
        Some(path) => OmniView::from_checkpoint_bytes(&fs::read(path)?)?.config,
        None => cfg.model_config()?,
    };
    let train_key = format!("{:?}|{}|{}|{}|{}|{}", cfg.data, cfg.data_seed, cfg.train_scenes, mc.max_frames, mc.height, mc.width);
    if !cache.train.contains_key(&train_key) {
        let samples = load_samples(&cfg, &mc)?;
        let prepared = prepare(&samples, &mc)?;
        let majority = MajorityBaseline::fit(&samples);
        let depth = mean_depth(&prepared);
        cache.train.insert(train_key.clone(), (samples, majority, depth));
    }
    let (samples, majority, depth) = &cache.train[&train_key];

    let ev = spec.eval;
    let held_key = format!("{}|{}|{}|{}|{}", ev.held_out_seed, ev.held_out, mc.max_frames, mc.height, mc.width);
    if !cache.held_out.contains_key(&held_key) {
        let spec = SampleSpec { frames: mc.max_frames, height: mc.height, width: mc.width };
        let held = generate_dataset(ev.held_out_seed, ev.held_out, spec)?;
        if held.iter().any(|h| samples.iter().any(|s| s.seed == h.seed)) {
            return Err(HarnessError::Contract("held-out scenes overlap the training scenes".into()));
        }
        cache.held_out.insert(held_key.clone(), prepare(&held, &mc)?);
    }
    let held = &cache.held_out[&held_key];

    let outcome = run_training(&cfg, samples, &dir, init.as_deref(), false)?;
    let opts = EvalOptions {
        qa: ev.qa,
        nvs_scenes: ev.nvs_scenes,
        sampler_steps: ev.sampler_steps,
        warp: cfg.stage == 2,
        causal: cfg.ar_mask,
        seed,
        ..EvalOptions::default()
    };
    let stage = cfg.stage_config();
    let run_id = format!("{}/seed{seed}", spec.label);
    let report = evaluate(&outcome.model, held, majority, *depth, stage.cross_attention, &opts, &run_id, seed, &fingerprint(&cfg.to_text()))?;
    write_report(&report, &report_path)?;
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    run_id: String,
    seed: u64,
    fingerprint: String,
    metrics: BTreeMap<String, f64>,
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let j = ReportJson { run_id: report.run_id.clone(), seed: report.seed, fingerprint: report.fingerprint.clone(), metrics: report.metrics.clone() };
    let text = serde_json::to_string_pretty(&j).map_err(|e| HarnessError::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let j: ReportJson = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    EvalReport::new(j.run_id, j.seed, j.fingerprint, j.metrics)
}
