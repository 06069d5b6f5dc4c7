//! Evaluation metrics, the ablation runner and report emission.

pub mod ablation;
pub mod eval;
pub mod metrics;
pub mod report;

pub use ablation::{
    cell_dir, read_report, run_ablation, summarize, write_report, AblationMatrix, AblationRow, AblationRowSpec, AblationTable, CellFailure,
    EvalSettings, MetricSummary, DEFAULT_SEEDS, REPORT_FILE,
};
pub use eval::{
    evaluate, fingerprint, geometry_metrics, mean_depth, nvs_metrics, qa_metrics, EvalOptions, EvalReport, MajorityBaseline, BASELINE_PAIRS,
    SPATIAL_CATEGORIES,
};
pub use metrics::{depth_abs_rel, luma, psnr, ssim, PSNR_CAP, SSIM_STRIDE, SSIM_WINDOW};
pub use report::{
    collect_runs, emit_report, loss_plot_svg, metric_bars_svg, metrics_jsonl, parse_reports_csv, reports_csv, row_label, summary_csv, LossCurve,
    LOSS_PLOT, METRICS_JSONL, REPORTS_CSV, SUMMARY_CSV,
};

use omniview_core::CoreError;
use omniview_geom::GeomError;
use omniview_train::TrainError;
use omniview_worldgen::WorldError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("ablation matrix: {0}")]
    Matrix(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
