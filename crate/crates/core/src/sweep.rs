//! The alpha/beta grid: one model per cell plus a check-in-count baseline,
//! each trained from the same seed and scored on the test split.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::ingest::{IdMaps, SplitDataset};
use crate::metrics::{evaluate, MetricsReport, ModelScorer, K_LIST};
use crate::model::{GetNextModel, ModelConfig};
use crate::pipeline::{prepare_graph, GraphOptions};
use crate::popularity::{PopularityParams, PopularitySource, DEFAULT_RECENCY_WINDOW};
use crate::train::{train, EpochRecord, TrainConfig};
use crate::{Error, Result};

pub const DEFAULT_GRID: [f64; 3] = [0.33, 0.50, 0.67];

pub const TSV_HEADER: &str = "alpha\tbeta\tacc@1\tacc@5\tacc@10\tacc@20\tmrr";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub recency_window: i64,
    pub graph: GraphOptions,
    pub train: TrainConfig,
    /// Template; `n_features` is set per run from the rebuilt features.
    pub model: ModelConfig,
}

impl SweepConfig {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Self {
        Self {
            alphas: DEFAULT_GRID.to_vec(),
            betas: DEFAULT_GRID.to_vec(),
            recency_window: DEFAULT_RECENCY_WINDOW,
            graph: GraphOptions::default(),
            train,
            model,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SweepResult {
    /// Alpha-major over the grid.
    pub rows: Vec<SweepRow>,
    pub baseline_row: MetricsReport,
}

/// Which popularity definition a single run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunSource {
    Grid { alpha: f64, beta: f64 },
    Baseline,
}

/// Trains one model with the given popularity definition and evaluates it
/// on the test split.
pub fn run_one(
    split: &SplitDataset,
    id_maps: &IdMaps,
    cfg: &SweepConfig,
    source: RunSource,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<MetricsReport> {
    let popularity = match source {
        RunSource::Grid { alpha, beta } => {
            PopularitySource::Recency(PopularityParams::anchored(alpha, beta, cfg.recency_window, &split.train)?)
        }
        RunSource::Baseline => PopularitySource::CheckinCount,
    };
    let graph = prepare_graph(&split.train, id_maps, &popularity, &cfg.graph)?;
    let model_cfg = ModelConfig {
        n_features: graph.features.cols,
        ..cfg.model.clone()
    };
    let model = GetNextModel::new(model_cfg, cfg.train.seed)?;
    let outcome = train(model, &graph.inputs, split, id_maps, &cfg.train, on_epoch)?;
    let scorer = ModelScorer::new(&outcome.model, &graph.inputs)?;
    let mut report = evaluate(&scorer, &split.test, id_maps, &K_LIST, cfg.train.eval_unit)?;
    if let RunSource::Grid { alpha, beta } = source {
        report.alpha = Some(alpha);
        report.beta = Some(beta);
    }
    Ok(report)
}

/// Runs every grid cell, then the baseline. `on_run` sees each finished
/// report as it completes.
pub fn sweep(
    split: &SplitDataset,
    id_maps: &IdMaps,
    cfg: &SweepConfig,
    mut on_run: impl FnMut(RunSource, &MetricsReport),
) -> Result<SweepResult> {
    if cfg.alphas.is_empty() || cfg.betas.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(cfg.alphas.len() * cfg.betas.len());
    for &alpha in &cfg.alphas {
        for &beta in &cfg.betas {
            let source = RunSource::Grid { alpha, beta };
            let report = run_one(split, id_maps, cfg, source, |_| {})?;
            on_run(source, &report);
            rows.push(SweepRow { alpha, beta, report });
        }
    }
    let baseline_row = run_one(split, id_maps, cfg, RunSource::Baseline, |_| {})?;
    on_run(RunSource::Baseline, &baseline_row);
    Ok(SweepResult { rows, baseline_row })
}

/// Tab-separated table: header, baseline row, then grid rows.
pub fn format_tsv(result: &SweepResult) -> String {
    let mut out = String::new();
    out.push_str(TSV_HEADER);
    out.push('\n');
    let metrics = |r: &MetricsReport| {
        let mut s = String::new();
        for k in K_LIST {
            let _ = write!(s, "\t{:.4}", r.acc(k));
        }
        let _ = write!(s, "\t{:.4}", r.mrr);
        s
    };
    let _ = writeln!(out, "baseline\tbaseline{}", metrics(&result.baseline_row));
    for row in &result.rows {
        let _ = writeln!(out, "{:.2}\t{:.2}{}", row.alpha, row.beta, metrics(&row.report));
    }
    out
}
