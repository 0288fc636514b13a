//! The subcommands. Each reads its inputs from the run config, writes its
//! artifacts under `output_dir` and returns what it printed.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use poirec_core::ingest::{
    build_id_maps, filter_sparse, segment_trajectories, split_dataset, CheckInDataset, ConflictKind, DatasetStats,
    RawCheckInRecord, SplitDataset, Trajectory,
};
use poirec_core::metrics::{evaluate, ModelScorer, K_LIST};
use poirec_core::model::GetNextModel;
use poirec_core::pipeline::{prepare_graph, PreparedGraph};
use poirec_core::popularity::{PopularityParams, PopularitySource};
use poirec_core::sweep::{format_tsv, sweep, RunSource};
use poirec_core::synthetic::{markov_dataset, MarkovSpec};
use poirec_core::train::train;

use crate::artifacts::{
    bundle_path, checkpoint_path, read_json, to_json, write_json, write_text, Bundle, Checkpoint, MetricsArtifact,
    EDGES_FILE, FORMAT_VERSION, METRICS_FILE, POPULARITY_FILE, SWEEP_FILE, TRAIN_LOG_FILE,
};
use crate::config::RunConfig;
use crate::error::{CliError, CoreContext, Result};
use crate::format::{format_checkins, parse_checkins, ParsedLog};

/// Every intermediate of preprocessing, kept for inspection.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub parsed: ParsedLog,
    pub filtered: Vec<RawCheckInRecord>,
    pub dataset: CheckInDataset,
    pub trajectories: Vec<Trajectory>,
    pub stats: DatasetStats,
    pub split: SplitDataset,
}

/// Reads and parses the dataset file, aborting when too many lines are bad.
pub fn read_log(cfg: &RunConfig) -> Result<ParsedLog> {
    let path = &cfg.dataset_path;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let parsed = parse_checkins(BufReader::new(file), &cfg.format()).map_err(|e| CliError::io(path, e))?;
    for m in parsed.malformed.iter().take(20) {
        warn!("{}:{}: {}", path.display(), m.line, m.reason);
    }
    if parsed.malformed.len() > 20 {
        warn!("{}: {} more malformed lines", path.display(), parsed.malformed.len() - 20);
    }
    if parsed.malformed_ratio() > cfg.max_malformed_fraction {
        return Err(CliError::TooManyMalformed {
            path: path.clone(),
            bad: parsed.malformed.len(),
            total: parsed.lines,
            limit_pct: cfg.max_malformed_fraction * 100.0,
            first: parsed.malformed[0].clone(),
        });
    }
    Ok(parsed)
}

/// Filter, id maps, segmentation and split over an already parsed log.
pub fn preprocess_log(parsed: ParsedLog, cfg: &RunConfig) -> Result<Preprocessed> {
    let source = cfg.dataset_path.display().to_string();
    let filtered = filter_sparse(&parsed.records, cfg.min_user_checkins, cfg.min_poi_checkins).context(&source)?;
    let (id_maps, conflicts) = build_id_maps(&filtered).context(&source)?;
    for c in &conflicts {
        match &c.kind {
            ConflictKind::Coordinates { first, other } => {
                warn!("POI {}: coordinates {:?} differ from first seen {:?}; keeping first", c.poi_id, other, first)
            }
            ConflictKind::Category { first, other } => {
                warn!("POI {}: category {other} differs from first seen {first}; keeping first", c.poi_id)
            }
        }
    }
    let dataset = CheckInDataset::from_records(&filtered, id_maps).context(&source)?;
    let trajectories = segment_trajectories(&dataset, cfg.window_seconds());
    let stats = DatasetStats::new(&dataset, &trajectories);
    let split = split_dataset(&trajectories, cfg.train_fraction, cfg.val_fraction).context(&source)?;
    Ok(Preprocessed {
        parsed,
        filtered,
        dataset,
        trajectories,
        stats,
        split,
    })
}

pub fn preprocess(cfg: &RunConfig) -> Result<String> {
    let parsed = read_log(cfg)?;
    let p = preprocess_log(parsed, cfg)?;
    info!(
        "split: train={} validation={} test={}",
        p.split.train.len(),
        p.split.validation.len(),
        p.split.test.len()
    );
    let bundle = Bundle {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        stats: p.stats,
        lines: p.parsed.lines,
        malformed_lines: p.parsed.malformed.len(),
        id_maps: p.dataset.id_maps,
        split: p.split,
    };
    write_json(&bundle_path(&cfg.output_dir), &bundle)?;
    Ok(format!("{}\n", bundle.stats))
}

pub fn load_bundle(cfg: &RunConfig) -> Result<Bundle> {
    read_json(&bundle_path(&cfg.output_dir), "preprocess")
}

fn graph_for(bundle: &Bundle, cfg: &RunConfig) -> Result<PreparedGraph> {
    let params = PopularityParams::anchored(cfg.alpha, cfg.beta, cfg.recency_window(), &bundle.split.train)
        .context("popularity")?;
    prepare_graph(
        &bundle.split.train,
        &bundle.id_maps,
        &PopularitySource::Recency(params),
        &cfg.graph_options(),
    )
    .context("graph")
}

pub fn popularity_report(cfg: &RunConfig) -> Result<String> {
    let bundle = load_bundle(cfg)?;
    let graph = graph_for(&bundle, cfg)?;
    let pois = &bundle.id_maps.pois;
    let raw = |p: usize| pois.raw(p).unwrap_or_default();

    let mut out = cfg.comment_block();
    out.push_str("poi_raw_id\tc_user_recent\tc_checkin_recent\tc_user_past\tc_checkin_past\traw_score\tnormalized_score\n");
    for (&poi, c) in &graph.popularity.counts {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            raw(poi),
            c.user_recent,
            c.checkin_recent,
            c.user_past,
            c.checkin_past,
            graph.popularity.scores[&poi],
            graph.popularity.normalized[&poi]
        );
    }
    write_text(&cfg.output_dir.join(POPULARITY_FILE), &out)?;

    if cfg.export_edges {
        let mut edges = cfg.comment_block();
        edges.push_str("src_poi_raw_id\tdst_poi_raw_id\tweight\n");
        for (&(a, b), w) in &graph.flow_map.edges {
            let _ = writeln!(edges, "{}\t{}\t{w}", raw(a), raw(b));
        }
        write_text(&cfg.output_dir.join(EDGES_FILE), &edges)?;
    }
    Ok(format!(
        "{} POIs scored, {} edges\n",
        graph.popularity.counts.len(),
        graph.flow_map.edges.len()
    ))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let bundle = load_bundle(cfg)?;
    let graph = graph_for(&bundle, cfg)?;
    let ids = &bundle.id_maps;
    let model_cfg = cfg.model_config(ids.n_pois(), ids.n_users(), ids.n_categories(), graph.features.cols);
    let model = GetNextModel::new(model_cfg, cfg.seed).context("model")?;
    info!("model has {} parameters", model.n_parameters());

    let mut log = String::new();
    let outcome = train(model, &graph.inputs, &bundle.split, ids, &cfg.train_config(), |r| {
        info!("epoch {} loss {:.6} val_mrr {:?}", r.epoch, r.mean_loss, r.val_mrr);
        log.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
        log.push('\n');
    })
    .context("training")?;
    write_text(&cfg.output_dir.join(TRAIN_LOG_FILE), &log)?;
    let ck = Checkpoint::new(cfg.clone(), &outcome.model, outcome.best_epoch, outcome.history);
    let path = checkpoint_path(&cfg.output_dir);
    write_json(&path, &ck)?;
    Ok(format!("best epoch {} written to {}\n", outcome.best_epoch, path.display()))
}

/// Scores the test split with a trained checkpoint. The graph is rebuilt
/// from the checkpoint's own config so it matches what the model saw.
pub fn evaluate_cmd(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<String> {
    let path: PathBuf = checkpoint.map_or_else(|| checkpoint_path(&cfg.output_dir), Path::to_path_buf);
    let ck: Checkpoint = read_json(&path, "train")?;
    let bundle = load_bundle(cfg)?;
    let graph = graph_for(&bundle, &ck.config)?;
    let model = ck.to_model().context("checkpoint")?;
    if model.config().n_pois != bundle.id_maps.n_pois() || model.config().n_features != graph.features.cols {
        return Err(CliError::Artifact {
            path,
            message: "checkpoint does not match the preprocessed bundle".into(),
        });
    }
    let scorer = ModelScorer::new(&model, &graph.inputs).context("scorer")?;
    let mut report =
        evaluate(&scorer, &bundle.split.test, &bundle.id_maps, &K_LIST, ck.config.eval_unit).context("evaluation")?;
    report.alpha = Some(ck.config.alpha);
    report.beta = Some(ck.config.beta);
    let line = format!(
        "acc@1={:.4} acc@5={:.4} acc@10={:.4} acc@20={:.4} mrr={:.4} samples={}\n",
        report.acc(1),
        report.acc(5),
        report.acc(10),
        report.acc(20),
        report.mrr,
        report.n_samples
    );
    let artifact = MetricsArtifact {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        checkpoint: path,
        report,
    };
    write_json(&cfg.output_dir.join(METRICS_FILE), &artifact)?;
    Ok(line)
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<String> {
    let bundle = load_bundle(cfg)?;
    let ids = &bundle.id_maps;
    let sweep_cfg = cfg.sweep_config(ids.n_pois(), ids.n_users(), ids.n_categories());
    let result = sweep(&bundle.split, ids, &sweep_cfg, |source, r| match source {
        RunSource::Grid { alpha, beta } => info!("alpha={alpha:.2} beta={beta:.2} mrr={:.4}", r.mrr),
        RunSource::Baseline => info!("baseline mrr={:.4}", r.mrr),
    })
    .context("sweep")?;
    let table = format_tsv(&result);
    write_text(&cfg.output_dir.join(SWEEP_FILE), &format!("{}{table}", cfg.comment_block()))?;
    write_text(
        &cfg.output_dir.join("sweep.json"),
        &to_json(&serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config": cfg,
            "result": result,
        })),
    )?;
    Ok(table)
}

/// Writes a seeded synthetic check-in log in the default layout.
pub fn synthesize(path: &Path, trajectories: usize, seed: u64) -> Result<String> {
    let spec = MarkovSpec {
        n_trajectories: trajectories,
        seed,
        ..MarkovSpec::default()
    };
    let data = markov_dataset(&spec).context("synthetic data")?;
    write_text(path, &format_checkins(&data.records))?;
    Ok(format!("{} check-ins written to {}\n", data.records.len(), path.display()))
}
