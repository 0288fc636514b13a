//! Run configuration: one flat TOML table. Missing keys take the defaults
//! below, unknown keys are rejected, and command-line flags win over the
//! file.

use std::path::{Path, PathBuf};

use poirec_core::metrics::EvalUnit;
use poirec_core::model::{ModelConfig, TimeTarget};
use poirec_core::nn::OptimizerKind;
use poirec_core::pipeline::GraphOptions;
use poirec_core::sweep::{SweepConfig, DEFAULT_GRID};
use poirec_core::train::TrainConfig;
use poirec_core::SECONDS_PER_DAY;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::{FormatDescriptor, DEFAULT_TIME_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,

    pub delimiter: char,
    pub n_columns: usize,
    pub col_user: usize,
    pub col_poi: usize,
    pub col_category_id: usize,
    pub col_category_name: usize,
    pub col_lat: usize,
    pub col_lon: usize,
    pub col_tz_offset: usize,
    pub col_time: usize,
    pub time_format: String,
    /// Fraction of malformed lines above which parsing aborts.
    pub max_malformed_fraction: f64,

    pub min_user_checkins: usize,
    pub min_poi_checkins: usize,
    pub window_hours: i64,
    pub train_fraction: f64,
    pub val_fraction: f64,

    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub recency_days: i64,
    pub self_loop_weight: f64,
    pub include_frequency: bool,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerName,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub eval_unit: EvalUnit,

    pub user_dim: usize,
    pub timecat_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub gcn_hidden: Vec<usize>,
    pub max_seq_len: usize,
    pub leaky_slope: f64,
    pub unscaled_attention: bool,
    pub time_target: TimeTarget,
    pub dropout: f64,
    pub layer_norm_eps: f64,

    pub sweep_alphas: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    /// Also write the flow-map edge list next to the popularity table.
    pub export_edges: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let f = FormatDescriptor::default();
        let t = TrainConfig::default();
        let m = ModelConfig::new(1, 1, 1, 1);
        let (adam_beta1, adam_beta2, adam_eps) = match OptimizerKind::default() {
            OptimizerKind::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            OptimizerKind::Sgd => (0.9, 0.999, 1e-8),
        };
        Self {
            dataset_path: PathBuf::from("checkins.tsv"),
            output_dir: PathBuf::from("out"),
            delimiter: f.delimiter,
            n_columns: f.n_columns,
            col_user: f.user,
            col_poi: f.poi,
            col_category_id: f.category_id,
            col_category_name: f.category_name,
            col_lat: f.lat,
            col_lon: f.lon,
            col_tz_offset: f.tz_offset,
            col_time: f.time,
            time_format: DEFAULT_TIME_FORMAT.to_string(),
            max_malformed_fraction: 0.01,
            min_user_checkins: 10,
            min_poi_checkins: 10,
            window_hours: 24,
            train_fraction: 0.8,
            val_fraction: 0.1,
            seed: t.seed,
            alpha: t.alpha,
            beta: t.beta,
            recency_days: 90,
            self_loop_weight: GraphOptions::default().self_loop_weight,
            include_frequency: GraphOptions::default().include_frequency,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: OptimizerName::Adam,
            adam_beta1,
            adam_beta2,
            adam_eps,
            eval_unit: t.eval_unit,
            user_dim: m.user_dim,
            timecat_dim: m.timecat_dim,
            heads: m.heads,
            layers: m.layers,
            ffn_dim: m.ffn_dim,
            gcn_hidden: m.gcn_hidden,
            max_seq_len: m.max_seq_len,
            leaky_slope: m.leaky_slope,
            unscaled_attention: m.unscaled_attention,
            time_target: m.time_target,
            dropout: m.dropout,
            layer_norm_eps: m.layer_norm_eps,
            sweep_alphas: DEFAULT_GRID.to_vec(),
            sweep_betas: DEFAULT_GRID.to_vec(),
            export_edges: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epochs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Defaults, then `path` if given, then `overrides`; validated.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.beta {
            self.beta = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.dataset_path {
            self.dataset_path = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        for v in self.sweep_alphas.iter().chain(&self.sweep_betas) {
            if !(0.0..=1.0).contains(v) {
                return bad(format!("sweep grid value {v} must lie in [0, 1]"));
            }
        }
        if self.recency_days <= 0 {
            return bad("recency_days must be >= 1".into());
        }
        if self.window_hours <= 0 {
            return bad("window_hours must be >= 1".into());
        }
        if self.min_user_checkins == 0 || self.min_poi_checkins == 0 {
            return bad("filter thresholds must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return bad("max_malformed_fraction must lie in [0, 1]".into());
        }
        let (tr, va) = (self.train_fraction, self.val_fraction);
        if !(tr > 0.0 && va > 0.0 && tr + va <= 1.0 + 1e-12) {
            return bad(format!("train_fraction {tr} and val_fraction {va} must be positive with sum <= 1"));
        }
        self.format().validate().map_err(CliError::Config)?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.model_config(1, 1, 1, 1).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn format(&self) -> FormatDescriptor {
        FormatDescriptor {
            delimiter: self.delimiter,
            n_columns: self.n_columns,
            user: self.col_user,
            poi: self.col_poi,
            category_id: self.col_category_id,
            category_name: self.col_category_name,
            lat: self.col_lat,
            lon: self.col_lon,
            tz_offset: self.col_tz_offset,
            time: self.col_time,
            time_format: self.time_format.clone(),
        }
    }

    pub fn window_seconds(&self) -> i64 {
        self.window_hours * 3600
    }

    pub fn recency_window(&self) -> i64 {
        self.recency_days * SECONDS_PER_DAY
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            self_loop_weight: self.self_loop_weight,
            include_frequency: self.include_frequency,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            OptimizerName::Sgd => OptimizerKind::Sgd,
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer,
            seed: self.seed,
            alpha: self.alpha,
            beta: self.beta,
            eval_unit: self.eval_unit,
        }
    }

    pub fn model_config(&self, n_pois: usize, n_users: usize, n_categories: usize, n_features: usize) -> ModelConfig {
        let mut m = ModelConfig::new(n_pois, n_users, n_categories, n_features).with_dims(self.user_dim, self.timecat_dim);
        m.heads = self.heads;
        m.layers = self.layers;
        m.ffn_dim = self.ffn_dim;
        m.gcn_hidden = self.gcn_hidden.clone();
        m.max_seq_len = self.max_seq_len;
        m.leaky_slope = self.leaky_slope;
        m.unscaled_attention = self.unscaled_attention;
        m.time_target = self.time_target;
        m.dropout = self.dropout;
        m.layer_norm_eps = self.layer_norm_eps;
        m
    }

    /// `n_features` of the model template is a placeholder; the sweep sets
    /// it per run.
    pub fn sweep_config(&self, n_pois: usize, n_users: usize, n_categories: usize) -> SweepConfig {
        let mut s = SweepConfig::new(self.model_config(n_pois, n_users, n_categories, 1), self.train_config());
        s.alphas = self.sweep_alphas.clone();
        s.betas = self.sweep_betas.clone();
        s.recency_window = self.recency_window();
        s.graph = self.graph_options();
        s
    }

    /// The config as a TOML document that [`RunConfig::from_toml`] reads back
    /// unchanged.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }

    /// The TOML echo as `# `-prefixed lines, for tabular artifacts.
    pub fn comment_block(&self) -> String {
        self.to_toml().lines().map(|l| format!("# {l}\n")).collect()
    }
}
