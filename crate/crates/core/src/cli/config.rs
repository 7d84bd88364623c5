//! The TOML run configuration.
//!
//! Every key is optional; omitted keys take the defaults listed on each
//! field. Unknown keys are rejected. Relative paths resolve against the
//! working directory.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! stocks = "data/stocks.csv"
//! index = "data/index.csv"
//! truth = "data/truth.csv"
//! missing = "reject"            # or "forward_fill"
//!
//! [synthetic]
//! n_stocks = 30
//! n_days = 600
//! n_features = 8
//! leader_fraction = 0.2
//! lag = 2
//! signal_strength = 0.8
//! leader_autocorrelation = 0.2
//! market_loading = 0.25
//! volatility = 0.02
//! n_indices = 3
//! start_date = "2015-01-05"
//!
//! [windows]
//! lookback = 8
//! horizon = 5
//! market_intervals = [5, 10, 20, 30, 60]
//! allow_label_overlap = false
//!
//! [split]
//! train_fraction = 0.6
//! valid_fraction = 0.2
//! # train_end = "2016-06-30"   # explicit boundaries override the fractions
//! # valid_end = "2016-12-30"
//!
//! [model]
//! d_model = 256
//! intra_heads = 4
//! inter_heads = 2
//! beta = 5.0
//! # d_ff = 512                  # defaults to 2 * d_model
//! disable_inter_stock = false
//! disable_gating = false
//!
//! [train]
//! lr = 1e-5
//! max_epochs = 40
//! patience = 5
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! # clip_norm = 1.0
//!
//! [backtest]
//! top_k = 30
//! trading_days_per_year = 252.0
//! benchmark = "universe_mean"   # or "index"
//!
//! [explain]
//! normalization = "global_max"  # or "row_max"
//! # intra_head = 0              # set both to export a single head pair
//! # inter_head = 0
//!
//! [output]
//! dir = "runs"
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::data::{market_status_len, MissingPolicy, SyntheticConfig, WindowConfig};
use crate::evaluation::{BacktestConfig, Benchmark};
use crate::explain::{HeadMode, Normalization};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub stocks: PathBuf,
    pub index: PathBuf,
    pub truth: PathBuf,
    pub missing: MissingPolicy,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            stocks: "data/stocks.csv".into(),
            index: "data/index.csv".into(),
            truth: "data/truth.csv".into(),
            missing: MissingPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSettings {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_features: usize,
    pub leader_fraction: f64,
    pub lag: usize,
    pub signal_strength: f64,
    pub leader_autocorrelation: f64,
    pub market_loading: f64,
    pub volatility: f64,
    pub n_indices: usize,
    pub start_date: NaiveDate,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            n_stocks: d.n_stocks,
            n_days: d.n_days,
            n_features: d.n_features,
            leader_fraction: d.leader_fraction,
            lag: d.lag,
            signal_strength: d.signal_strength,
            leader_autocorrelation: d.leader_autocorrelation,
            market_loading: d.market_loading,
            volatility: d.volatility,
            n_indices: d.n_indices,
            start_date: d.start_date,
        }
    }
}

impl SyntheticSettings {
    pub fn to_config(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            seed,
            n_stocks: self.n_stocks,
            n_days: self.n_days,
            n_features: self.n_features,
            leader_fraction: self.leader_fraction,
            lag: self.lag,
            signal_strength: self.signal_strength,
            leader_autocorrelation: self.leader_autocorrelation,
            market_loading: self.market_loading,
            volatility: self.volatility,
            n_indices: self.n_indices,
            start_date: self.start_date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSettings {
    pub lookback: usize,
    pub horizon: usize,
    pub market_intervals: Vec<usize>,
    pub allow_label_overlap: bool,
}

impl Default for WindowSettings {
    fn default() -> Self {
        let d = WindowConfig::default();
        Self {
            lookback: d.lookback,
            horizon: d.horizon,
            market_intervals: d.market_intervals,
            allow_label_overlap: d.allow_label_overlap,
        }
    }
}

impl WindowSettings {
    pub fn to_config(&self) -> WindowConfig {
        WindowConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            market_intervals: self.market_intervals.clone(),
            allow_label_overlap: self.allow_label_overlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    /// Last training date; requires `valid_end`.
    pub train_end: Option<NaiveDate>,
    /// Last validation date; the test range is everything after it.
    pub valid_end: Option<NaiveDate>,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            valid_fraction: 0.2,
            train_end: None,
            valid_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub intra_heads: usize,
    pub inter_heads: usize,
    pub beta: f64,
    /// FFN hidden width; `2 * d_model` when absent.
    pub d_ff: Option<usize>,
    pub disable_inter_stock: bool,
    pub disable_gating: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::new(1, 1);
        Self {
            d_model: d.d_model,
            intra_heads: d.intra_heads,
            inter_heads: d.inter_heads,
            beta: d.beta,
            d_ff: None,
            disable_inter_stock: false,
            disable_gating: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            max_epochs: d.max_epochs,
            patience: d.patience,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            clip_norm: d.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSettings {
    pub top_k: usize,
    pub trading_days_per_year: f64,
    pub benchmark: Benchmark,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        let d = BacktestConfig::default();
        Self {
            top_k: d.top_k,
            trading_days_per_year: d.trading_days_per_year,
            benchmark: d.benchmark,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSettings {
    pub normalization: Normalization,
    pub intra_head: Option<usize>,
    pub inter_head: Option<usize>,
}

impl ExplainSettings {
    pub fn head_mode(&self) -> Result<HeadMode, CliError> {
        match (self.intra_head, self.inter_head) {
            (None, None) => Ok(HeadMode::Mean),
            (Some(intra), Some(inter)) => Ok(HeadMode::Head { intra, inter }),
            _ => Err(CliError::Config(
                "explain.intra_head and explain.inter_head must be set together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: "runs".into() }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds the generator, parameter initialization and epoch shuffles.
    pub seed: u64,
    pub data: DataSettings,
    pub synthetic: SyntheticSettings,
    pub windows: WindowSettings,
    pub split: SplitSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub backtest: BacktestSettings,
    pub explain: ExplainSettings,
    pub output: OutputSettings,
}

/// Which stage `--ablate` switches off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Ablation {
    Gating,
    InterStock,
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ablate: Option<Ablation>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        match o.ablate {
            Some(Ablation::Gating) => self.model.disable_gating = true,
            Some(Ablation::InterStock) => self.model.disable_inter_stock = true,
            None => {}
        }
    }

    /// Checks everything that does not depend on the data files.
    pub fn validate(&self) -> Result<(), CliError> {
        let w = &self.windows;
        if w.lookback == 0 || w.horizon == 0 {
            return Err(CliError::Config("windows.lookback and windows.horizon must be at least 1".into()));
        }
        if w.market_intervals.is_empty() || w.market_intervals.contains(&0) {
            return Err(CliError::Config("windows.market_intervals must be non-empty and positive".into()));
        }
        let s = &self.split;
        match (s.train_end, s.valid_end) {
            (None, None) => {
                if !(s.train_fraction > 0.0 && s.valid_fraction > 0.0 && s.train_fraction + s.valid_fraction < 1.0) {
                    return Err(CliError::Config(format!(
                        "split fractions {} and {} must be positive and sum below 1",
                        s.train_fraction, s.valid_fraction
                    )));
                }
            }
            (Some(t), Some(v)) if t < v => {}
            (Some(_), Some(_)) => return Err(CliError::Config("split.train_end must precede split.valid_end".into())),
            _ => return Err(CliError::Config("split.train_end and split.valid_end must be set together".into())),
        }
        if self.backtest.top_k == 0 {
            return Err(CliError::Config("backtest.top_k must be at least 1".into()));
        }
        if !(self.backtest.trading_days_per_year > 0.0) {
            return Err(CliError::Config("backtest.trading_days_per_year must be positive".into()));
        }
        self.explain.head_mode()?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.model_config(1, 1).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Model shape for data with `n_features` features and `n_indices` indices.
    pub fn model_config(&self, n_features: usize, n_indices: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_features,
            market_dim: market_status_len(n_indices, self.windows.market_intervals.len()),
            d_model: m.d_model,
            lookback: self.windows.lookback,
            intra_heads: m.intra_heads,
            inter_heads: m.inter_heads,
            beta: m.beta,
            d_ff: m.d_ff.unwrap_or(2 * m.d_model),
            disable_inter_stock: m.disable_inter_stock,
            disable_gating: m.disable_gating,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            clip_norm: t.clip_norm,
        }
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            top_k: self.backtest.top_k,
            trading_days_per_year: self.backtest.trading_days_per_year,
            horizon: self.windows.horizon,
            benchmark: self.backtest.benchmark,
        }
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// First 12 hex digits of the SHA-256 of the effective TOML.
    pub fn hash(&self) -> Result<String, CliError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(digest)[..12].to_string())
    }
}
