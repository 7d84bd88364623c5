use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Local, NaiveDate};

use super::{CliError, RunConfig};
use crate::data::{
    build_windows, generate_synthetic, DateRange, load_csv, write_index_csv, write_stocks_csv, write_truth_csv, IndexSeries,
    Panel, SampleWindow, SplitSpec, SplitWindows, DATE_FORMAT,
};
use crate::evaluation::{DailyPrediction, MetricReport};
use crate::explain::{band_masses, cross_time_map, export_heatmap, inter_map, CrossTimeMap, Matrix};
use crate::model::{forward, Checkpoint, ModelConfig};
use crate::training::{train, write_history_csv, TrainOutcome};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DAILY_FILE: &str = "daily.csv";

/// Files written by `generate`.
#[derive(Debug, Clone)]
pub struct Generated {
    pub stocks: PathBuf,
    pub index: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub dir: PathBuf,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct ExplainRun {
    pub dir: PathBuf,
    /// One map per explained date, in date order.
    pub maps: Vec<(NaiveDate, CrossTimeMap)>,
    /// `(band centre j − i, mean mass per cell)` over `maps`.
    pub bands: Vec<(isize, f64)>,
    pub files: Vec<PathBuf>,
}

/// Loaded data cut into windows, plus the model shape it implies.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panel: Panel,
    pub index: IndexSeries,
    pub windows: SplitWindows,
    pub model: ModelConfig,
}

/// A fresh directory under `root` named `<config hash>-<local timestamp>`.
pub fn create_run_dir(root: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(root)?;
    let stem = format!("{}-{}", cfg.hash()?, Local::now().format("%Y%m%dT%H%M%S%.3f"));
    for attempt in 0.. {
        let name = if attempt == 0 { stem.clone() } else { format!("{stem}-{attempt}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("run directory attempts are unbounded")
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()?)?;
    Ok(path)
}

/// Writes a synthetic market to `out_dir` (default: the directory holding
/// `data.stocks`), using `data.*` file names.
pub fn cmd_generate(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Generated, CliError> {
    let file = |p: &Path, fallback: &str| -> PathBuf {
        let name = p.file_name().map(PathBuf::from).unwrap_or_else(|| fallback.into());
        match out_dir {
            Some(d) => d.join(name),
            None => p.to_path_buf(),
        }
    };
    let out = Generated {
        stocks: file(&cfg.data.stocks, "stocks.csv"),
        index: file(&cfg.data.index, "index.csv"),
        truth: file(&cfg.data.truth, "truth.csv"),
        config: match out_dir {
            Some(d) => d.join(CONFIG_FILE),
            None => cfg.data.stocks.with_file_name(CONFIG_FILE),
        },
    };
    let market = generate_synthetic(&cfg.synthetic.to_config(cfg.seed))?;
    for p in [&out.stocks, &out.index, &out.truth] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
    }
    write_stocks_csv(&out.stocks, &market.panel)?;
    write_index_csv(&out.index, &market.index)?;
    write_truth_csv(&out.truth, &market.truth)?;
    fs::write(&out.config, cfg.to_toml()?)?;
    Ok(out)
}

pub fn split_spec(cfg: &RunConfig, dates: &[NaiveDate]) -> Result<SplitSpec, CliError> {
    let s = &cfg.split;
    let (Some(train_end), Some(valid_end)) = (s.train_end, s.valid_end) else {
        return Ok(SplitSpec::by_fractions(dates, s.train_fraction, s.valid_fraction)?);
    };
    let next = |d: NaiveDate| dates.iter().copied().find(|x| *x > d);
    let (first, last) = match (dates.first(), dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(CliError::Config("empty calendar".into())),
    };
    let (Some(valid_start), Some(test_start)) = (next(train_end), next(valid_end)) else {
        return Err(CliError::Config(format!(
            "split boundaries {train_end} and {valid_end} leave no dates before the calendar end {last}"
        )));
    };
    Ok(SplitSpec::new(
        DateRange { start: first, end: train_end },
        DateRange { start: valid_start, end: valid_end },
        DateRange { start: test_start, end: last },
    )?)
}

/// Loads `data.*` and cuts train/valid/test windows.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    for p in [&cfg.data.stocks, &cfg.data.index] {
        if !p.exists() {
            return Err(CliError::MissingInput(format!(
                "{} not found; run `generate` first or set [data] paths",
                p.display()
            )));
        }
    }
    let (panel, index) = load_csv(&cfg.data.stocks, &cfg.data.index, cfg.data.missing)?;
    let split = split_spec(cfg, panel.dates())?;
    let windows = build_windows(&panel, &index, &cfg.windows.to_config(), &split)?;
    let model = cfg.model_config(panel.n_features(), index.n_indices());
    Ok(Prepared { panel, index, windows, model })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainRun, CliError> {
    let data = prepare(cfg)?;
    let outcome = train(&data.windows.train, &data.windows.valid, &data.model, &cfg.train_config())?;
    let dir = create_run_dir(&cfg.output.dir, cfg)?;
    outcome.best.save(&dir.join(CHECKPOINT_FILE))?;
    write_history_csv(&outcome.history, &dir.join(HISTORY_FILE))?;
    echo_config(cfg, &dir)?;
    Ok(TrainRun { dir, outcome })
}

/// Confirms a checkpoint's shapes fit the data the config produces.
pub fn check_compatible(ckpt: &ModelConfig, data: &ModelConfig) -> Result<(), CliError> {
    let pairs = [
        ("feature count", ckpt.n_features, data.n_features),
        ("market status width", ckpt.market_dim, data.market_dim),
        ("lookback", ckpt.lookback, data.lookback),
    ];
    for (what, have, want) in pairs {
        if have != want {
            return Err(CliError::Incompatible(format!(
                "checkpoint {what} is {have} but the configured data gives {want}"
            )));
        }
    }
    Ok(())
}

fn load_checkpoint(path: &Path, data: &Prepared) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(path)
        .map_err(|e| CliError::MissingInput(format!("cannot load checkpoint {}: {e}", path.display())))?;
    check_compatible(&ckpt.config, &data.model)?;
    Ok(ckpt)
}

/// Return of the first index over the label horizon after position `p`.
fn index_return(index: &IndexSeries, p: usize, horizon: usize) -> Option<f64> {
    let (entry, exit) = (p + 1, p + horizon);
    if exit >= index.dates().len() {
        return None;
    }
    let base = index.price(entry, 0);
    (base > 0.0).then(|| (index.price(exit, 0) - base) / base)
}

/// Test-split predictions of `ckpt`.
pub fn predict_test(data: &Prepared, ckpt: &Checkpoint, horizon: usize) -> Result<Vec<DailyPrediction>, CliError> {
    data.windows
        .test
        .iter()
        .map(|w| {
            let out = forward(w, &ckpt.params, &ckpt.config)?;
            Ok(DailyPrediction {
                date: w.prediction_date,
                stock_ids: data.panel.stocks().to_vec(),
                scores: out.r_hat,
                raw_r: w.raw_r.clone(),
                r: w.r.clone(),
                benchmark_return: index_return(&data.index, w.date_index, horizon),
            })
        })
        .collect()
}

/// Test-split metrics, written as `metrics.csv` and `daily.csv`.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalRun, CliError> {
    let data = prepare(cfg)?;
    let ckpt = load_checkpoint(checkpoint, &data)?;
    let daily = predict_test(&data, &ckpt, cfg.windows.horizon)?;
    let report = MetricReport::compute(&daily, &cfg.backtest_config())?;
    let dir = create_run_dir(&cfg.output.dir, cfg)?;
    report.write_metrics_csv(&dir.join(METRICS_FILE))?;
    report.write_daily_csv(&dir.join(DAILY_FILE))?;
    echo_config(cfg, &dir)?;
    Ok(EvalRun { dir, report })
}

fn stock_position(panel: &Panel, id: &str) -> Result<usize, CliError> {
    panel
        .stocks()
        .iter()
        .position(|s| s == id)
        .ok_or_else(|| CliError::InvalidArgument(format!("unknown stock id {id:?}")))
}

fn test_window<'a>(data: &'a Prepared, date: NaiveDate) -> Result<&'a SampleWindow, CliError> {
    let test = &data.windows.test;
    test.iter().find(|w| w.prediction_date == date).ok_or_else(|| {
        let range = match (test.first(), test.last()) {
            (Some(a), Some(b)) => format!("{} to {}", a.prediction_date, b.prediction_date),
            _ => "empty".into(),
        };
        CliError::InvalidArgument(format!("{date} is not a test prediction date (test range {range})"))
    })
}

/// Exports `I_{u←v}` and the per-step `S̄²` maps.
///
/// With a date, one forward pass on that test window writes
/// `explain_I_<u>_<v>.{pgm,csv}` and `explain_S2_t<t>.{pgm,csv}`. Without
/// one, every test date is explained and the mean map is written as
/// `explain_I_<u>_<v>_mean.{pgm,csv}`. Both write the band masses of the
/// explained maps to `explain_bands_<u>_<v>.csv`.
pub fn cmd_explain(
    cfg: &RunConfig,
    checkpoint: &Path,
    date: Option<NaiveDate>,
    u: &str,
    v: &str,
) -> Result<ExplainRun, CliError> {
    let data = prepare(cfg)?;
    let ckpt = load_checkpoint(checkpoint, &data)?;
    let (ui, vi) = (stock_position(&data.panel, u)?, stock_position(&data.panel, v)?);
    let mode = cfg.explain.head_mode()?;
    let norm = cfg.explain.normalization;
    let windows: Vec<&SampleWindow> = match date {
        Some(d) => vec![test_window(&data, d)?],
        None => data.windows.test.iter().collect(),
    };

    let dir = create_run_dir(&cfg.output.dir, cfg)?;
    let mut files = Vec::new();
    let mut maps = Vec::with_capacity(windows.len());
    for w in &windows {
        let out = forward(w, &ckpt.params, &ckpt.config)?;
        if date.is_some() {
            for t in 0..ckpt.config.lookback {
                let pgm = dir.join(format!("explain_S2_t{t}.pgm"));
                files.push(export_heatmap(&inter_map(&out.s2, t, mode)?, &pgm, norm)?);
                files.push(pgm);
            }
        }
        maps.push((w.prediction_date, cross_time_map(&out.s1, &out.s2, ui, vi, mode)?));
    }

    let name = if date.is_some() { format!("explain_I_{u}_{v}") } else { format!("explain_I_{u}_{v}_mean") };
    let shown = match maps.as_slice() {
        [(_, only)] => only.matrix.clone(),
        many => mean_matrix(many.iter().map(|(_, m)| &m.matrix))?,
    };
    let pgm = dir.join(format!("{name}.pgm"));
    files.push(export_heatmap(&shown, &pgm, norm)?);
    files.push(pgm);

    let only_maps: Vec<CrossTimeMap> = maps.iter().map(|(_, m)| m.clone()).collect();
    let bands = band_masses(&only_maps);
    let band_path = dir.join(format!("explain_bands_{u}_{v}.csv"));
    let mut text = String::from("centre,mass\n");
    for (c, mass) in &bands {
        text.push_str(&format!("{c},{mass}\n"));
    }
    fs::write(&band_path, text)?;
    files.push(band_path);
    files.push(echo_config(cfg, &dir)?);
    Ok(ExplainRun { dir, maps, bands, files })
}

fn mean_matrix<'a>(mut it: impl Iterator<Item = &'a Matrix>) -> Result<Matrix, CliError> {
    let first = it.next().ok_or_else(|| CliError::InvalidArgument("no test windows to explain".into()))?;
    let mut acc = first.values.clone();
    let mut n = 1.0;
    for m in it {
        acc.iter_mut().zip(&m.values).for_each(|(a, x)| *a += x);
        n += 1.0;
    }
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Matrix::new(first.rows, first.cols, acc)?)
}

/// Parses a `YYYY-MM-DD` date argument.
pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| format!("{s:?} is not a YYYY-MM-DD date: {e}"))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let dirs: Vec<PathBuf> = (0..3).map(|_| create_run_dir(root.path(), &cfg).unwrap()).collect();
        assert!(dirs[0] != dirs[1] && dirs[1] != dirs[2] && dirs[0] != dirs[2]);
        let name = dirs[0].file_name().unwrap().to_str().unwrap().to_string();
        assert!(name.starts_with(&cfg.hash().unwrap()), "{name}");
    }

    #[test]
    fn prepare_reports_missing_files() {
        let mut cfg = RunConfig::default();
        cfg.data.stocks = PathBuf::from("/nonexistent/stocks.csv");
        assert!(matches!(prepare(&cfg), Err(CliError::MissingInput(_))));
        assert!(parse_date("2024-02-30").is_err());
        assert_eq!(parse_date("2024-02-29").unwrap(), NaiveDate::from_ymd_opt(2024, 2, 29).unwrap());
    }
}
