//! Daily ranking metrics (IC, RankIC and their information ratios) and the
//! top-k portfolio backtest (excess annualized return and information
//! ratio).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{mean, population_std, DATE_FORMAT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("correlation needs at least 2 paired observations, got {0}")]
    TooFewObservations(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no evaluation dates")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Below this standard deviation a series counts as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewObservations(x.len()));
    }
    Ok(())
}

pub fn is_constant(x: &[f64]) -> bool {
    population_std(x) < DEGENERATE_STD
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Maps `-0.0` to `0.0` so a total order treats them as a tie.
fn unsigned_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| unsigned_zero(x[a]).total_cmp(&unsigned_zero(x[b])));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson of average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// A ratio that may be undefined because its denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    /// Set when the denominator was (numerically) zero; `value` is then
    /// `±∞` following the numerator's sign, or 0 for a zero numerator.
    pub degenerate: bool,
}

impl Ratio {
    pub fn of(num: f64, den: f64) -> Self {
        if den < DEGENERATE_STD {
            let value = if num > 0.0 {
                f64::INFINITY
            } else if num < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            };
            Self {
                value,
                degenerate: true,
            }
        } else {
            Self {
                value: num / den,
                degenerate: false,
            }
        }
    }
}

/// Scores and outcomes for one evaluation date.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPrediction {
    pub date: NaiveDate,
    pub stock_ids: Vec<String>,
    pub scores: Vec<f64>,
    /// Realized return ratios over the label horizon.
    pub raw_r: Vec<f64>,
    /// Normalized labels.
    pub r: Vec<f64>,
    /// Benchmark return over the same horizon, when an index benchmark is used.
    pub benchmark_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub ic: f64,
    pub icir: Ratio,
    pub rank_ic: f64,
    pub rank_icir: Ratio,
    pub daily_ic: Vec<f64>,
    pub daily_rank_ic: Vec<f64>,
    /// Dates on which scores or labels were constant.
    pub degenerate_days: usize,
}

/// IC/RankIC averaged over dates and divided by their daily std.
pub fn ranking_metrics(daily: &[DailyPrediction]) -> Result<RankingMetrics, EvalError> {
    if daily.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut daily_ic = Vec::with_capacity(daily.len());
    let mut daily_rank_ic = Vec::with_capacity(daily.len());
    let mut degenerate_days = 0;
    for d in daily {
        daily_ic.push(pearson(&d.scores, &d.r)?);
        daily_rank_ic.push(spearman(&d.scores, &d.r)?);
        if is_constant(&d.scores) || is_constant(&d.r) {
            degenerate_days += 1;
        }
    }
    let ic = mean(&daily_ic);
    let rank_ic = mean(&daily_rank_ic);
    Ok(RankingMetrics {
        ic,
        icir: Ratio::of(ic, population_std(&daily_ic)),
        rank_ic,
        rank_icir: Ratio::of(rank_ic, population_std(&daily_rank_ic)),
        daily_ic,
        daily_rank_ic,
        degenerate_days,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// Equal-weight mean over every stock on the date.
    #[default]
    UniverseMean,
    /// The date's `benchmark_return`.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub top_k: usize,
    pub trading_days_per_year: f64,
    /// Label horizon d; each d-day return is attributed evenly per day.
    pub horizon: usize,
    pub benchmark: Benchmark,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            top_k: 30,
            trading_days_per_year: 252.0,
            horizon: 5,
            benchmark: Benchmark::UniverseMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub ar: f64,
    pub ir: Ratio,
    pub daily_excess: Vec<f64>,
    /// `top_k` exceeded the universe on some date.
    pub k_clamped: bool,
}

/// Indices of the `k` highest scores, ties broken by ascending stock id.
pub fn top_k(scores: &[f64], ids: &[String], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        unsigned_zero(scores[b]).total_cmp(&unsigned_zero(scores[a])).then_with(|| ids[a].cmp(&ids[b]))
    });
    idx.truncate(k);
    idx
}

/// Daily top-k long portfolio against the benchmark.
pub fn backtest_topk(daily: &[DailyPrediction], cfg: &BacktestConfig) -> Result<Backtest, EvalError> {
    if daily.is_empty() {
        return Err(EvalError::Empty);
    }
    if cfg.top_k == 0 || cfg.horizon == 0 || !(cfg.trading_days_per_year > 0.0) {
        return Err(EvalError::InvalidArgument(
            "top_k, horizon and trading_days_per_year must be positive".into(),
        ));
    }
    let mut k_clamped = false;
    let mut daily_excess = Vec::with_capacity(daily.len());
    for d in daily {
        let m = d.scores.len();
        if m == 0 || d.raw_r.len() != m || d.stock_ids.len() != m {
            return Err(EvalError::InvalidArgument(format!("malformed cross-section on {}", d.date)));
        }
        if cfg.top_k > m {
            k_clamped = true;
        }
        let picks = top_k(&d.scores, &d.stock_ids, cfg.top_k);
        let portfolio = picks.iter().map(|&i| d.raw_r[i]).sum::<f64>() / picks.len() as f64;
        let benchmark = match cfg.benchmark {
            Benchmark::UniverseMean => mean(&d.raw_r),
            Benchmark::Index => d.benchmark_return.ok_or_else(|| {
                EvalError::InvalidArgument(format!("no benchmark return on {}", d.date))
            })?,
        };
        daily_excess.push((portfolio - benchmark) / cfg.horizon as f64);
    }
    let mu = mean(&daily_excess);
    let sd = population_std(&daily_excess);
    let ir = Ratio::of(mu, sd);
    let ir = if ir.degenerate {
        ir
    } else {
        Ratio {
            value: ir.value * cfg.trading_days_per_year.sqrt(),
            degenerate: false,
        }
    };
    Ok(Backtest {
        ar: mu * cfg.trading_days_per_year,
        ir,
        daily_excess,
        k_clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub dates: Vec<NaiveDate>,
    pub ranking: RankingMetrics,
    pub backtest: Backtest,
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    pub fn compute(daily: &[DailyPrediction], cfg: &BacktestConfig) -> Result<Self, EvalError> {
        Ok(Self {
            dates: daily.iter().map(|d| d.date).collect(),
            ranking: ranking_metrics(daily)?,
            backtest: backtest_topk(daily, cfg)?,
        })
    }

    /// The six aggregates in report order; degenerate ratios are flagged.
    pub fn aggregates(&self) -> [(&'static str, f64, bool); 6] {
        let r = &self.ranking;
        [
            ("IC", r.ic, false),
            ("ICIR", r.icir.value, r.icir.degenerate),
            ("RankIC", r.rank_ic, false),
            ("RankICIR", r.rank_icir.value, r.rank_icir.degenerate),
            ("AR", self.backtest.ar, false),
            ("IR", self.backtest.ir.value, self.backtest.ir.degenerate),
        ]
    }

    /// `metric,value` rows; degenerate ratios print as `inf`/`-inf`/`0`.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "metric,value")?;
        for (name, value, _) in self.aggregates() {
            writeln!(w, "{name},{}", fmt_value(value))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `date,ic,rank_ic,excess_return` per evaluated date.
    pub fn write_daily_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "date,ic,rank_ic,excess_return")?;
        for (i, d) in self.dates.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                d.format(DATE_FORMAT),
                self.ranking.daily_ic[i],
                self.ranking.daily_rank_ic[i],
                self.backtest.daily_excess[i]
            )?;
        }
        w.flush()?;
        Ok(())
    }
}
