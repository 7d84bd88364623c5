//! Computes IC, RankIC and a top-k backtest for hand-made predictions.

use chrono::NaiveDate;
use master_core::evaluation::{BacktestConfig, DailyPrediction, MetricReport};

fn main() {
    let ids: Vec<String> = ["AAA", "BBB", "CCC", "DDD", "EEE"].iter().map(|s| s.to_string()).collect();
    let start = NaiveDate::from_ymd_opt(2024, 1, 2).unwrap();
    let daily: Vec<DailyPrediction> = (0..4)
        .map(|d| {
            let raw_r: Vec<f64> = (0..5).map(|i| 0.01 * ((i * 3 + d) % 5) as f64 - 0.02 + 0.003 * (i * d % 3) as f64).collect();
            let scores: Vec<f64> = raw_r.iter().enumerate().map(|(i, r)| r + 0.012 * ((i + d) % 3) as f64).collect();
            DailyPrediction {
                date: start + chrono::Days::new(d as u64),
                stock_ids: ids.clone(),
                scores,
                r: raw_r.clone(),
                raw_r,
                benchmark_return: None,
            }
        })
        .collect();
    let cfg = BacktestConfig { top_k: 2, horizon: 1, ..Default::default() };
    let report = MetricReport::compute(&daily, &cfg).unwrap();
    for (name, value, degenerate) in report.aggregates() {
        println!("{name:<10} {value:+.4}{}", if degenerate { " (degenerate)" } else { "" });
    }
}
