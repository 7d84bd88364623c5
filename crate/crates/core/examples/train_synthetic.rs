//! Trains a small model on a synthetic panel and prints the epoch history.

use master_core::data::{build_windows, generate_synthetic, market_status_len, SplitSpec, SyntheticConfig, WindowConfig};
use master_core::model::ModelConfig;
use master_core::training::{train, TrainConfig};

fn main() {
    let market = generate_synthetic(&SyntheticConfig { n_stocks: 10, n_days: 200, ..Default::default() }).unwrap();
    let wcfg = WindowConfig { horizon: 2, market_intervals: vec![5, 10, 20], ..Default::default() };
    let split = SplitSpec::by_fractions(market.panel.dates(), 0.6, 0.2).unwrap();
    let windows = build_windows(&market.panel, &market.index, &wcfg, &split).unwrap();
    let model = ModelConfig {
        d_model: 16,
        d_ff: 32,
        lookback: wcfg.lookback,
        ..ModelConfig::new(market.panel.n_features(), market_status_len(market.index.n_indices(), 3))
    };
    let cfg = TrainConfig { lr: 1e-3, max_epochs: 5, ..Default::default() };
    let outcome = train(&windows.train, &windows.valid, &model, &cfg).unwrap();
    for rec in &outcome.history {
        println!("epoch {:>2}  train loss {:>9.4}  valid IC {:+.4}", rec.epoch, rec.train_loss, rec.valid_ic);
    }
    println!("best epoch {} (stopped early: {})", outcome.best_epoch, outcome.stopped_early);
}
