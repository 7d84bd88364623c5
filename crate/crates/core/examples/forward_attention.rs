//! Runs one forward pass and prints the gate, temporal and inter-stock attention.

use chrono::NaiveDate;
use master_core::data::{MarketStatus, SampleWindow};
use master_core::model::{forward, ModelConfig, ModelParams};
use master_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let (m, tau, f, market_dim) = (4, 5, 6, 9);
    let cfg = ModelConfig { d_model: 16, lookback: tau, d_ff: 32, ..ModelConfig::new(f, market_dim) };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ModelParams::init(&cfg, &mut rng).unwrap();
    // The temporal query starts at zero (uniform pooling); perturb it to show non-trivial weights.
    for v in params.temporal_w.values_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
    let x = (0..m * tau * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let window = SampleWindow {
        prediction_date: date,
        date_index: 0,
        x: Tensor::new(vec![m, tau, f], x).unwrap(),
        market: MarketStatus { values: (0..market_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), as_of: date },
        r: vec![0.0; m],
        raw_r: vec![0.0; m],
    };
    let out = forward(&window, &params, &cfg).unwrap();
    println!("feature gate: {:.3?}", out.alpha);
    println!("predictions: {:.4?}", out.r_hat);
    for s in 0..m {
        println!("stock {s} temporal weights: {:.3?}", &out.lambda.values()[s * tau..(s + 1) * tau]);
    }
    let last = &out.s2.values()[(tau - 1) * cfg.inter_heads * m * m..][..m * m];
    println!("inter-stock attention at the last step, head 0: {:.3?}", last);
}
