//! Derives a cross-time attribution map from one forward pass and exports it.

use chrono::NaiveDate;
use master_core::data::{MarketStatus, SampleWindow};
use master_core::explain::{band_masses, cross_time_map, export_heatmap, HeadMode, Normalization};
use master_core::model::{forward, ModelConfig, ModelParams};
use master_core::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let (m, tau, f) = (5, 6, 4);
    let cfg = ModelConfig { d_model: 8, lookback: tau, d_ff: 16, ..ModelConfig::new(f, 5) };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let date = NaiveDate::from_ymd_opt(2024, 5, 6).unwrap();
    let window = SampleWindow {
        prediction_date: date,
        date_index: 0,
        x: Tensor::new(vec![m, tau, f], (0..m * tau * f).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        market: MarketStatus { values: vec![0.0; 5], as_of: date },
        r: vec![0.0; m],
        raw_r: vec![0.0; m],
    };
    let out = forward(&window, &params, &cfg).unwrap();
    let map = cross_time_map(&out.s1, &out.s2, 0, 1, HeadMode::Mean).unwrap();
    for i in 0..tau {
        println!("{:.4?}", map.matrix.row(i));
    }
    for (centre, mass) in band_masses(std::slice::from_ref(&map)) {
        println!("band centred at {centre:+}: {mass:.5}");
    }
    let dir = tempfile::tempdir().unwrap();
    let csv = export_heatmap(&map.matrix, &dir.path().join("map.pgm"), Normalization::GlobalMax).unwrap();
    println!("wrote {} and {}", dir.path().join("map.pgm").display(), csv.display());
}
