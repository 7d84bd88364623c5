//! Builds the market-status vector for the last date of a synthetic index series.

use master_core::data::{build_market_status, generate_synthetic, market_status_len, SyntheticConfig};

fn main() {
    let market = generate_synthetic(&SyntheticConfig { n_days: 80, ..Default::default() }).unwrap();
    let intervals = [5, 10, 20, 30, 60];
    let last = market.index.dates().len() - 1;
    let ms = build_market_status(&market.index, last, &intervals).unwrap();
    assert_eq!(ms.values.len(), market_status_len(market.index.n_indices(), intervals.len()));
    println!("as of {}: {} values", ms.as_of, ms.values.len());
    let width = 1 + 4 * intervals.len();
    for (k, name) in market.index.indices().iter().enumerate() {
        let block = &ms.values[k * width..(k + 1) * width];
        println!("{name}: price {:.3}, 5-day mean {:.3}, 5-day std {:.4}", block[0], block[1], block[2]);
    }
}
