//! Generates a synthetic panel with planted lead-lag links and prints a summary.

use master_core::data::{generate_synthetic, SyntheticConfig};

fn main() {
    let cfg = SyntheticConfig { n_stocks: 12, n_days: 120, ..Default::default() };
    let market = generate_synthetic(&cfg).expect("valid config");
    let p = &market.panel;
    println!("{} stocks x {} days x {} features", p.n_stocks(), p.n_dates(), p.n_features());
    println!("{} indices, first date {}", market.index.n_indices(), p.dates()[0]);
    for link in &market.truth {
        println!("{} follows {} at lag {} (weight {})", link.follower, link.leader, link.lag, link.weight);
    }
    let last = p.n_dates() - 1;
    println!("closes on {}: {:?}", p.dates()[last], (0..4).map(|s| p.close(last, s)).collect::<Vec<_>>());
}
