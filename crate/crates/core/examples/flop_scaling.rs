//! Tabulates counted inter-stock attention cost against the closed form and joint attention.

use master_core::flops::{forward_flops, inter_closed_form, joint_attention_flops};
use master_core::model::ModelConfig;

fn main() {
    let (d, heads) = (32u64, 2u64);
    println!("{:>4} {:>4} {:>14} {:>8} {:>16}", "M", "tau", "inter", "ratio", "joint");
    for m in [8u64, 16, 32, 64] {
        for tau in [4u64, 8, 16] {
            let cfg = ModelConfig { d_model: 32, lookback: tau as usize, d_ff: 64, ..ModelConfig::new(8, 63) };
            let inter = forward_flops(&cfg, m as usize).inter_pairwise;
            let ratio = inter as f64 / inter_closed_form(m, tau, d, heads);
            println!("{m:>4} {tau:>4} {inter:>14} {ratio:>8.4} {:>16}", joint_attention_flops(m, tau, d, heads));
        }
    }
}
