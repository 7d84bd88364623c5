//! Checks reverse-mode gradients of a small attention block against central differences.

use master_core::numerics::{grad_check, multi_head_attention, AttentionParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_tensor = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let d = 4;
    let params: Vec<Tensor> = vec![
        rand_tensor(&[2, 5, d]),
        rand_tensor(&[d, d]),
        rand_tensor(&[d, d]),
        rand_tensor(&[d, d]),
    ];
    let report = grad_check(
        |g, v| {
            let attn = AttentionParams { w_q: v[1], w_k: v[2], w_v: v[3] };
            let (out, _) = multi_head_attention(g, v[0], v[0], v[0], &attn, 2)?;
            let sq = g.mul(out, out)?;
            g.sum(sq)
        },
        &params,
        1e-5,
        1e-6,
    )
    .unwrap();
    for b in &report.blocks {
        println!("block {}: max relative error {:.2e}", b.block, b.max_rel_error);
    }
    println!("passed: {}", report.passed());
}
