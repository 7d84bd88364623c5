use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use master_core::data::{MarketStatus, SampleWindow};
use master_core::model::{
    forward, gate, inter_aggregate, intra_aggregate, temporal_aggregate, Checkpoint, ModelConfig, ModelParams,
    ParamVars,
};
use master_core::numerics::{
    ffn_relu_residual, multi_head_attention, sinusoidal_pe, AttentionParams, FfnParams, Graph, Tensor,
};

fn tiny_config(m_feat: usize, market: usize, d: usize, tau: usize) -> ModelConfig {
    ModelConfig {
        n_features: m_feat,
        market_dim: market,
        d_model: d,
        lookback: tau,
        intra_heads: 2,
        inter_heads: 2,
        beta: 5.0,
        d_ff: 2 * d,
        disable_inter_stock: false,
        disable_gating: false,
    }
}

fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(cfg, &mut rng).unwrap();
    for v in p.temporal_w.values_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    for v in p.gate_b.values_mut().iter_mut().chain(p.enc_b.values_mut()).chain(p.pred_b.values_mut()) {
        *v = rng.gen_range(-0.5..0.5);
    }
    p
}

fn window(m: usize, cfg: &ModelConfig, seed: u64) -> SampleWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m * cfg.lookback * cfg.n_features;
    SampleWindow {
        prediction_date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
        date_index: 0,
        x: Tensor::new(vec![m, cfg.lookback, cfg.n_features], (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap(),
        market: MarketStatus {
            values: (0..cfg.market_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            as_of: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
        },
        r: vec![0.0; m],
        raw_r: vec![0.0; m],
    }
}

fn gate_alpha(cfg: &ModelConfig, params: &ModelParams, market: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false).unwrap();
    let x = g.constant(Tensor::zeros(vec![1, cfg.lookback, cfg.n_features])).unwrap();
    let m = g.constant(Tensor::vector(market.to_vec())).unwrap();
    let (_, alpha) = gate(&mut g, x, m, &p, cfg).unwrap();
    g.value(alpha).to_vec()
}

#[test]
fn gating_examples() {
    let mut cfg = tiny_config(2, 3, 4, 2);
    cfg.beta = 1.0;
    let mut params = ModelParams::zeros(&cfg).unwrap();
    assert_eq!(gate_alpha(&cfg, &params, &[0.3, -1.0, 2.0]), vec![1.0, 1.0]);
    params.gate_b = Tensor::vector(vec![3f64.ln(), 0.0]);
    let alpha = gate_alpha(&cfg, &params, &[0.3, -1.0, 2.0]);
    assert!((alpha[0] - 1.5).abs() < 1e-12 && (alpha[1] - 0.5).abs() < 1e-12);

    let cfg = tiny_config(6, 4, 4, 2);
    let params = random_params(&cfg, 9);
    let market = [2.0, -1.5, 0.7, 3.0];
    let spread = |beta: f64| {
        let c = ModelConfig { beta, ..cfg.clone() };
        let a = gate_alpha(&c, &params, &market);
        a.iter().cloned().fold(f64::MIN, f64::max) / a.iter().cloned().fold(f64::MAX, f64::min)
    };
    assert!(spread(5.0) < spread(0.5));
}

#[test]
fn gated_features_scale_every_stock_and_step() {
    let cfg = tiny_config(3, 4, 4, 3);
    let params = random_params(&cfg, 1);
    let w = window(2, &cfg, 2);
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, &params, false).unwrap();
    let x = g.constant(w.x.clone()).unwrap();
    let m = g.constant(Tensor::vector(w.market.values.clone())).unwrap();
    let (gated, alpha) = gate(&mut g, x, m, &p, &cfg).unwrap();
    let alpha = g.value(alpha).to_vec();
    assert!((alpha.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    for (i, (&gx, &raw)) in g.value(gated).iter().zip(w.x.values()).enumerate() {
        assert_eq!(gx, raw * alpha[i % 3]);
    }

    let mut g = Graph::new().with_finite_checks(false);
    let p = ParamVars::register(&mut g, &params, false).unwrap();
    let x = g.constant(w.x.clone()).unwrap();
    let nan = g.constant(Tensor::vector(vec![f64::NAN; 4])).unwrap();
    assert!(gate(&mut g, x, nan, &p, &cfg).is_err());
}

/// One stock's local embedding built directly from the primitives.
fn intra_oracle(params: &ModelParams, cfg: &ModelConfig, xs: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let c = |g: &mut Graph, t: &Tensor| g.constant(t.clone()).unwrap();
    let x = g.constant(Tensor::new(vec![cfg.lookback, cfg.n_features], xs).unwrap()).unwrap();
    let (w, b) = (c(&mut g, &params.enc_w), c(&mut g, &params.enc_b));
    let y = g.affine(x, w, Some(b)).unwrap();
    let pe = g.constant(sinusoidal_pe(cfg.lookback, cfg.d_model).unwrap()).unwrap();
    let y = g.add(y, pe).unwrap();
    let (gain, bias) = (c(&mut g, &params.ln_gain), c(&mut g, &params.ln_bias));
    let y = g.layer_norm(y, gain, bias).unwrap();
    let attn = AttentionParams {
        w_q: c(&mut g, &params.intra_q),
        w_k: c(&mut g, &params.intra_k),
        w_v: c(&mut g, &params.intra_v),
    };
    let (a, s) = multi_head_attention(&mut g, y, y, y, &attn, cfg.intra_heads).unwrap();
    let mixed = g.add(a, y).unwrap();
    let ffn = FfnParams {
        w1: c(&mut g, &params.intra_ffn_w1),
        b1: c(&mut g, &params.intra_ffn_b1),
        w2: c(&mut g, &params.intra_ffn_w2),
        b2: c(&mut g, &params.intra_ffn_b2),
    };
    let h = ffn_relu_residual(&mut g, mixed, &ffn).unwrap();
    (g.value(h).to_vec(), g.value(s).to_vec())
}

#[test]
fn intra_stage_matches_per_stock_composition() {
    let cfg = tiny_config(3, 2, 4, 3);
    let params = random_params(&cfg, 3);
    let w = window(2, &cfg, 4);
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, &params, false).unwrap();
    let x = g.constant(w.x.clone()).unwrap();
    let (h, s1) = intra_aggregate(&mut g, x, &p, &cfg).unwrap();
    let per = cfg.lookback * cfg.n_features;
    for u in 0..2 {
        let (want_h, want_s) = intra_oracle(&params, &cfg, w.x.values()[u * per..(u + 1) * per].to_vec());
        let n_h = cfg.lookback * cfg.d_model;
        let n_s = cfg.intra_heads * cfg.lookback * cfg.lookback;
        let got_h = &g.value(h)[u * n_h..(u + 1) * n_h];
        let got_s = &g.value(s1)[u * n_s..(u + 1) * n_s];
        assert!(got_h.iter().zip(&want_h).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(got_s.iter().zip(&want_s).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}

#[test]
fn single_step_and_single_stock_cases() {
    let cfg = tiny_config(3, 2, 4, 1);
    let params = random_params(&cfg, 5);
    let out = forward(&window(3, &cfg, 6), &params, &cfg).unwrap();
    assert!(out.s1.values().iter().all(|&v| v == 1.0));
    assert!(out.lambda.values().iter().all(|&v| v == 1.0));

    let cfg = tiny_config(3, 2, 4, 3);
    let params = random_params(&cfg, 7);
    let out = forward(&window(1, &cfg, 8), &params, &cfg).unwrap();
    assert!(out.s2.values().iter().all(|&v| v == 1.0));

    // With one stock the inter stage is FFN²(h W_V + h).
    let w = window(1, &cfg, 8);
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, &params, false).unwrap();
    let x = g.constant(w.x.clone()).unwrap();
    let (h, _) = intra_aggregate(&mut g, x, &p, &cfg).unwrap();
    let (z, _) = inter_aggregate(&mut g, h, &p, &cfg).unwrap();
    let h2 = g.reshape(h, &[cfg.lookback, cfg.d_model]).unwrap();
    let projected = g.matmul(h2, p.inter.w_v).unwrap();
    let mixed = g.add(projected, h2).unwrap();
    let want = ffn_relu_residual(&mut g, mixed, &p.inter_ffn).unwrap();
    assert!(g.value(z).iter().zip(g.value(want)).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn temporal_stage_examples() {
    let (m, tau, d) = (2, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let zv: Vec<f64> = (0..m * tau * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wv: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let z = g.constant(Tensor::new(vec![m, tau, d], zv.clone()).unwrap()).unwrap();
    let w = g.constant(Tensor::new(vec![d, d], wv.clone()).unwrap()).unwrap();
    let (e, lambda) = temporal_aggregate(&mut g, z, w).unwrap();
    for u in 0..m {
        let zt = |t: usize| &zv[(u * tau + t) * d..(u * tau + t + 1) * d];
        let last = zt(tau - 1);
        let scores: Vec<f64> = (0..tau)
            .map(|t| (0..d).map(|a| (0..d).map(|b| zt(t)[a] * wv[a * d + b] * last[b]).sum::<f64>()).sum())
            .collect();
        let ex: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let total: f64 = ex.iter().sum();
        for t in 0..tau {
            assert!((g.value(lambda)[u * tau + t] - ex[t] / total).abs() < 1e-12);
        }
        for c in 0..d {
            let want: f64 = (0..tau).map(|t| ex[t] / total * zt(t)[c]).sum();
            assert!((g.value(e)[u * d + c] - want).abs() < 1e-12);
        }
    }

    let zero_w = g.constant(Tensor::zeros(vec![d, d])).unwrap();
    let (_, lambda) = temporal_aggregate(&mut g, z, zero_w).unwrap();
    assert!(g.value(lambda).iter().all(|&l| l == 0.25));
    let same = g.constant(Tensor::new(vec![1, tau, d], [1.0, -2.0, 0.5].repeat(tau)).unwrap()).unwrap();
    let (e, lambda) = temporal_aggregate(&mut g, same, w).unwrap();
    assert!(g.value(lambda).iter().all(|&l| (l - 0.25).abs() < 1e-15));
    assert!(g.value(e).iter().zip([1.0, -2.0, 0.5]).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn prediction_reads_off_the_linear_map() {
    let cfg = tiny_config(2, 2, 4, 2);
    let mut params = random_params(&cfg, 11);
    params.pred_w = Tensor::zeros(vec![4, 1]);
    params.pred_b = Tensor::vector(vec![0.0]);
    let out = forward(&window(3, &cfg, 12), &params, &cfg).unwrap();
    assert_eq!(out.r_hat, vec![0.0; 3]);

    let mut g = Graph::new();
    let e = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let w = g.constant(Tensor::new(vec![2, 1], vec![0.7, -0.2]).unwrap()).unwrap();
    let b = g.constant(Tensor::vector(vec![0.0])).unwrap();
    let r = master_core::model::predict(&mut g, e, w, b).unwrap();
    assert_eq!(g.value(r), &[0.7, -0.2]);
}

#[test]
fn forward_shapes_and_purity() {
    let cfg = tiny_config(5, 7, 8, 3);
    let params = random_params(&cfg, 13);
    let w = window(4, &cfg, 14);
    let a = forward(&w, &params, &cfg).unwrap();
    let b = forward(&w, &params, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.r_hat.len(), 4);
    assert_eq!(a.alpha.len(), 5);
    assert_eq!(a.s1.shape(), &[4, 2, 3, 3]);
    assert_eq!(a.s2.shape(), &[3, 2, 4, 4]);
    assert_eq!(a.lambda.shape(), &[4, 3]);
    assert_eq!(a.e.shape(), &[4, 8]);

    let mut bad = w.clone();
    bad.market.values.pop();
    assert!(forward(&bad, &params, &cfg).is_err());
}

#[test]
fn ablations_behave_as_documented() {
    let mut cfg = tiny_config(3, 2, 4, 3);
    let params = random_params(&cfg, 15);
    let mut w = window(3, &cfg, 16);
    let per = cfg.lookback * cfg.n_features;
    let first: Vec<f64> = w.x.values()[..per].to_vec();
    w.x.values_mut()[per..2 * per].copy_from_slice(&first);

    cfg.disable_inter_stock = true;
    let out = forward(&w, &params, &cfg).unwrap();
    assert_eq!(out.r_hat[0], out.r_hat[1]);
    let eye = |i: usize| {
        let (u, v) = ((i / 3) % 3, i % 3);
        if u == v { 1.0 } else { 0.0 }
    };
    assert!(out.s2.values().iter().enumerate().all(|(i, &s)| s == eye(i)));

    cfg.disable_inter_stock = false;
    cfg.disable_gating = true;
    let out = forward(&w, &params, &cfg).unwrap();
    assert_eq!(out.alpha, vec![1.0; 3]);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_config(3, 5, 8, 4);
    let ckpt = Checkpoint { config: cfg.clone(), params: random_params(&cfg, 17) };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    for (a, b) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(Checkpoint::from_bytes(&bytes).is_err());
    bytes[0] = b'X';
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}

/// `π·window` with `perm[new] = old`.
fn permuted(w: &SampleWindow, perm: &[usize]) -> SampleWindow {
    let row = w.lookback() * w.n_features();
    let mut x = Vec::with_capacity(w.x.len());
    for &old in perm {
        x.extend_from_slice(&w.x.values()[old * row..(old + 1) * row]);
    }
    SampleWindow { x: Tensor::new(w.x.shape().to_vec(), x).unwrap(), ..w.clone() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forward_is_stock_permutation_equivariant(seed in 0u64..10_000, perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let cfg = tiny_config(3, 4, 8, 3);
        let params = random_params(&cfg, seed);
        let w = window(6, &cfg, seed + 1);
        let base = forward(&w, &params, &cfg).unwrap();
        let out = forward(&permuted(&w, &perm), &params, &cfg).unwrap();
        let (m, tau, d, h) = (6, 3, 8, 2);
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(out.r_hat[new].to_bits(), base.r_hat[old].to_bits());
            for c in 0..d {
                prop_assert_eq!(out.e.at(&[new, c]).to_bits(), base.e.at(&[old, c]).to_bits());
            }
            for t in 0..tau {
                prop_assert_eq!(out.lambda.at(&[new, t]).to_bits(), base.lambda.at(&[old, t]).to_bits());
            }
        }
        for t in 0..tau {
            for head in 0..h {
                for a in 0..m {
                    for b in 0..m {
                        let got = out.s2.at(&[t, head, a, b]);
                        let want = base.s2.at(&[t, head, perm[a], perm[b]]);
                        prop_assert_eq!(got.to_bits(), want.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn attention_and_temporal_rows_are_distributions(seed in 0u64..10_000, m in 1usize..6) {
        let cfg = tiny_config(4, 5, 8, 4);
        let out = forward(&window(m, &cfg, seed), &random_params(&cfg, seed ^ 0xabc), &cfg).unwrap();
        for t in [&out.s1, &out.s2] {
            for row in t.values().chunks(*t.shape().last().unwrap()) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for row in out.lambda.values().chunks(cfg.lookback) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!((out.alpha.iter().sum::<f64>() - 4.0).abs() < 1e-6);
    }
}
