use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::numerics::Tensor;

/// All learnable weights, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub intra_q: Tensor,
    pub intra_k: Tensor,
    pub intra_v: Tensor,
    pub intra_ffn_w1: Tensor,
    pub intra_ffn_b1: Tensor,
    pub intra_ffn_w2: Tensor,
    pub intra_ffn_b2: Tensor,
    pub inter_q: Tensor,
    pub inter_k: Tensor,
    pub inter_v: Tensor,
    pub inter_ffn_w1: Tensor,
    pub inter_ffn_b1: Tensor,
    pub inter_ffn_w2: Tensor,
    pub inter_ffn_b2: Tensor,
    pub temporal_w: Tensor,
    pub pred_w: Tensor,
    pub pred_b: Tensor,
}

pub const PARAM_NAMES: [&str; 23] = [
    "gate_w",
    "gate_b",
    "enc_w",
    "enc_b",
    "ln_gain",
    "ln_bias",
    "intra_q",
    "intra_k",
    "intra_v",
    "intra_ffn_w1",
    "intra_ffn_b1",
    "intra_ffn_w2",
    "intra_ffn_b2",
    "inter_q",
    "inter_k",
    "inter_v",
    "inter_ffn_w1",
    "inter_ffn_b1",
    "inter_ffn_w2",
    "inter_ffn_b2",
    "temporal_w",
    "pred_w",
    "pred_b",
];

/// Expected shape of every parameter, in checkpoint order.
pub fn param_shapes(cfg: &ModelConfig) -> [Vec<usize>; 23] {
    let (f, fm, d, ff) = (cfg.n_features, cfg.market_dim, cfg.d_model, cfg.d_ff);
    [
        vec![fm, f],
        vec![f],
        vec![f, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, ff],
        vec![ff],
        vec![ff, d],
        vec![d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, ff],
        vec![ff],
        vec![ff, d],
        vec![d],
        vec![d, d],
        vec![d, 1],
        vec![1],
    ]
}

fn glorot(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    let values = (0..shape[0] * shape[1]).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), values).expect("glorot shape")
}

impl ModelParams {
    /// Glorot-uniform affine weights, zero biases, unit layer-norm gain and
    /// a zero temporal bilinear form (uniform temporal attention at start).
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let shapes = param_shapes(cfg);
        let tensors = PARAM_NAMES
            .iter()
            .zip(shapes.iter())
            .map(|(name, shape)| match *name {
                "ln_gain" => Tensor::filled(shape.clone(), 1.0),
                "temporal_w" => Tensor::zeros(shape.clone()),
                _ if shape.len() == 2 => glorot(rng, shape),
                _ => Tensor::zeros(shape.clone()),
            })
            .collect();
        Self::from_tensors(cfg, tensors)
    }

    /// Every parameter zero except the unit layer-norm gain.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let tensors = PARAM_NAMES
            .iter()
            .zip(param_shapes(cfg))
            .map(|(name, shape)| if *name == "ln_gain" { Tensor::filled(shape, 1.0) } else { Tensor::zeros(shape) })
            .collect();
        Self::from_tensors(cfg, tensors)
    }

    /// Builds from tensors in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let shapes = param_shapes(cfg);
        if tensors.len() != shapes.len() {
            return Err(ModelError::Shape(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((t, want), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != want.as_slice() {
                return Err(ModelError::Shape(format!(
                    "parameter {name} has shape {:?}, config needs {:?}",
                    t.shape(),
                    want
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Shape(format!("parameter {name} has non-finite entries")));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            gate_w: next(),
            gate_b: next(),
            enc_w: next(),
            enc_b: next(),
            ln_gain: next(),
            ln_bias: next(),
            intra_q: next(),
            intra_k: next(),
            intra_v: next(),
            intra_ffn_w1: next(),
            intra_ffn_b1: next(),
            intra_ffn_w2: next(),
            intra_ffn_b2: next(),
            inter_q: next(),
            inter_k: next(),
            inter_v: next(),
            inter_ffn_w1: next(),
            inter_ffn_b1: next(),
            inter_ffn_w2: next(),
            inter_ffn_b2: next(),
            temporal_w: next(),
            pred_w: next(),
            pred_b: next(),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 23] {
        [
            &self.gate_w,
            &self.gate_b,
            &self.enc_w,
            &self.enc_b,
            &self.ln_gain,
            &self.ln_bias,
            &self.intra_q,
            &self.intra_k,
            &self.intra_v,
            &self.intra_ffn_w1,
            &self.intra_ffn_b1,
            &self.intra_ffn_w2,
            &self.intra_ffn_b2,
            &self.inter_q,
            &self.inter_k,
            &self.inter_v,
            &self.inter_ffn_w1,
            &self.inter_ffn_b1,
            &self.inter_ffn_w2,
            &self.inter_ffn_b2,
            &self.temporal_w,
            &self.pred_w,
            &self.pred_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 23] {
        [
            &mut self.gate_w,
            &mut self.gate_b,
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.intra_q,
            &mut self.intra_k,
            &mut self.intra_v,
            &mut self.intra_ffn_w1,
            &mut self.intra_ffn_b1,
            &mut self.intra_ffn_w2,
            &mut self.intra_ffn_b2,
            &mut self.inter_q,
            &mut self.inter_k,
            &mut self.inter_v,
            &mut self.inter_ffn_w1,
            &mut self.inter_ffn_b1,
            &mut self.inter_ffn_w2,
            &mut self.inter_ffn_b2,
            &mut self.temporal_w,
            &mut self.pred_w,
            &mut self.pred_b,
        ]
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn shapes_and_tensor_order_agree() {
        let cfg = ModelConfig { d_model: 8, d_ff: 16, ..ModelConfig::new(5, 7) };
        let p = ModelParams::init(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (t, shape) in p.tensors().iter().zip(param_shapes(&cfg)) {
            assert_eq!(t.shape(), shape.as_slice());
        }
        assert_eq!(p.n_values(), p.tensors().iter().map(|t| t.len()).sum::<usize>());
        let back = ModelParams::from_tensors(&cfg, p.clone().into_tensors()).unwrap();
        assert_eq!(back, p);
        let mut wrong = p.into_tensors();
        wrong.pop();
        assert!(ModelParams::from_tensors(&cfg, wrong).is_err());
    }
}
