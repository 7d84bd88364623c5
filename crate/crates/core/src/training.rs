//! Per-date batch training: sum-of-squares loss, Adam updates and
//! validation-IC early stopping.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SampleWindow;
use crate::evaluation::{pearson, EvalError};
use crate::model::{forward, forward_graph, window_inputs, Checkpoint, ModelConfig, ModelError, ModelParams, ParamVars};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss in epoch {epoch} on {date}")]
    NonFiniteLoss { epoch: usize, date: String },
    #[error("non-finite gradient for parameter block {block}")]
    NonFiniteGradient { block: usize },
    #[error("epoch {epoch} aborted on {date}: {source}")]
    Aborted {
        epoch: usize,
        date: String,
        #[source]
        source: Box<TrainError>,
    },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("length mismatch: predictions {0}, labels {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-IC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm bound applied before each update.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            max_epochs: 40,
            patience: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("moment decays must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

/// `Σ_u (r̂_u − r_u)²` on the tape.
pub fn mse_loss(g: &mut Graph, r_hat: Var, r: Var) -> Result<Var, NumericsError> {
    let diff = g.sub(r_hat, r)?;
    let sq = g.mul(diff, diff)?;
    g.sum(sq)
}

/// Plain-value counterpart of [`mse_loss`].
pub fn mse(r_hat: &[f64], r: &[f64]) -> Result<f64, TrainError> {
    if r_hat.len() != r.len() {
        return Err(TrainError::LengthMismatch(r_hat.len(), r.len()));
    }
    Ok(r_hat.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Adam moment accumulators, one pair per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

/// What one update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Global norm before clipping.
    pub grad_norm: f64,
    /// Global norm actually applied.
    pub applied_norm: f64,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.len()]).collect();
        let second = first.clone();
        Self { first, second, step: 0 }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        Self::new(params.tensors())
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|v| *v *= s);
    }
    norm
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// One Adam update with optional clipping. Rejects non-finite gradients
/// before touching any state.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &mut [Vec<f64>],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<StepInfo, TrainError> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(TrainError::Config(format!(
            "{} parameter blocks, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (block, (p, gr)) in params.iter().zip(grads.iter()).enumerate() {
        if p.len() != gr.len() || state.first[block].len() != gr.len() {
            return Err(TrainError::Config(format!("gradient size mismatch in block {block}")));
        }
        if gr.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient { block });
        }
    }
    let grad_norm = match cfg.clip_norm {
        Some(c) => clip_global_norm(grads, c),
        None => global_norm(grads),
    };
    let applied_norm = global_norm(grads);

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (block, p) in params.iter_mut().enumerate() {
        let m = &mut state.first[block];
        let v = &mut state.second[block];
        for (i, w) in p.values_mut().iter_mut().enumerate() {
            let gi = grads[block][i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(StepInfo {
        grad_norm,
        applied_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-date loss over the epoch.
    pub train_loss: f64,
    pub valid_ic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Loss and gradients for one window; blocks outside the active graph
/// (ablated stages) get zero gradients.
pub fn window_gradients(
    window: &SampleWindow,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, true)?;
    let (x, m) = window_inputs(&mut g, window, cfg)?;
    let out = forward_graph(&mut g, x, m, &p, cfg)?;
    let r = g.constant(Tensor::vector(window.r.clone()))?;
    let loss = mse_loss(&mut g, out.r_hat, r)?;
    let value = g.value(loss)[0];
    g.backward(loss)?;
    let grads = p
        .all()
        .iter()
        .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec))
        .collect();
    Ok((value, grads))
}

/// Mean daily Pearson IC of the model over `windows`.
pub fn validation_ic(windows: &[SampleWindow], params: &ModelParams, cfg: &ModelConfig) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }
    let mut total = 0.0;
    for w in windows {
        let out = forward(w, params, cfg)?;
        total += pearson(&out.r_hat, &w.r)?;
    }
    Ok(total / windows.len() as f64)
}

/// Trains from a seeded initialization.
pub fn train(
    train_windows: &[SampleWindow],
    valid_windows: &[SampleWindow],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ModelParams::init(model, &mut rng)?;
    train_from(params, &mut rng, train_windows, valid_windows, model, cfg)
}

/// Trains starting from `params`, drawing date orders from `rng`.
pub fn train_from(
    mut params: ModelParams,
    rng: &mut ChaCha8Rng,
    train_windows: &[SampleWindow],
    valid_windows: &[SampleWindow],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if train_windows.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if valid_windows.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }

    let mut state = OptimizerState::for_model(&params);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let w = &train_windows[i];
            let date = w.prediction_date.to_string();
            let (loss, mut grads) = window_gradients(w, &params, model).map_err(|e| TrainError::Aborted {
                epoch,
                date: date.clone(),
                source: Box::new(e),
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, date });
            }
            let mut blocks = params.tensors_mut();
            optimizer_step(&mut blocks, &mut grads, &mut state, cfg).map_err(|e| TrainError::Aborted {
                epoch,
                date,
                source: Box::new(e),
            })?;
            loss_sum += loss;
        }
        let valid_ic = validation_ic(valid_windows, &params, model)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            valid_ic,
        });
        match &best {
            Some((ic, _, _)) if valid_ic <= *ic => since_best += 1,
            _ => {
                best = Some((valid_ic, epoch, params.clone()));
                since_best = 0;
            }
        }
        if since_best >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: Checkpoint {
            config: model.clone(),
            params: best_params,
        },
        best_epoch,
        history,
        stopped_early,
    })
}

/// `epoch,train_loss,valid_ic` rows.
pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_loss,valid_ic")?;
    for r in history {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.valid_ic)?;
    }
    w.flush()?;
    Ok(())
}
