use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters plus ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Stock feature width F.
    pub n_features: usize,
    /// Market status width F′.
    pub market_dim: usize,
    /// Embedding width D.
    pub d_model: usize,
    /// Lookback length τ.
    pub lookback: usize,
    /// Intra-stock heads N₁.
    pub intra_heads: usize,
    /// Inter-stock heads N₂.
    pub inter_heads: usize,
    /// Gating temperature β.
    pub beta: f64,
    /// FFN hidden width.
    pub d_ff: usize,
    #[serde(default)]
    pub disable_inter_stock: bool,
    #[serde(default)]
    pub disable_gating: bool,
}

impl ModelConfig {
    /// Full-size widths (`D = 256`, `N₁ = 4`, `N₂ = 2`, `β = 5`) for the
    /// given feature and market dimensions.
    pub fn new(n_features: usize, market_dim: usize) -> Self {
        Self {
            n_features,
            market_dim,
            d_model: 256,
            lookback: 8,
            intra_heads: 4,
            inter_heads: 2,
            beta: 5.0,
            d_ff: 512,
            disable_inter_stock: false,
            disable_gating: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("n_features", self.n_features),
            ("market_dim", self.market_dim),
            ("d_model", self.d_model),
            ("lookback", self.lookback),
            ("intra_heads", self.intra_heads),
            ("inter_heads", self.inter_heads),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.intra_heads != 0 || self.d_model % self.inter_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be divisible by intra_heads {} and inter_heads {}",
                self.d_model, self.intra_heads, self.inter_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} must be even for the sinusoidal position table",
                self.d_model
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ModelError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_widths() {
        assert!(ModelConfig::new(8, 63).validate().is_ok());
        let bad = [
            ModelConfig { d_model: 30, ..ModelConfig::new(8, 63) },
            ModelConfig { d_model: 6, intra_heads: 4, inter_heads: 2, ..ModelConfig::new(8, 63) },
            ModelConfig { lookback: 0, ..ModelConfig::new(8, 63) },
            ModelConfig { beta: 0.0, ..ModelConfig::new(8, 63) },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
