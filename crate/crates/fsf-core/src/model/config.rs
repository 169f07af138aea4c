//! Model hyperparameters and the closed-form parameter count.

use super::ModelError;

/// Shape of the encoder-only window classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Messages per window (rows of the input matrix).
    pub timesteps: usize,
    /// Telemetry channels per message (columns of the input matrix).
    pub features: usize,
    /// Embedding width shared by every encoder stage.
    pub d_model: usize,
    /// Encoder layer count.
    pub layers: usize,
    /// Self-attention heads per layer; the per-head width is
    /// `d_model / heads`.
    pub heads: usize,
    /// Heads in the attention pooling stage.
    pub pool_heads: usize,
    /// Hidden width of the position-wise feed-forward block.
    pub ffn_hidden: usize,
    /// Output classes.
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            timesteps: 20,
            features: 9,
            d_model: 64,
            layers: 6,
            heads: 2,
            pool_heads: 4,
            ffn_hidden: 2048,
            classes: 20,
        }
    }
}

impl ModelConfig {
    /// Per-head width in the self-attention layers. The same value scales the
    /// pooling scores, matching the shared head-dimension convention.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timesteps == 0
            || self.features == 0
            || self.d_model == 0
            || self.layers == 0
            || self.heads == 0
            || self.pool_heads == 0
            || self.ffn_hidden == 0
            || self.classes == 0
        {
            return Err(ModelError::BadConfig("all dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Small shape for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            timesteps: 4,
            features: 3,
            d_model: 8,
            layers: 1,
            heads: 2,
            pool_heads: 2,
            ffn_hidden: 16,
            classes: 3,
        }
    }

    /// Total learnable scalar count, by shape arithmetic:
    ///
    /// - embedding: `F*d + d + T*d`
    /// - per encoder layer: `3*d*d` (per-head query/key/value maps together
    ///   span the full width) `+ d*d` (output map) `+ d*ffn + ffn + ffn*d + d`
    ///   (feed-forward) `+ 4*d` (two layer norms)
    /// - pooling: `2*d*d` (shared key/value maps) `+ Hp*d` (query seeds)
    ///   `+ Hp*d*d` (per-head query maps) `+ Hp*d*d` (output map)
    /// - classifier: `d*C + C`
    pub fn param_count(&self) -> usize {
        let (t, f, d) = (self.timesteps, self.features, self.d_model);
        let (ffn, hp, c) = (self.ffn_hidden, self.pool_heads, self.classes);
        let embed = f * d + d + t * d;
        let layer = 3 * d * d + d * d + (d * ffn + ffn + ffn * d + d) + 4 * d;
        let pool = 2 * d * d + hp * d + hp * d * d + hp * d * d;
        let cls = d * c + c;
        embed + self.layers * layer + pool + cls
    }
}
