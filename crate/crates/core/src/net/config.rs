use crate::error::{bail, Result};

/// Maximum number of classes the classification head supports.
pub const C_MAX: usize = 10;
/// Maximum number of input features.
pub const F_MAX: usize = 100;

/// Supported `(num_layers, dim)` model sizes.
pub const SUPPORTED_GRID: [(usize, usize); 7] =
    [(3, 32), (4, 64), (5, 96), (6, 256), (10, 384), (12, 512), (16, 768)];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub dim: usize,
    pub num_heads: usize,
    pub ffn_factor: usize,
    pub c_max: usize,
    pub f_max: usize,
}

impl ModelConfig {
    /// Default architecture (4 heads, FFN factor 2, `C_max` 10, `F_max` 100) at the given size.
    pub fn new(num_layers: usize, dim: usize) -> Self {
        ModelConfig {
            num_layers,
            dim,
            num_heads: 4,
            ffn_factor: 2,
            c_max: C_MAX,
            f_max: F_MAX,
        }
    }

    pub fn with_f_max(mut self, f_max: usize) -> Self {
        self.f_max = f_max;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.ffn_factor
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.dim == 0 || self.num_heads == 0 {
            bail!(Config, "layers, dim and heads must be positive: {self:?}");
        }
        if self.dim % self.num_heads != 0 {
            bail!(Config, "dim {} is not divisible by {} heads", self.dim, self.num_heads);
        }
        if self.c_max < 2 || self.f_max == 0 || self.ffn_factor == 0 {
            bail!(Config, "invalid c_max/f_max/ffn_factor in {self:?}");
        }
        Ok(())
    }

    /// Exact number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let h = self.hidden();
        let linear = |i: usize, o: usize| i * o + o;
        let layer = 4 * linear(d, d) + linear(d, h) + linear(h, d) + 2 * 2 * d;
        linear(self.f_max, d)
            + linear(1, d)
            + self.num_layers * layer
            + 2 * d
            + linear(d, d)
            + linear(d, self.c_max)
            + linear(d, d)
            + linear(d, 1)
    }
}
