use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length in voxels of the cubic patch folded into one token.
pub const EMBED_PATCH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    /// Input patch side in voxels; the model sees `patch³` volumes.
    pub patch: usize,
    /// Token width `d`.
    pub embed_dim: usize,
    /// Blocks per stage. Blocks alternate plain and shifted windows within a
    /// stage; there is no patch merging between stages.
    pub depths: Vec<usize>,
    pub heads: usize,
    /// Attention window side in tokens.
    pub window: usize,
    pub mlp_ratio: usize,
    /// Hidden width of the per-voxel decoder layer.
    pub decoder_hidden: usize,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            embed_dim: 16,
            depths: vec![2],
            heads: 2,
            window: 4,
            mlp_ratio: 4,
            decoder_hidden: 8,
        }
    }
}

impl ToyModelConfig {
    pub fn with_embed_dim(mut self, d: usize) -> Self {
        self.embed_dim = d;
        self
    }

    /// Token grid side.
    pub fn grid(&self) -> usize {
        self.patch / EMBED_PATCH
    }

    pub fn blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.patch % EMBED_PATCH != 0 {
            return bad(format!("patch {} must be a positive multiple of {EMBED_PATCH}", self.patch));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.window == 0 || self.grid() % self.window != 0 {
            return bad(format!("window {} must divide the token grid side {}", self.window, self.grid()));
        }
        if self.mlp_ratio == 0 || self.decoder_hidden == 0 {
            return bad("mlp_ratio and decoder_hidden must be positive".into());
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad(format!("depths {:?} must be non-empty and positive", self.depths));
        }
        Ok(())
    }
}
