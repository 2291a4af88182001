use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::ActivationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsamplerKind {
    /// linear + pixel shuffle + windowed and shifted-windowed attention
    #[default]
    Transformer,
    /// 3×3 convolution + pixel shuffle
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub patch: usize,
    pub width: usize,
    pub enc_layers: usize,
    pub heads: usize,
    pub up_blocks: usize,
    pub window: usize,
    pub views: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub mlp_ratio: usize,
    /// one positional table per view instead of a shared one
    pub per_view_pos: bool,
    pub upsampler: UpsamplerKind,
    /// one 12-channel linear head instead of per-attribute heads
    pub single_head: bool,
    pub activation: ActivationConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            width: 64,
            enc_layers: 4,
            heads: 4,
            up_blocks: 3,
            window: 256,
            views: 4,
            image_height: 64,
            image_width: 64,
            mlp_ratio: 4,
            per_view_pos: false,
            upsampler: UpsamplerKind::Transformer,
            single_head: false,
            activation: ActivationConfig::default(),
        }
    }
}

impl NetworkConfig {
    /// The desk-scale configuration used for end-to-end training runs.
    pub fn tiny() -> Self {
        Self {
            patch: 4,
            up_blocks: 2,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch, self.image_width / self.patch)
    }

    pub fn tokens_per_view(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Channel width after `block` upsampler blocks.
    pub fn width_at(&self, block: usize) -> usize {
        self.width >> block
    }

    /// Spatial factor still missing after the upsampler, closed by the heads.
    pub fn head_shuffle(&self) -> usize {
        self.patch >> self.up_blocks
    }

    /// Attention heads used at channel width `c`: the configured count,
    /// reduced while it does not divide `c` or leaves heads narrower than 8.
    pub fn heads_at(&self, c: usize) -> usize {
        let mut h = self.heads.max(1);
        while h > 1 && (!c.is_multiple_of(h) || c / h < 8.min(c)) {
            h -= 1;
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch == 0 || !self.patch.is_power_of_two() {
            return bad(format!("patch {} must be a power of two", self.patch));
        }
        if !self.image_height.is_multiple_of(self.patch) || !self.image_width.is_multiple_of(self.patch) {
            return bad(format!(
                "image {}x{} not divisible by patch {}",
                self.image_height, self.image_width, self.patch
            ));
        }
        if (1 << self.up_blocks) > self.patch {
            return bad(format!("up_blocks {} overshoots patch {}", self.up_blocks, self.patch));
        }
        if self.width == 0 || !self.width.is_multiple_of(1 << self.up_blocks) || self.width_at(self.up_blocks) == 0 {
            return bad(format!(
                "width {} cannot be halved {} times",
                self.width, self.up_blocks
            ));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return bad(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.views == 0 || self.mlp_ratio == 0 {
            return bad("views and mlp_ratio must be positive".into());
        }
        if self.upsampler == UpsamplerKind::Transformer {
            if self.window < 2 {
                return bad(format!("window {} must be at least 2", self.window));
            }
            for b in 1..=self.up_blocks {
                let len = (self.views * self.tokens_per_view()) << (2 * b);
                if self.window < len && !len.is_multiple_of(self.window) {
                    return bad(format!(
                        "window {} neither divides nor exceeds block {b} sequence length {len}",
                        self.window
                    ));
                }
            }
        }
        self.activation.validate()
    }
}
