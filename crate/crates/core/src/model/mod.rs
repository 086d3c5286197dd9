//! The two-head network, its reference backbones, EMA averaging and the
//! checkpoint container.

mod backbone;
pub mod checkpoint;
mod ema;
mod two_head;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backbone::Backbone;
pub use ema::{ema_update, EmaState};
pub use two_head::{BatchOutputs, ForwardCache, HeadOutputs, OutputGrads, TwoHeadModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Two hidden fully connected layers of `feature_dim` units.
    TinyMlp,
    /// Three conv-BN-ReLU-pool blocks with 32, 64 and `feature_dim` channels.
    SmallCnn,
    /// Pre-activation ResNet-34 for 32x32 images; `feature_dim` is 512.
    PreactResnet34,
}

impl BackboneKind {
    /// Number of intermediate stages a shallow head can attach to.
    pub fn max_shallow_heads(self) -> usize {
        match self {
            BackboneKind::TinyMlp => 1,
            BackboneKind::SmallCnn => 2,
            BackboneKind::PreactResnet34 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub num_classes: usize,
    /// Shallow self-distillation heads; 0 disables self-distillation.
    pub num_shallow_heads: usize,
    pub feature_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "need at least 2 classes"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("model.feature_dim", "must be positive"));
        }
        if self.num_shallow_heads > self.backbone.max_shallow_heads() {
            return Err(Error::config(
                "model.num_shallow_heads",
                format!(
                    "{:?} supports at most {} shallow heads, got {}",
                    self.backbone,
                    self.backbone.max_shallow_heads(),
                    self.num_shallow_heads
                ),
            ));
        }
        if self.backbone == BackboneKind::PreactResnet34 && self.feature_dim != 512 {
            return Err(Error::config(
                "model.feature_dim",
                "preact-resnet34 produces 512-dimensional features",
            ));
        }
        Ok(())
    }
}
