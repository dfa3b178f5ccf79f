//! Point-cloud + phrase orientation regressor.
//!
//! A small transformer over point patches: farthest-point-sampled centers,
//! k-nearest-neighbor groups, a shared two-layer point MLP with max pooling
//! per group, a learned class token, and a direction head on the final class
//! token. The phrase embedding is projected to model width and fused into
//! the token stream by one of four [`Fusion`] modes. Gradients are computed
//! by hand-written reverse passes.

mod io;
mod model;
mod params;
pub mod tensor;
mod study;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textenc;

pub use io::{load_params, save_params, FORMAT_TAG};
pub use model::{
    forward, forward_text_free, loss_and_grad, loss_cosine, loss_cosine_grad, predict,
    predict_embedded, prepare, Example, Prepared,
};
pub use study::{fusion_ablation, monotone_with_tolerance, scaling_study, FusionRow, ScalingRow};
pub use params::{init_params, Grads, ModelParams, ParamKind, TensorInfo};
pub use train::{
    accuracy_at, angular_errors, evaluate, lr_at, train, train_examples, AdamW, Augment, EpochRecord, EvalReport, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// Projected text added to every token before every block.
    Addition,
    /// Projected text appended as one extra token before the first block.
    Concat,
    /// Tokens gated by `1 + projected text` before every block.
    Multiplication,
    /// One cross-attention sublayer per block, attending to the text token.
    CrossAttention,
}

impl Fusion {
    pub const ALL: [Fusion; 4] = [
        Fusion::Addition,
        Fusion::Concat,
        Fusion::Multiplication,
        Fusion::CrossAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Addition => "addition",
            Fusion::Concat => "concat",
            Fusion::Multiplication => "multiplication",
            Fusion::CrossAttention => "cross-attention",
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Fusion::ALL
            .into_iter()
            .find(|f| f.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown fusion mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_points: usize,
    pub n_patches: usize,
    pub patch_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub fusion: Fusion,
    pub text_dim: usize,
    pub head_hidden: usize,
    pub drop_path: f64,
    pub vocab_seed: u64,
    /// Express each cloud in its principal-axis frame before tokenizing and
    /// rotate the predicted direction back to the world frame.
    pub canonicalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_points: 1024,
            n_patches: 64,
            patch_size: 16,
            width: 128,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            fusion: Fusion::Addition,
            text_dim: textenc::DEFAULT_DIM,
            head_hidden: 128,
            drop_path: 0.0,
            vocab_seed: textenc::DEFAULT_VOCAB_SEED,
            canonicalize: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_points", self.n_points),
            ("n_patches", self.n_patches),
            ("patch_size", self.patch_size),
            ("width", self.width),
            ("layers", self.layers),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("text_dim", self.text_dim),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config: {name} must be positive")));
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model config: width {} is not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.n_patches > self.n_points || self.patch_size > self.n_points {
            return Err(Error::invalid(
                "model config: n_patches and patch_size must not exceed n_points",
            ));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(Error::invalid("model config: drop_path must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Sequence length seen by the transformer blocks.
    pub fn seq_len(&self) -> usize {
        1 + self.n_patches + usize::from(self.fusion == Fusion::Concat)
    }

    pub fn embed(&self, phrase: &str) -> Result<textenc::TextEmbedding> {
        textenc::embed_phrase(phrase, self.text_dim, self.vocab_seed)
    }
}
