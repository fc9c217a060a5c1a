//! Attention heads placed between the encoder and the CTC softmax.
//!
//! [`AttentionCtc`] works on a window of `C = 2τ + 1` hidden frames around
//! each output frame `u`. Every window position `j` (frame `t = u - τ + j`)
//! has its own time-convolution kernel, producing filtered vectors `g_t`.
//! With uniform weights and `γ = C` the context is the plain sum of the
//! filtered window; content and hybrid scoring replace the uniform weights
//! with a softmax over `vᵀ tanh(U z + W g_t [+ V f_t] + b)`, where `z` is the
//! previous frame's logit vector (or the pseudo-LM output) and `f` are
//! location features convolved from the previous weights. Component
//! attention drops `v` and normalizes every hidden dimension separately.
//!
//! [`SelfAttentionCtc`] instead scores a centre query against keys of the
//! same window with scaled dot products, followed by residual connections,
//! layer normalization and a feed-forward layer.
//!
//! Frames outside the utterance contribute zero hidden vectors.

mod head;
mod ops;
mod self_attention;

pub use head::{AttentionCtc, AttentionParams, AttentionTrace, LocationParams, PlmState};
pub use ops::{attend, coma, context, location_features, output_head, plm_step, time_convolution, HeadOutput};
pub use self_attention::{
    self_attention_block, BlockOutput, SelfAttentionConfig, SelfAttentionCtc, SelfAttentionParams,
};

use crate::error::{Error, Result};

/// How window weights are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scoring {
    /// Time convolution only: every window position weighs `1/C`.
    Uniform,
    /// Scores from the previous logits and the filtered window.
    Content,
    /// Content plus location features from the previous weights.
    Hybrid,
}

impl Scoring {
    pub fn as_str(self) -> &'static str {
        match self {
            Scoring::Uniform => "uniform",
            Scoring::Content => "content",
            Scoring::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" | "tc" => Ok(Scoring::Uniform),
            "content" | "ca" => Ok(Scoring::Content),
            "hybrid" | "ha" => Ok(Scoring::Hybrid),
            _ => Err(Error::Config(format!("unknown scoring mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    /// One-sided window length.
    pub tau: usize,
    /// Context scale; `None` means `C`.
    pub gamma: Option<f64>,
    pub scoring: Scoring,
    pub plm: bool,
    pub coma: bool,
    pub location_channels: usize,
    pub location_width: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            tau: 4,
            gamma: None,
            scoring: Scoring::Content,
            plm: false,
            coma: false,
            location_channels: 1,
            location_width: 3,
        }
    }
}

impl AttentionConfig {
    pub fn window(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(self.window() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.location_channels == 0 || self.location_width == 0 {
            return Err(Error::Config(
                "location kernel needs at least one channel and tap".into(),
            ));
        }
        if self.scoring == Scoring::Uniform && (self.plm || self.coma) {
            return Err(Error::Config("plm and coma need content or hybrid scoring".into()));
        }
        Ok(())
    }
}
