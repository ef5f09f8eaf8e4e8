//! Transformer encoder with relation-typed attention biases.
//!
//! Each head of each layer owns thirteen learnable scalars, one per relation
//! type. For query token `i` and key token `j` the head adds
//! `b[type(i, j)]` to its attention logit, either after the `1/sqrt(d_k)`
//! scaling ([`BiasMode::BiasAfterScale`], the default) or before it
//! ([`BiasMode::BiasBeforeScale`]). [`BiasMode::Mask`] instead hard-masks the
//! configured relation types and [`BiasMode::None`] is a plain encoder.
//!
//! Blocks are post-norm (residual, then layer norm) with a tanh-GELU FFN.
//! Gradients are computed by hand in [`backward`] and can be checked
//! against central finite differences with [`gradcheck`].

pub mod backward;
pub mod forward;
pub mod gradcheck;
pub mod head;
pub mod params;
pub mod tensor;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{LinearizeOptions, PositionalScheme};
use crate::relations::BiasTypeId;

pub use backward::{loss, loss_and_grads, TrainingExample};
pub use forward::{attention_layer, embed, encode, relation_matrix, EncodedOutput};
pub use head::{cell_select, predict, CellSelection};
pub use params::{param_count, HeadParams, LayerParams, Model, ModelParams, ParamCount};
pub use tensor::Mat;

/// Floating-point element type of a model.
pub trait Real:
    Float + FromPrimitive + std::iter::Sum + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

impl Real for f64 {}
impl Real for f32 {}

/// Logit assigned to masked entries in [`BiasMode::Mask`].
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    None,
    BiasAfterScale,
    BiasBeforeScale,
    Mask,
}

impl BiasMode {
    pub const ALL: [BiasMode; 4] = [Self::None, Self::BiasAfterScale, Self::BiasBeforeScale, Self::Mask];

    pub fn needs_relations(self) -> bool {
        self != Self::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::BiasAfterScale => "bias-after-scale",
            Self::BiasBeforeScale => "bias-before-scale",
            Self::Mask => "mask",
        }
    }
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "bias-after-scale" | "after" => Ok(Self::BiasAfterScale),
            "bias-before-scale" | "before" | "so" => Ok(Self::BiasBeforeScale),
            "mask" | "sat" => Ok(Self::Mask),
            other => Err(Error::InvalidConfig(format!("unknown bias mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

fn default_masked() -> BTreeSet<BiasTypeId> {
    [BiasTypeId::Others].into()
}

fn default_init_std() -> f64 {
    0.02
}

fn default_ln_eps() -> f64 {
    1e-12
}

/// Architecture and variant switches. Row, column, rank and position
/// embedding tables each have `max_positions` entries; `max_positions` is
/// also the longest accepted sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub scheme: PositionalScheme,
    pub bias_mode: BiasMode,
    /// Relation types hidden in [`BiasMode::Mask`].
    #[serde(default = "default_masked")]
    pub masked_types: BTreeSet<BiasTypeId>,
    /// Relation types remapped to OTHERS before they reach the attention.
    #[serde(default)]
    pub ablated_types: BTreeSet<BiasTypeId>,
    #[serde(default)]
    pub precision: Precision,
    /// Standard deviation of the weight matrices and the probe.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Standard deviation of the embedding tables; `init_std` when absent.
    #[serde(default)]
    pub embedding_init_std: Option<f64>,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Relation-biased encoder with per-cell positions: `heads` heads of
    /// width `d_model / heads`, FFN width `2 * d_model`.
    pub fn new(layers: usize, heads: usize, d_model: usize) -> Self {
        let head_dim = d_model.checked_div(heads).unwrap_or(0);
        Self {
            layers,
            heads,
            d_model,
            d_k: head_dim,
            d_v: head_dim,
            ffn_dim: 2 * d_model,
            vocab_size: crate::linearize::DEFAULT_VOCAB_SIZE as usize,
            max_positions: crate::linearize::DEFAULT_MAX_LEN,
            scheme: PositionalScheme::Pcp,
            bias_mode: BiasMode::BiasAfterScale,
            masked_types: default_masked(),
            ablated_types: BTreeSet::new(),
            precision: Precision::F64,
            init_std: default_init_std(),
            embedding_init_std: None,
            layer_norm_eps: default_ln_eps(),
        }
    }

    pub fn with_scheme(mut self, scheme: PositionalScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_bias_mode(mut self, mode: BiasMode) -> Self {
        self.bias_mode = mode;
        self
    }

    pub fn with_vocab(mut self, vocab_size: usize, max_positions: usize) -> Self {
        self.vocab_size = vocab_size;
        self.max_positions = max_positions;
        self
    }

    pub fn with_ablation(mut self, types: impl IntoIterator<Item = BiasTypeId>) -> Self {
        self.ablated_types = types.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.heads == 0 || self.d_model == 0 || self.d_k == 0 || self.d_v == 0 {
            return fail("heads, d_model, d_k and d_v must be positive".into());
        }
        if self.heads * self.d_v != self.d_model {
            return fail(format!(
                "heads * d_v = {} but d_model = {}",
                self.heads * self.d_v,
                self.d_model
            ));
        }
        if self.ffn_dim == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return fail("ffn_dim, vocab_size and max_positions must be positive".into());
        }
        if self.vocab_size > u32::MAX as usize {
            return fail("vocab_size must fit in 32 bits".into());
        }
        if self.ablated_types.contains(&BiasTypeId::Others) {
            return fail("OTHERS cannot be ablated".into());
        }
        if !(self.layer_norm_eps > 0.0)
            || !(self.init_std >= 0.0)
            || self.embedding_init_std.is_some_and(|s| !(s >= 0.0))
        {
            return fail("layer_norm_eps must be positive and init_std non-negative".into());
        }
        Ok(())
    }

    pub fn linearize_options(&self) -> LinearizeOptions {
        LinearizeOptions {
            vocab_size: self.vocab_size as u32,
            max_len: self.max_positions,
        }
    }
}
