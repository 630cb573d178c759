//! The MHSSMamba classifier.
//!
//! Pipeline per batch of patches:
//!
//! 1. spatial and spectral tokens `(B, L, C)` are projected to `embed_dim`;
//! 2. each family is gated by `sigmoid(c . W + b)` of the patch's center
//!    spectrum `c`;
//! 3. two cross-attention branches run, one querying with spatial tokens
//!    against spectral keys/values and one the other way round;
//! 4. each branch output is self-gated, `O * sigmoid(O . W_g + b_g)`;
//! 5. each branch is scanned by its own ReLU state-space recurrence;
//! 6. the two final states are concatenated and mapped to class logits.
//!
//! Steps 2-4 repeat `num_layers` times with fresh weights.

mod checkpoint;
mod gradcheck;
mod layers;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{model_grad_check, GradCheckConfig};
pub use layers::{
    enhance_tokens, feature_gate, forward, forward_tokens, mhsa, predict, ssm_scan, Enhanced, Gated, MhsaOutput,
    QuerySource,
};
pub use params::{Attention, Branch, Dense, Enhancement, Layer, ModelParams, Ssm};

use thiserror::Error;

use crate::data::{DataError, TokenPair};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Labels under which the forward pass records matmul MACs.
pub mod stage {
    pub const TOKEN_PROJECTION: &str = "token_projection";
    pub const ENHANCEMENT: &str = "enhancement";
    pub const ATTENTION_PROJECTION: &str = "attention_projection";
    pub const ATTENTION_SCORE: &str = "attention_score";
    pub const ATTENTION_VALUE: &str = "attention_value";
    pub const FEATURE_GATE: &str = "feature_gate";
    pub const SSM_UPDATE: &str = "ssm_update";
    pub const SSM_TRANSITION: &str = "ssm_transition";
    pub const CLASSIFIER: &str = "classifier";

    pub const ALL: [&str; 9] = [
        TOKEN_PROJECTION,
        ENHANCEMENT,
        ATTENTION_PROJECTION,
        ATTENTION_SCORE,
        ATTENTION_VALUE,
        FEATURE_GATE,
        SSM_UPDATE,
        SSM_TRANSITION,
        CLASSIFIER,
    ];
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HyperParams {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub state_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
}

impl HyperParams {
    /// Embedding 64, 4 heads, state 128, one layer.
    pub fn new(num_classes: usize) -> Self {
        Self {
            embed_dim: 64,
            num_heads: 4,
            state_dim: 128,
            num_layers: 1,
            num_classes,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("state_dim", self.state_dim),
            ("num_layers", self.num_layers),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be >= 1")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Hyperparameters, input width and weights of a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Mhssmamba<T> {
    pub hp: HyperParams,
    pub bands: usize,
    pub seed: u64,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Scalar> Mhssmamba<T> {
    pub fn new(hp: HyperParams, bands: usize, seed: u64) -> Result<Self, ModelError> {
        Ok(Self {
            hp,
            bands,
            seed,
            params: ModelParams::init(&hp, bands, seed)?,
        })
    }

    /// Registers every weight as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> ModelParams<Var> {
        self.params.map(|_, t| g.param(t.clone()))
    }

    /// Logits `(B, K)` for a token batch.
    pub fn logits(&self, tokens: &TokenPair<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let out = forward_tokens(&mut g, &bound, &self.hp, tokens)?;
        Ok(g.value(out).clone())
    }

    pub fn check_bands(&self, bands: usize) -> Result<(), ModelError> {
        if bands != self.bands {
            return Err(ModelError::Config(format!(
                "model expects {} bands but data has {bands}",
                self.bands
            )));
        }
        Ok(())
    }
}
