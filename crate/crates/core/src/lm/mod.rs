//! Compact decoder-only language model with exact reverse-mode gradients.
//!
//! The backbone is frozen during policy finetuning; the actor trains only
//! the low-rank adapters on the query/value projections and the critic
//! trains only its MLP head, which reads the base (adapter-free) hidden state
//! of the last observation token.

mod checkpoint;
pub(crate) use checkpoint::hex;
mod critic;
mod optim;
mod params;
mod pretrain;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_adapters, load_checkpoint, save_adapters, save_checkpoint, Checkpoint};
pub use critic::{CriticActs, CriticCache};
pub use optim::{Adam, AdamConfig};
pub use params::{
    clip_grad_norm, Adapters, BaseWeights, CriticHead, LayerAdapters, LayerWeights, LowRankPair, ModelParams,
    ParamSet,
};
pub use pretrain::{corpus_loss, pretrain, PretrainConfig};
pub use transformer::{Activations, ForwardResult, Gradients, Mode, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub adapter_rank: usize,
    pub adapter_scale: f64,
    pub critic_hidden: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            context_length: 256,
            embed_dim: 64,
            n_layers: 2,
            n_heads: 4,
            adapter_rank: 4,
            adapter_scale: 8.0,
            critic_hidden: (256, 128),
        }
    }
}

impl ModelConfig {
    pub fn ff_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return fail(format!("embed_dim {} not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        if self.n_layers == 0 || self.context_length == 0 {
            return fail("n_layers and context_length must be positive".into());
        }
        if self.adapter_rank == 0 || self.adapter_rank >= self.embed_dim {
            return fail(format!("adapter_rank {} must be in 1..embed_dim", self.adapter_rank));
        }
        if !(self.adapter_scale.is_finite() && self.adapter_scale > 0.0) {
            return fail("adapter_scale must be positive".into());
        }
        if self.critic_hidden.0 == 0 || self.critic_hidden.1 == 0 {
            return fail("critic hidden widths must be positive".into());
        }
        Ok(())
    }
}
