//! The heterogeneous graph transformer policy.
//!
//! Structure of one forward pass:
//!
//! 1. Typed encoder: each node's local observation goes through the linear map
//!    of its node type, plus a learned positional row looked up by the node's
//!    position in a fixed bounding grid.
//! 2. `layers` HGT blocks. Each computes per-head attention restricted to the
//!    node's graph neighbors (typed Q/K projections), per-edge messages
//!    (typed V projections multiplied by the edge type's message matrix),
//!    an attention-weighted sum per target, an activation, a typed output
//!    map, and a residual connection.
//! 3. A shared decoder maps `[H_L(t), global embedding]` to the action mean of
//!    node `t`; a separate critic decoder maps the node-mean of `H_L` and the
//!    global embedding to a state value.

mod checkpoint;
mod network;
mod params;
mod policy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::EdgeScheme;
use crate::tensor::TensorError;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{
    attention_dense, forward, hgt_aggregate, hetero_attention, hetero_message, hidden_states, encode, policy_value, ForwardVars,
    GraphPlan, PolicyOutput,
};
pub use params::{LinearIdx, Parameters, ParamLayout};
pub use policy::{entropy, log_prob, log_prob_and_sample, log_prob_on_tape, sample_actions, LOG_SQRT_2PI};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("voxel at row {row}, col {col} lies outside the {rows}x{cols} positional grid")]
    GridBounds { row: usize, col: usize, rows: usize, cols: usize },
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint: truncated payload ({0})")]
    Truncated(&'static str),
    #[error("checkpoint: {0}")]
    CheckpointShape(String),
    #[error("checkpoint header: {0}")]
    Header(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub local_obs_dim: usize,
    pub global_obs_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub global_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Linear layers in each node type's post-aggregation map.
    pub out_mlp_depth: usize,
    pub scheme: EdgeScheme,
    /// Fixed log standard deviation of the Gaussian policy.
    pub log_std: f64,
    /// Nonlinearity applied to the aggregated message before the typed output map.
    pub activation: Activation,
    /// Nonlinearity inside the global, decoder and critic MLPs.
    pub mlp_activation: Activation,
    pub max_grid_rows: usize,
    pub max_grid_cols: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            local_obs_dim: 16,
            global_obs_dim: 3,
            embed_dim: 128,
            layers: 3,
            heads: 2,
            global_hidden: vec![64, 64],
            decoder_hidden: vec![64],
            out_mlp_depth: 1,
            scheme: EdgeScheme::NodePair,
            log_std: -0.7,
            activation: Activation::Relu,
            mlp_activation: Activation::Tanh,
            max_grid_rows: 7,
            max_grid_cols: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.heads == 0 || self.layers == 0 {
            return err("layers and heads must be at least 1");
        }
        if self.embed_dim == 0 || self.local_obs_dim == 0 || self.global_obs_dim == 0 {
            return err("dimensions must be positive");
        }
        if self.embed_dim % self.heads != 0 {
            return err("embed_dim must be divisible by heads");
        }
        if self.global_hidden.is_empty() || self.global_hidden.iter().chain(&self.decoder_hidden).any(|&d| d == 0) {
            return err("MLP hidden sizes must be positive and the global MLP needs at least one layer");
        }
        if self.out_mlp_depth == 0 {
            return err("out_mlp_depth must be at least 1");
        }
        if self.max_grid_rows == 0 || self.max_grid_cols == 0 {
            return err("positional grid must be non-empty");
        }
        if !self.log_std.is_finite() {
            return err("log_std must be finite");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn max_nodes(&self) -> usize {
        self.max_grid_rows * self.max_grid_cols
    }

    pub fn node_type_count(&self) -> usize {
        self.scheme.node_type_count()
    }

    pub fn edge_type_count(&self) -> usize {
        self.scheme.edge_type_count()
    }

    pub fn global_embed_dim(&self) -> usize {
        *self.global_hidden.last().expect("validated: non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_sizes() {
        let c = ModelConfig::default();
        assert_eq!((c.embed_dim, c.layers, c.heads), (128, 3, 2));
        assert_eq!(c.global_hidden, vec![64, 64]);
        assert_eq!(c.max_nodes(), 49);
        assert_eq!(c.head_dim(), 64);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig {
            embed_dim: 10,
            heads: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            layers: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig {
            scheme: EdgeScheme::Direction,
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"scheme\":\"d\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
    }
}
