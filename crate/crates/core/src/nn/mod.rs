//! Recurrent encoder-decoder models with manual backpropagation.

pub mod checkpoint;
mod core;
mod generator;
mod gru;
mod params;
mod real;
mod scorer;

use serde::{Deserialize, Serialize};

pub use self::checkpoint::{Archive, Checkpointable};
pub use self::core::{CoreDims, RecurrentCore, INIT_SCALE};
pub use self::generator::{Generator, Response, DEFAULT_MAX_LEN};
pub use self::params::ParamStore;
pub use self::real::Real;
pub use self::scorer::{Discriminator, ScorerInput, ScorerPass, StepScorer, ValueNetwork};

/// Embedding and hidden width of one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed: 64,
            hidden: 512,
        }
    }
}
