//! Stepwise credit assignment for conditional sequence GANs.
//!
//! The crate bundles everything needed to compare sequence-GAN fine-tuning
//! strategies (SeqGAN, REGS, MCTS rollouts, MaskGAN-style returns, StepGAN and
//! its time-weighted variant) on a synthetic counting task whose true
//! conditional distribution is known exactly:
//!
//! - [`counting`]: the task, its answer enumeration and dataset files.
//! - [`nn`]: a small GRU encoder-decoder stack with hand-written backprop.
//! - [`credit`]: discriminator objectives and per-step policy-gradient weights.
//! - [`training`]: MLE pretraining and the alternating adversarial loop.
//! - [`eval`]: precision/recall, exact KL divergences and diagnostic probes.
//! - [`config`]: the flat `section.key=value` experiment config format.

pub mod config;
pub mod counting;
pub mod credit;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{Token, TokenSequence, Vocabulary};
