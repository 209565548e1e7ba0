//! Desk-scale reward-free exploration via latent ensemble disagreement.
//!
//! The crate trains a recurrent latent world model from replay sequences,
//! quantifies model uncertainty with a bootstrap ensemble of one-step
//! predictors, and trains policies entirely inside the model by
//! backpropagating value gradients through imagined rollouts. After the
//! reward-free phase, downstream tasks are solved zero- or few-shot by
//! distilling a task reward into the latent reward head. A quadrature
//! oracle checks that the disagreement signal ranks state-actions like
//! exact mutual information.

pub mod agent;
pub mod diffcore;
pub mod ensemble;
pub mod envs;
pub mod exp;
pub mod imagine;
pub mod infogain;
pub mod parallel;
pub mod worldmodel;

mod error;

pub use error::{Error, Result};
