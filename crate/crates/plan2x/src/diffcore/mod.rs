//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitive operations during the forward pass and
//! replays them in reverse to accumulate gradients. Tapes are rebuilt per
//! training step, which keeps recurrent rollouts of varying horizon
//! simple. A tape is single-threaded; [`Tensor`]s are plain buffers and
//! move freely between threads.

mod checkpoint;
mod gradcheck;
mod kernels;
mod nn;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_params, read_params, restore_into, save_params, write_params, ParamRecord};
pub use gradcheck::{central_difference, check_primitives, max_relative_error, CheckReport};
pub use nn::{flatten_values, unflatten_values, GruCell, Linear, Mlp};
pub use optim::{Adam, StepOutcome};
pub use tape::{
    gaussian_kl, gaussian_log_density, gaussian_log_density_unit, reparam_sample, Gradients, Tape,
    Var,
};
pub use tensor::Tensor;
