//! Toy continuous-control environments behind one step/reset interface.
//!
//! Environments emit observations only; rewards exist solely as
//! [`TaskReward`] functions evaluated on stored observations, which keeps
//! the collection interface reward-free by construction.

mod coverage;
mod pointmaze;
mod sparsecar;
mod tasks;
mod wrapper;

pub use coverage::occupancy_entropy;
pub use pointmaze::{NoisyRoom, PointMaze, MAZE_NOISE_DIMS};
pub use sparsecar::SparseCar;
pub use tasks::{find_task, task_reward_suite, TaskKind, TaskReward};
pub use wrapper::ActionRepeat;

use crate::{Error, Result};

/// Static description of an environment instance.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Raw environment steps per episode.
    pub episode_len: usize,
    /// Action repeat applied by the wrapper; episode_len must divide by it.
    pub action_repeat: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.action_repeat == 0 || self.episode_len % self.action_repeat != 0 {
            return Err(Error::invalid(format!(
                "episode length {} must be a positive multiple of action repeat {}",
                self.episode_len, self.action_repeat
            )));
        }
        if !self
            .action_low
            .iter()
            .chain(&self.action_high)
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("action bounds must be finite"));
        }
        Ok(())
    }

    /// Decision points per episode after action repeat.
    pub fn decisions(&self) -> usize {
        self.episode_len / self.action_repeat
    }
}

/// One environment transition.
pub struct StepResult {
    pub obs: Vec<f64>,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the seed drives any environment randomness
    /// (start jitter, observation noise) so episodes replay exactly.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one raw step. Out-of-box actions are clipped.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// (x-range, y-range) of the first two observation dims, for the
    /// occupancy-entropy coverage metric.
    fn coverage_bounds(&self) -> ((f64, f64), (f64, f64));
}

/// Builds a named environment with the action-repeat wrapper applied.
pub fn make_env(name: &str, episode_len: usize, action_repeat: usize) -> Result<Box<dyn Environment>> {
    let inner: Box<dyn Environment> = match name {
        "pointmaze" => Box::new(PointMaze::new(episode_len, action_repeat)?),
        "noisyroom" => Box::new(NoisyRoom::new(episode_len, action_repeat)?),
        "sparsecar" => Box::new(SparseCar::new(episode_len, action_repeat)?),
        other => return Err(Error::UnknownEnv(other.to_string())),
    };
    Ok(Box::new(ActionRepeat::new(inner)))
}

pub(crate) fn clip_action(action: &[f64], low: &[f64], high: &[f64], warned: &mut bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(action.len());
    let mut clipped = false;
    for i in 0..action.len() {
        let v = action[i].clamp(low[i], high[i]);
        if v != action[i] {
            clipped = true;
        }
        out.push(v);
    }
    if clipped && !*warned {
        eprintln!("warning: action outside box was clipped");
        *warned = true;
    }
    out
}
