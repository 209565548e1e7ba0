//! Downstream reward functions, evaluable on stored observations so
//! replay data can be relabeled after the fact.

use super::sparsecar::SparseCar;
use crate::{Error, Result};

/// Goal radius for reach tasks; reward decays linearly to zero at the rim.
pub const GOAL_RADIUS: f64 = 0.3;

pub const GOAL_A: (f64, f64) = (1.75, 0.75);
pub const GOAL_B: (f64, f64) = (1.75, 0.25);
pub const GOAL_C: (f64, f64) = (0.25, 0.85);
/// Velocity that earns full reward on the car tasks.
pub const CAR_VMAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskKind {
    /// r = max(0, 1 - |pos - goal| / radius)
    ReachGoal { goal: (f64, f64), radius: f64 },
    /// r = max(0, min(v / vmax, 1))
    VelocityForward { vmax: f64 },
    /// r = max(0, min(-v / vmax, 1))
    VelocityBackward { vmax: f64 },
}

/// A named, deterministic, bounded reward on (observation, action).
#[derive(Debug, Clone)]
pub struct TaskReward {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskReward {
    pub fn eval(&self, obs: &[f64], _action: &[f64]) -> f64 {
        match self.kind {
            TaskKind::ReachGoal { goal, radius } => {
                let dx = obs[0] - goal.0;
                let dy = obs[1] - goal.1;
                let dist = (dx * dx + dy * dy).sqrt();
                (1.0 - dist / radius).max(0.0)
            }
            TaskKind::VelocityForward { vmax } => {
                (SparseCar::velocity_of(obs) / vmax).clamp(0.0, 1.0)
            }
            TaskKind::VelocityBackward { vmax } => {
                (-SparseCar::velocity_of(obs) / vmax).clamp(0.0, 1.0)
            }
        }
    }
}

/// The downstream tasks registered for a named environment.
pub fn task_reward_suite(env_name: &str) -> Result<Vec<TaskReward>> {
    let reach = |name: &str, goal| TaskReward {
        name: name.into(),
        kind: TaskKind::ReachGoal {
            goal,
            radius: GOAL_RADIUS,
        },
    };
    match env_name {
        "pointmaze" => Ok(vec![
            reach("goal-a", GOAL_A),
            reach("goal-b", GOAL_B),
            reach("goal-c", GOAL_C),
        ]),
        "noisyroom" => Ok(vec![reach("goal-out", GOAL_C)]),
        "sparsecar" => Ok(vec![
            TaskReward {
                name: "forward".into(),
                kind: TaskKind::VelocityForward { vmax: CAR_VMAX },
            },
            TaskReward {
                name: "backward".into(),
                kind: TaskKind::VelocityBackward { vmax: CAR_VMAX },
            },
        ]),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

/// Finds a registered task by name.
pub fn find_task(env_name: &str, task_name: &str) -> Result<TaskReward> {
    task_reward_suite(env_name)?
        .into_iter()
        .find(|t| t.name == task_name)
        .ok_or_else(|| Error::UnknownTask {
            env: env_name.to_string(),
            task: task_name.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_task_matches_clipped_linear_form() {
        let task = find_task("sparsecar", "backward").unwrap();
        // v = -5 with vmax = 10 gives r = 0.5.
        let obs = vec![0.0, -0.5];
        assert!((task.eval(&obs, &[0.0]) - 0.5).abs() < 1e-12);
        // Forward motion earns nothing under the backward task.
        let obs = vec![0.0, 0.5];
        assert_eq!(task.eval(&obs, &[0.0]), 0.0);
        // Beyond vmax the reward clips at one.
        let obs = vec![0.0, -1.0];
        assert_eq!(task.eval(&obs, &[0.0]), 1.0);
    }

    #[test]
    fn goal_center_earns_full_reward() {
        let task = find_task("pointmaze", "goal-a").unwrap();
        let obs = vec![GOAL_A.0, GOAL_A.1, 0.0, 0.0];
        assert_eq!(task.eval(&obs, &[0.0, 0.0]), 1.0);
        let far = vec![0.0, 0.0, 0.0, 0.0];
        assert_eq!(task.eval(&far, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(task_reward_suite("atari").is_err());
        assert!(find_task("pointmaze", "goal-z").is_err());
    }
}
