//! Two rooms joined by a corridor, plus a noisy-observation variant.
//!
//! World: [0, 2] x [0, 1] with a dividing wall at x = 1, passable through
//! the corridor gap y in [0.4, 0.6]. Actions command velocity in
//! [-1, 1]^2, integrated with dt = 0.1. Motion components into a wall are
//! zeroed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, StepResult};
use crate::{Error, Result};

const DT: f64 = 0.1;
const WALL_X: f64 = 1.0;
const GAP_LO: f64 = 0.4;
const GAP_HI: f64 = 0.6;
const START: (f64, f64) = (0.15, 0.15);
const START_JITTER: f64 = 0.05;

/// Extra pure-noise observation dims carried by [`NoisyRoom`].
pub const MAZE_NOISE_DIMS: usize = 8;

pub struct PointMaze {
    spec: EnvSpec,
    pos: (f64, f64),
    vel: (f64, f64),
    steps: usize,
    done: bool,
    warned: bool,
}

impl PointMaze {
    pub fn new(episode_len: usize, action_repeat: usize) -> Result<Self> {
        let spec = EnvSpec {
            name: "pointmaze".into(),
            obs_dim: 4,
            action_dim: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            episode_len,
            action_repeat,
        };
        spec.validate()?;
        Ok(PointMaze {
            spec,
            pos: START,
            vel: (0.0, 0.0),
            steps: 0,
            done: false,
            warned: false,
        })
    }

    /// Test hook: place the agent exactly.
    pub fn set_position(&mut self, x: f64, y: f64) {
        self.pos = (x, y);
    }

    pub fn position(&self) -> (f64, f64) {
        self.pos
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos.0, self.pos.1, self.vel.0, self.vel.1]
    }

    /// Advances kinematics, zeroing motion components into walls.
    fn advance(&mut self, ax: f64, ay: f64) {
        let (x, y) = self.pos;
        let mut nx = x + ax * DT;
        // Outer bounds and the divider both zero the x-component.
        let crosses_divider = (x - WALL_X) * (nx - WALL_X) < 0.0;
        let in_gap = y >= GAP_LO && y <= GAP_HI;
        if nx < 0.0 || nx > 2.0 || (crosses_divider && !in_gap) {
            nx = x;
        }
        let mut ny = y + ay * DT;
        if ny < 0.0 || ny > 1.0 {
            ny = y;
        }
        self.vel = ((nx - x) / DT, (ny - y) / DT);
        self.pos = (nx, ny);
    }
}

impl Environment for PointMaze {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = (
            START.0 + rng.gen_range(-START_JITTER..START_JITTER),
            START.1 + rng.gen_range(-START_JITTER..START_JITTER),
        );
        self.vel = (0.0, 0.0);
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let a = clip_action(action, &self.spec.action_low, &self.spec.action_high, &mut self.warned);
        self.advance(a[0], a[1]);
        self.steps += 1;
        self.done = self.steps >= self.spec.episode_len;
        Ok(StepResult {
            obs: self.observation(),
            done: self.done,
        })
    }

    fn coverage_bounds(&self) -> ((f64, f64), (f64, f64)) {
        ((0.0, 2.0), (0.0, 1.0))
    }
}

/// PointMaze with extra observation dims that are pure standard-normal
/// noise while the agent is in the right room (x > 1), the aleatoric
/// trap. The noise stream is seeded per episode so replays are exact.
pub struct NoisyRoom {
    maze: PointMaze,
    spec: EnvSpec,
    noise_rng: ChaCha8Rng,
}

impl NoisyRoom {
    pub fn new(episode_len: usize, action_repeat: usize) -> Result<Self> {
        let maze = PointMaze::new(episode_len, action_repeat)?;
        let mut spec = maze.spec.clone();
        spec.name = "noisyroom".into();
        spec.obs_dim = 4 + MAZE_NOISE_DIMS;
        Ok(NoisyRoom {
            maze,
            spec,
            noise_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    /// True when a stored observation lies in the noise zone.
    pub fn in_noise_zone(obs: &[f64]) -> bool {
        obs[0] > WALL_X
    }

    fn observation(&mut self, base: Vec<f64>) -> Vec<f64> {
        let mut obs = base;
        let in_zone = obs[0] > WALL_X;
        for _ in 0..MAZE_NOISE_DIMS {
            if in_zone {
                obs.push(standard_normal(&mut self.noise_rng));
            } else {
                obs.push(0.0);
            }
        }
        obs
    }
}

impl Environment for NoisyRoom {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(1));
        let base = self.maze.reset(seed);
        self.observation(base)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let inner = self.maze.step(action)?;
        Ok(StepResult {
            obs: self.observation(inner.obs),
            done: inner.done,
        })
    }

    fn coverage_bounds(&self) -> ((f64, f64), (f64, f64)) {
        self.maze.coverage_bounds()
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_motion_follows_kinematics() {
        let mut env = PointMaze::new(200, 2).unwrap();
        env.reset(0);
        env.set_position(0.0, 0.0);
        let r = env.step(&[1.0, 0.0]).unwrap();
        assert!((r.obs[0] - 0.1).abs() < 1e-12);
        assert!((r.obs[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn wall_contact_zeroes_the_normal_component() {
        let mut env = PointMaze::new(200, 2).unwrap();
        env.reset(0);
        // Heading into the divider from the left, below the gap.
        env.set_position(0.95, 0.2);
        let r = env.step(&[1.0, 1.0]).unwrap();
        assert!((r.obs[0] - 0.95).abs() < 1e-12, "x motion into wall zeroed");
        assert!((r.obs[1] - 0.3).abs() < 1e-12, "y motion survives");
        assert_eq!(r.obs[2], 0.0);
    }

    #[test]
    fn corridor_gap_is_passable() {
        let mut env = PointMaze::new(200, 2).unwrap();
        env.reset(0);
        env.set_position(0.95, 0.5);
        let r = env.step(&[1.0, 0.0]).unwrap();
        assert!((r.obs[0] - 1.05).abs() < 1e-12);
    }

    #[test]
    fn step_after_done_rejected() {
        let mut env = PointMaze::new(4, 2).unwrap();
        env.reset(0);
        for _ in 0..4 {
            env.step(&[0.1, 0.0]).unwrap();
        }
        assert!(env.step(&[0.1, 0.0]).is_err());
    }

    #[test]
    fn noisy_room_noise_only_in_zone_and_replays_exactly() {
        let mut env = NoisyRoom::new(200, 2).unwrap();
        let first = env.reset(7);
        assert_eq!(first.len(), 4 + MAZE_NOISE_DIMS);
        assert!(first[4..].iter().all(|&v| v == 0.0), "left room is quiet");

        // Drive into the right room through the gap.
        let mut env2 = NoisyRoom::new(200, 2).unwrap();
        env2.maze.reset(7);
        env2.noise_rng = ChaCha8Rng::seed_from_u64(7u64.wrapping_mul(0x9E37_79B9).wrapping_add(1));
        env2.maze.set_position(1.5, 0.5);
        let r = env2.step(&[0.0, 0.0]).unwrap();
        assert!(r.obs[4..].iter().any(|&v| v != 0.0), "noise zone is noisy");

        // Same seed and actions reproduce the same observations.
        let mut a = NoisyRoom::new(200, 2).unwrap();
        let mut b = NoisyRoom::new(200, 2).unwrap();
        let (oa, ob) = (a.reset(42), b.reset(42));
        assert_eq!(oa, ob);
        for i in 0..20 {
            let act = [((i % 3) as f64 - 1.0) * 0.5, 0.4];
            let ra = a.step(&act).unwrap();
            let rb = b.step(&act).unwrap();
            assert_eq!(ra.obs, rb.obs);
        }
    }
}
