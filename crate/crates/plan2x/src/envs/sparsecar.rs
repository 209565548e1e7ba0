//! One-dimensional underpowered car. Thrust fights linear drag, so top
//! speed (|v| -> 10) takes tens of steps to build. Observations are
//! normalized to [-1, 1]: [position / 20, velocity / 10].

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, StepResult};
use crate::{Error, Result};

const DT: f64 = 0.1;
const POWER: f64 = 5.0;
const DRAG: f64 = 0.5;
const POS_SCALE: f64 = 20.0;
const VEL_SCALE: f64 = 10.0;

pub struct SparseCar {
    spec: EnvSpec,
    pos: f64,
    vel: f64,
    steps: usize,
    done: bool,
    warned: bool,
}

impl SparseCar {
    pub fn new(episode_len: usize, action_repeat: usize) -> Result<Self> {
        let spec = EnvSpec {
            name: "sparsecar".into(),
            obs_dim: 2,
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            episode_len,
            action_repeat,
        };
        spec.validate()?;
        Ok(SparseCar {
            spec,
            pos: 0.0,
            vel: 0.0,
            steps: 0,
            done: false,
            warned: false,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.pos / POS_SCALE, self.vel / VEL_SCALE]
    }

    /// Raw velocity from a stored observation.
    pub fn velocity_of(obs: &[f64]) -> f64 {
        obs[1] * VEL_SCALE
    }
}

impl Environment for SparseCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = rng.gen_range(-0.2..0.2);
        self.vel = 0.0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let a = clip_action(action, &self.spec.action_low, &self.spec.action_high, &mut self.warned);
        self.vel += (POWER * a[0] - DRAG * self.vel) * DT;
        self.pos = (self.pos + self.vel * DT).clamp(-POS_SCALE, POS_SCALE);
        self.steps += 1;
        self.done = self.steps >= self.spec.episode_len;
        Ok(StepResult {
            obs: self.observation(),
            done: self.done,
        })
    }

    fn coverage_bounds(&self) -> ((f64, f64), (f64, f64)) {
        ((-1.0, 1.0), (-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_speed_approaches_ten() {
        let mut env = SparseCar::new(400, 2).unwrap();
        env.reset(0);
        let mut v = 0.0;
        for _ in 0..400 {
            let r = env.step(&[1.0]).unwrap();
            v = SparseCar::velocity_of(&r.obs);
        }
        assert!(v > 9.5 && v <= 10.0, "terminal velocity {v}");
    }

    #[test]
    fn velocity_builds_slowly() {
        let mut env = SparseCar::new(200, 2).unwrap();
        env.reset(0);
        let r = env.step(&[1.0]).unwrap();
        let v = SparseCar::velocity_of(&r.obs);
        assert!((v - 0.5).abs() < 1e-12, "one step of full thrust gives 0.5, got {v}");
    }
}
