//! Action-repeat wrapper: each decision is executed for R raw steps.

use super::{EnvSpec, Environment, StepResult};
use crate::Result;

pub struct ActionRepeat {
    inner: Box<dyn Environment>,
}

impl ActionRepeat {
    pub fn new(inner: Box<dyn Environment>) -> Self {
        ActionRepeat { inner }
    }
}

impl Environment for ActionRepeat {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let r = self.inner.spec().action_repeat;
        let mut last = self.inner.step(action)?;
        for _ in 1..r {
            if last.done {
                break;
            }
            last = self.inner.step(action)?;
        }
        Ok(last)
    }

    fn coverage_bounds(&self) -> ((f64, f64), (f64, f64)) {
        self.inner.coverage_bounds()
    }
}
