use std::collections::HashMap;

use crate::diffcore::tape::Gradients;
use crate::diffcore::tensor::Tensor;

/// Adaptive-moment optimizer with global-norm gradient clipping.
///
/// Moments are keyed by parameter id, so the same optimizer instance must
/// keep seeing the same tensors across steps (they are mutated in place).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    step: u64,
    moments: HashMap<u64, (Vec<f64>, Vec<f64>)>,
    skipped: u64,
}

/// What happened during one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// False when a non-finite gradient made the step a no-op.
    pub applied: bool,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// False when a parameter came out non-finite, which callers flag.
    pub params_finite: bool,
}

impl Adam {
    pub fn new(lr: f64, clip_norm: f64) -> Self {
        assert!(clip_norm > 0.0, "clip norm must be positive");
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            moments: HashMap::new(),
            skipped: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn steps_skipped(&self) -> u64 {
        self.skipped
    }

    /// Applies one update to `params` from `grads`. Parameters without a
    /// recorded gradient are treated as zero-gradient (moment decay only).
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &Gradients) -> StepOutcome {
        let mut sq_norm = 0.0;
        let mut finite = true;
        for p in params.iter() {
            if let Some(g) = grads.by_id(p.id()) {
                for &v in g.data() {
                    if !v.is_finite() {
                        finite = false;
                    }
                    sq_norm += v * v;
                }
            }
        }
        let grad_norm = sq_norm.sqrt();
        if !finite || !grad_norm.is_finite() {
            self.skipped += 1;
            return StepOutcome {
                applied: false,
                grad_norm: f64::NAN,
                params_finite: true,
            };
        }

        let scale = if grad_norm > self.clip_norm {
            self.clip_norm / grad_norm
        } else {
            1.0
        };

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);

        let mut params_finite = true;
        for p in params.iter_mut() {
            let n = p.numel();
            let (m, v) = self
                .moments
                .entry(p.id())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            debug_assert_eq!(m.len(), n, "moment shape must match parameter shape");
            let zero;
            let g: &[f64] = match grads.by_id(p.id()) {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0; n];
                    &zero
                }
            };
            let data = p.data_mut();
            for i in 0..n {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                if !data[i].is_finite() {
                    params_finite = false;
                }
            }
        }

        StepOutcome {
            applied: true,
            grad_norm,
            params_finite,
        }
    }
}
