//! Bootstrap ensemble of one-step predictors of the next embedding, and
//! the variance-of-means disagreement signal used as intrinsic reward.
//!
//! Members share architecture but differ in initialization and in the
//! order they see data: each training step resamples the batch with
//! replacement per head. Targets are embeddings from posterior filtering,
//! passed in as detached values so no gradient reaches the world model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Adam, Mlp, StepOutcome, Tape, Tensor, Var};
use crate::parallel::par_for_each_mut;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// Number of members K.
    pub members: usize,
    /// Hidden width of each member's two hidden layers.
    pub hidden: usize,
    /// Multiplier applied to the raw variance to form the reward.
    pub reward_scale: f64,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 5,
            hidden: 64,
            reward_scale: 1.0,
            lr: 3e-4,
            clip_norm: 100.0,
        }
    }
}

struct Head {
    net: Mlp,
    opt: Adam,
    rng: ChaCha8Rng,
    last_loss: f64,
    last_step: StepOutcome,
}

/// Inputs for one ensemble training step: aligned (state, action, next
/// embedding) triples with the batch dimension first.
pub struct EnsembleBatch {
    pub deter: Tensor,
    pub action: Tensor,
    pub target: Tensor,
}

pub struct EnsembleMetrics {
    pub mean_loss: f64,
    pub any_skipped: bool,
}

pub struct Ensemble {
    pub cfg: EnsembleConfig,
    heads: Vec<Head>,
}

impl Ensemble {
    pub fn new(
        cfg: EnsembleConfig,
        deter_dim: usize,
        action_dim: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if cfg.members < 2 {
            return Err(Error::invalid(format!(
                "ensemble needs at least 2 members, got {}",
                cfg.members
            )));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = (0..cfg.members)
            .map(|k| {
                let net = Mlp::new(
                    &[deter_dim + action_dim, cfg.hidden, cfg.hidden, embed_dim],
                    &mut init_rng,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1000 + k as u64);
                Head {
                    net,
                    opt: Adam::new(cfg.lr, cfg.clip_norm),
                    rng,
                    last_loss: 0.0,
                    last_step: StepOutcome {
                        applied: true,
                        grad_norm: 0.0,
                        params_finite: true,
                    },
                }
            })
            .collect();
        Ok(Ensemble { cfg, heads })
    }

    pub fn members(&self) -> usize {
        self.heads.len()
    }

    /// Mean prediction of member k for a (state, action) batch.
    pub fn predict_member<'t>(
        &self,
        tape: &'t Tape,
        k: usize,
        deter: Var<'t>,
        action: Var<'t>,
    ) -> Var<'t> {
        self.heads[k].net.forward(tape, deter.concat_cols(action))
    }

    /// Disagreement reward on-tape: per row, the mean over embedding dims
    /// of the sample variance (1/(K-1)) across member means, scaled.
    pub fn disagreement<'t>(&self, tape: &'t Tape, deter: Var<'t>, action: Var<'t>) -> Var<'t> {
        let k = self.heads.len();
        let means: Vec<Var> = (0..k)
            .map(|i| self.predict_member(tape, i, deter, action))
            .collect();
        let mut sum = means[0];
        for m in &means[1..] {
            sum = sum.add(*m);
        }
        let centroid = sum.mul_scalar(1.0 / k as f64);
        let mut sq_sum: Option<Var> = None;
        for m in &means {
            let d = m.sub(centroid).square();
            sq_sum = Some(match sq_sum {
                Some(acc) => acc.add(d),
                None => d,
            });
        }
        let var = sq_sum.expect("k >= 2").mul_scalar(1.0 / (k as f64 - 1.0));
        var.mean_cols().mul_scalar(self.cfg.reward_scale)
    }

    /// Disagreement for stored states, without building gradients.
    pub fn disagreement_values(&self, deter: &Tensor, action: &Tensor) -> Vec<f64> {
        let tape = Tape::new();
        let d = tape.constant_from(deter);
        let a = tape.constant_from(action);
        self.disagreement(&tape, d, a).values()
    }

    /// One bootstrap training step: each head resamples the batch with
    /// replacement and takes a squared-error step toward the targets.
    /// Heads are independent, so they train in parallel.
    pub fn train(&mut self, batch: &EnsembleBatch) -> EnsembleMetrics {
        let n = batch.deter.dims2().0;
        assert!(n > 0, "empty ensemble batch");
        par_for_each_mut(&mut self.heads, |head| {
            let idx: Vec<usize> = (0..n).map(|_| head.rng.gen_range(0..n)).collect();
            let deter = gather_rows(&batch.deter, &idx);
            let action = gather_rows(&batch.action, &idx);
            let target = gather_rows(&batch.target, &idx);
            let tape = Tape::new();
            let pred = head
                .net
                .forward(&tape, tape.constant_from(&deter).concat_cols(tape.constant_from(&action)));
            let loss = pred.sub(tape.constant_from(&target)).square().mean_all();
            head.last_loss = loss.scalar_value();
            if !head.last_loss.is_finite() {
                head.last_step = StepOutcome {
                    applied: false,
                    grad_norm: f64::NAN,
                    params_finite: true,
                };
                return;
            }
            let grads = tape.backward(loss).expect("scalar loss");
            head.last_step = head.opt.step(&mut head.net.params_mut(), &grads);
        });
        EnsembleMetrics {
            mean_loss: self.heads.iter().map(|h| h.last_loss).sum::<f64>() / self.heads.len() as f64,
            any_skipped: self.heads.iter().any(|h| !h.last_step.applied),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.heads.iter().flat_map(|h| h.net.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.heads.iter_mut().flat_map(|h| h.net.params_mut()).collect()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.heads
            .iter()
            .enumerate()
            .flat_map(|(k, h)| h.net.named_params(&format!("{prefix}.head{k}")))
            .collect()
    }

    /// Serializes all member parameters in checkpoint format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.named_params("ensemble");
        let mut buf = Vec::new();
        crate::diffcore::write_params(&mut buf, &named).expect("vec write cannot fail");
        buf
    }

    /// Rebuilds an ensemble from serialized parameters.
    pub fn from_bytes(
        cfg: EnsembleConfig,
        deter_dim: usize,
        action_dim: usize,
        embed_dim: usize,
        seed: u64,
        bytes: &[u8],
    ) -> Result<Self> {
        let mut ens = Ensemble::new(cfg, deter_dim, action_dim, embed_dim, seed)?;
        let records = crate::diffcore::read_params(&mut std::io::Cursor::new(bytes))?;
        let names: Vec<String> = ens
            .named_params("ensemble")
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let targets: Vec<(String, &mut Tensor)> = names.into_iter().zip(ens.params_mut()).collect();
        crate::diffcore::restore_into(&records, targets)?;
        Ok(ens)
    }

    /// Test hook: copies head 0's parameters into every other head.
    pub fn make_members_identical(&mut self) {
        let reference: Vec<Tensor> = self.heads[0].net.params().into_iter().cloned().collect();
        for head in self.heads.iter_mut().skip(1) {
            for (dst, src) in head.net.params_mut().into_iter().zip(&reference) {
                dst.data_mut().copy_from_slice(src.data());
            }
        }
    }

    /// Test hook: zeroes the output layer of every member.
    pub fn zero_output_layers(&mut self) {
        for head in &mut self.heads {
            head.net.zero_output_layer();
        }
    }
}

/// Sample variance of member means (1/(K-1) normalizer) per dimension,
/// averaged over dimensions. The same reduction the tape path computes;
/// also the quantity the information-gain study correlates against.
pub fn variance_of_means(member_means: &[Vec<f64>]) -> f64 {
    let k = member_means.len();
    assert!(k >= 2, "variance needs at least two members");
    let dims = member_means[0].len();
    let mut total = 0.0;
    for d in 0..dims {
        let mean = member_means.iter().map(|m| m[d]).sum::<f64>() / k as f64;
        let ss = member_means
            .iter()
            .map(|m| (m[d] - mean).powi(2))
            .sum::<f64>();
        total += ss / (k as f64 - 1.0);
    }
    total / dims as f64
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let (_, cols) = t.dims2();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
    }
    Tensor::new(vec![idx.len(), cols], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_ensemble(k: usize, seed: u64) -> Ensemble {
        let cfg = EnsembleConfig {
            members: k,
            hidden: 8,
            ..EnsembleConfig::default()
        };
        Ensemble::new(cfg, 4, 2, 3, seed).unwrap()
    }

    #[test]
    fn fewer_than_two_members_rejected() {
        let cfg = EnsembleConfig {
            members: 1,
            ..EnsembleConfig::default()
        };
        assert!(Ensemble::new(cfg, 4, 2, 3, 0).is_err());
    }

    #[test]
    fn zeroed_output_layers_predict_bias() {
        let mut ens = small_ensemble(3, 1);
        ens.zero_output_layers();
        let tape = Tape::new();
        let d = tape.constant(2, 4, vec![0.5; 8]);
        let a = tape.constant(2, 2, vec![-0.3; 4]);
        let mu = ens.predict_member(&tape, 0, d, a);
        assert!(mu.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_members_predict_identically_and_disagree_zero() {
        let mut ens = small_ensemble(4, 2);
        ens.make_members_identical();
        let tape = Tape::new();
        let d = tape.constant(3, 4, vec![0.25; 12]);
        let a = tape.constant(3, 2, vec![0.7; 6]);
        let m0 = ens.predict_member(&tape, 0, d, a).values();
        let m3 = ens.predict_member(&tape, 3, d, a).values();
        assert_eq!(m0, m3);
        let dis = ens.disagreement(&tape, d, a).values();
        assert!(dis.iter().all(|&v| v.abs() < 1e-24));
    }

    #[test]
    fn variance_formula_matches_hand_arithmetic() {
        // K=2, scalar means {1, 3}: variance 2.
        assert_eq!(variance_of_means(&[vec![1.0], vec![3.0]]), 2.0);
        // K=5, scalar means {0,0,0,0,5}: variance 5.
        assert_eq!(
            variance_of_means(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0], vec![5.0]]),
            5.0
        );
        // K=2, E=2, means (0,0) and (2,0): per-dim variances (2,0), D = 1.
        assert_eq!(variance_of_means(&[vec![0.0, 0.0], vec![2.0, 0.0]]), 1.0);
    }

    #[test]
    fn tape_disagreement_matches_reference_reduction() {
        let ens = small_ensemble(5, 3);
        let tape = Tape::new();
        let deter = Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.1 - 0.4).collect());
        let action = Tensor::new(vec![2, 2], vec![0.2, -0.6, 0.9, 0.0]);
        let d = tape.constant_from(&deter);
        let a = tape.constant_from(&action);
        let got = ens.disagreement(&tape, d, a).values();

        for row in 0..2 {
            let means: Vec<Vec<f64>> = (0..5)
                .map(|k| {
                    let m = ens.predict_member(&tape, k, d, a).values();
                    m[row * 3..(row + 1) * 3].to_vec()
                })
                .collect();
            let want = variance_of_means(&means);
            assert!((got[row] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn disagreement_is_nonnegative_on_random_inputs() {
        let ens = small_ensemble(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let deter = crate::worldmodel::standard_normal_tensor(&mut rng, 4, 4);
            let action = crate::worldmodel::standard_normal_tensor(&mut rng, 4, 2);
            let d = ens.disagreement_values(&deter, &action);
            assert!(d.iter().all(|&v| v >= 0.0));
            // Freshly initialized distinct members disagree somewhere.
            assert!(d.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn bootstrap_leaves_an_e_inverse_fraction_absent() {
        // Expected absent fraction per resample is (1 - 1/n)^n.
        let n = 256;
        let expected = (1.0 - 1.0 / n as f64).powi(n as i32);
        assert!((expected - 0.368).abs() < 5e-3);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 200;
        let mut absent_total = 0.0;
        for _ in 0..trials {
            let mut seen = vec![false; n];
            for _ in 0..n {
                seen[rng.gen_range(0..n)] = true;
            }
            absent_total += seen.iter().filter(|&&s| !s).count() as f64 / n as f64;
        }
        let absent = absent_total / trials as f64;
        assert!(
            (absent - expected).abs() < 0.01,
            "absent fraction {absent:.4} vs binomial oracle {expected:.4}"
        );
    }

    #[test]
    fn reward_scale_multiplies_disagreement() {
        let mut a = small_ensemble(3, 7);
        a.cfg.reward_scale = 1.0;
        let deter = Tensor::new(vec![1, 4], vec![0.3; 4]);
        let action = Tensor::new(vec![1, 2], vec![0.1; 2]);
        let base = a.disagreement_values(&deter, &action)[0];
        a.cfg.reward_scale = 10.0;
        let scaled = a.disagreement_values(&deter, &action)[0];
        assert!((scaled - 10.0 * base).abs() < 1e-12);
    }
}
