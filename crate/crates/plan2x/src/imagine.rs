//! Actor-critic trained purely on imagined latent rollouts under the
//! prior dynamics, maximizing lambda-returns by backpropagating value
//! gradients through the dynamics and the reward function.
//!
//! Two independent policy instances exist in a full run: the exploration
//! policy (disagreement reward) and the task policy (reward head). They
//! never share parameters.

use rand::Rng;

use crate::diffcore::{Adam, Mlp, StepOutcome, Tape, Tensor, Var};
use crate::ensemble::Ensemble;
use crate::worldmodel::{standard_normal_tensor, LatentState, LatentVars, WorldModel};
use crate::{Error, Result};

/// Where imagined rewards come from.
pub enum RewardSource<'a> {
    /// Ensemble disagreement at (s_t, a_t), recomputed fresh from the
    /// current ensemble every rollout.
    Disagreement(&'a Ensemble),
    /// The world model's reward head at the arrival state.
    RewardHead,
    /// A distilled intrinsic-reward head at the arrival state (the
    /// curiosity baseline's predictor).
    IntrinsicHead(&'a Mlp),
    /// Arbitrary differentiable reward of (state, action).
    Custom(&'a dyn for<'t> Fn(&'t Tape, &LatentVars<'t>, Var<'t>) -> Var<'t>),
}

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    pub feature_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Floor on the actor's pre-squash standard deviation.
    pub min_std: f64,
    /// Pre-squash Gaussian noise added when acting in the environment.
    pub explore_noise: f64,
    pub actor_lr: f64,
    pub value_lr: f64,
    pub clip_norm: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl PolicyConfig {
    pub fn new(feature_dim: usize, action_dim: usize, low: Vec<f64>, high: Vec<f64>) -> Self {
        PolicyConfig {
            feature_dim,
            action_dim,
            hidden: 64,
            action_low: low,
            action_high: high,
            min_std: 1e-3,
            explore_noise: 0.3,
            actor_lr: 8e-5,
            value_lr: 8e-5,
            clip_norm: 100.0,
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

/// One imagined trajectory batch: H+1 states, H actions, H rewards.
pub struct ImaginedRollout<'t> {
    pub states: Vec<LatentVars<'t>>,
    pub actions: Vec<Var<'t>>,
    pub rewards: Vec<Var<'t>>,
}

pub struct PolicyStepMetrics {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub mean_reward: f64,
    pub actor_step: StepOutcome,
    pub value_step: StepOutcome,
}

/// Tanh-squashed diagonal-Gaussian actor and a scalar value head over
/// latent features.
pub struct Policy {
    pub cfg: PolicyConfig,
    actor: Mlp,
    value: Mlp,
    pub actor_opt: Adam,
    pub value_opt: Adam,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, rng: &mut impl Rng) -> Self {
        let actor = Mlp::new(
            &[cfg.feature_dim, cfg.hidden, cfg.hidden, 2 * cfg.action_dim],
            rng,
        );
        let value = Mlp::new(&[cfg.feature_dim, cfg.hidden, cfg.hidden, 1], rng);
        Policy {
            actor_opt: Adam::new(cfg.actor_lr, cfg.clip_norm),
            value_opt: Adam::new(cfg.value_lr, cfg.clip_norm),
            cfg,
            actor,
            value,
        }
    }

    pub fn actor_params(&self) -> Vec<&Tensor> {
        self.actor.params()
    }

    pub fn value_params(&self) -> Vec<&Tensor> {
        self.value.params()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut v = self.actor.named_params(&format!("{prefix}.actor"));
        v.extend(self.value.named_params(&format!("{prefix}.value")));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.actor.params_mut();
        v.extend(self.value.params_mut());
        v
    }

    /// Copies actor and value parameters from another policy instance.
    pub fn copy_params_from(&mut self, other: &Policy) {
        let src: Vec<Tensor> = other
            .actor
            .params()
            .into_iter()
            .chain(other.value.params())
            .cloned()
            .collect();
        for (dst, s) in self.params_mut().into_iter().zip(&src) {
            dst.data_mut().copy_from_slice(s.data());
        }
    }

    /// Serializes actor and value parameters in checkpoint format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.named_params("policy");
        let mut buf = Vec::new();
        crate::diffcore::write_params(&mut buf, &named).expect("vec write cannot fail");
        buf
    }

    /// Rebuilds a policy from serialized parameters.
    pub fn from_bytes(cfg: PolicyConfig, bytes: &[u8]) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut policy = Policy::new(cfg, &mut rng);
        let records = crate::diffcore::read_params(&mut std::io::Cursor::new(bytes))?;
        let names: Vec<String> = policy
            .named_params("policy")
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let targets: Vec<(String, &mut Tensor)> =
            names.into_iter().zip(policy.params_mut()).collect();
        crate::diffcore::restore_into(&records, targets)?;
        Ok(policy)
    }

    /// Pre-squash action distribution. The mean is soft-bounded so the
    /// squash never saturates irrecoverably.
    pub fn actor_dist<'t>(&self, tape: &'t Tape, feats: Var<'t>) -> (Var<'t>, Var<'t>) {
        let raw = self.actor.forward(tape, feats);
        let a = self.cfg.action_dim;
        let mean = raw.slice_cols(0, a).mul_scalar(0.2).tanh().mul_scalar(5.0);
        let std = raw.slice_cols(a, a).softplus().add_scalar(self.cfg.min_std);
        (mean, std)
    }

    /// Maps pre-squash values into the action box.
    pub fn squash<'t>(&self, tape: &'t Tape, u: Var<'t>) -> Var<'t> {
        let rows = u.rows();
        let a = self.cfg.action_dim;
        let mut mid = Vec::with_capacity(rows * a);
        let mut half = Vec::with_capacity(rows * a);
        for _ in 0..rows {
            for j in 0..a {
                mid.push((self.cfg.action_high[j] + self.cfg.action_low[j]) / 2.0);
                half.push((self.cfg.action_high[j] - self.cfg.action_low[j]) / 2.0);
            }
        }
        u.tanh()
            .mul(tape.constant(rows, a, half))
            .add(tape.constant(rows, a, mid))
    }

    pub fn value_of<'t>(&self, tape: &'t Tape, feats: Var<'t>) -> Var<'t> {
        self.value.forward(tape, feats)
    }

    /// Action for environment interaction from a single state's features.
    /// `explore` adds the pre-squash acting noise; otherwise this is the
    /// distribution mode.
    pub fn act(&self, feats: &Tensor, rng: &mut impl Rng, explore: bool) -> Vec<f64> {
        let tape = Tape::new();
        let f = tape.constant_from(feats);
        let (mean, std) = self.actor_dist(&tape, f);
        let u = if explore {
            let noise = standard_normal_tensor(rng, 1, self.cfg.action_dim);
            let extra = standard_normal_tensor(rng, 1, self.cfg.action_dim);
            mean.add(std.mul(tape.constant_from(&noise)))
                .add(tape.constant_from(&extra).mul_scalar(self.cfg.explore_noise))
        } else {
            mean
        };
        self.squash(&tape, u).values()
    }

    /// Rolls the prior dynamics forward H steps under reparameterized
    /// actions, collecting rewards from `reward`.
    pub fn imagine_rollout<'t>(
        &self,
        tape: &'t Tape,
        model: &WorldModel,
        reward: &RewardSource<'_>,
        start: &LatentState,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> Result<ImaginedRollout<'t>> {
        if horizon < 1 {
            return Err(Error::invalid("imagination horizon must be at least 1"));
        }
        let rows = start.batch();
        let mut states = vec![model.lift_state(tape, start)];
        let mut actions = Vec::with_capacity(horizon);
        let mut rewards = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let s = *states.last().expect("nonempty");
            let (mean, std) = self.actor_dist(tape, s.features());
            let noise = standard_normal_tensor(rng, rows, self.cfg.action_dim);
            let u = mean.add(std.mul(tape.constant_from(&noise)));
            let action = self.squash(tape, u);
            let step_noise = standard_normal_tensor(rng, rows, model.cfg.stoch_dim);
            let next = model.prior_step(tape, &s, action, &step_noise);
            let r = match reward {
                RewardSource::Disagreement(ens) => ens.disagreement(tape, s.deter, action),
                RewardSource::RewardHead => model.reward_from_features(tape, next.features()),
                RewardSource::IntrinsicHead(head) => head.forward(tape, next.features()),
                RewardSource::Custom(f) => f(tape, &s, action),
            };
            assert_eq!(r.cols(), 1, "reward must be one column");
            states.push(next);
            actions.push(action);
            rewards.push(r);
        }
        Ok(ImaginedRollout {
            states,
            actions,
            rewards,
        })
    }

    /// One actor and one value update from imagined rollouts.
    ///
    /// The actor maximizes lambda-returns through dynamics, reward, and
    /// value; the value head regresses on detached returns over detached
    /// features, so its loss cannot reach actor or dynamics parameters.
    pub fn train_step(
        &mut self,
        model: &WorldModel,
        reward: &RewardSource<'_>,
        start: &LatentState,
        rng: &mut impl Rng,
    ) -> Result<PolicyStepMetrics> {
        let horizon = self.cfg.horizon;
        let tape = Tape::new();
        let rollout = self.imagine_rollout(&tape, model, reward, start, horizon, rng)?;
        let values: Vec<Var> = rollout
            .states
            .iter()
            .map(|s| self.value_of(&tape, s.features()))
            .collect();
        let targets = lambda_returns(&rollout.rewards, &values, self.cfg.gamma, self.cfg.lambda)?;

        let mut sum: Option<Var> = None;
        for t in &targets {
            let m = t.mean_all();
            sum = Some(match sum {
                Some(acc) => acc.add(m),
                None => m,
            });
        }
        let actor_loss = sum.expect("horizon >= 1").mul_scalar(-1.0 / horizon as f64);
        let actor_loss_val = actor_loss.scalar_value();
        let mean_reward = rollout
            .rewards
            .iter()
            .map(|r| r.mean_all().scalar_value())
            .sum::<f64>()
            / horizon as f64;

        // Detach features and targets before the tape is consumed.
        let feats_detached: Vec<Tensor> = rollout.states[..horizon]
            .iter()
            .map(|s| s.features().to_tensor())
            .collect();
        let targets_detached: Vec<Tensor> = targets.iter().map(|t| t.to_tensor()).collect();

        let actor_step = if actor_loss_val.is_finite() {
            let grads = tape.backward(actor_loss)?;
            self.actor_opt.step(&mut self.actor.params_mut(), &grads)
        } else {
            StepOutcome {
                applied: false,
                grad_norm: f64::NAN,
                params_finite: true,
            }
        };

        // Value regression on a fresh tape holding only value parameters.
        let vtape = Tape::new();
        let mut vloss_sum: Option<Var> = None;
        for (f, t) in feats_detached.iter().zip(&targets_detached) {
            let v = self.value.forward(&vtape, vtape.constant_from(f));
            let err = v.sub(vtape.constant_from(t)).square().mean_all();
            vloss_sum = Some(match vloss_sum {
                Some(acc) => acc.add(err),
                None => err,
            });
        }
        let value_loss = vloss_sum
            .expect("horizon >= 1")
            .mul_scalar(1.0 / horizon as f64);
        let value_loss_val = value_loss.scalar_value();
        let value_step = if value_loss_val.is_finite() {
            let grads = vtape.backward(value_loss)?;
            self.value_opt.step(&mut self.value.params_mut(), &grads)
        } else {
            StepOutcome {
                applied: false,
                grad_norm: f64::NAN,
                params_finite: true,
            }
        };

        Ok(PolicyStepMetrics {
            actor_loss: actor_loss_val,
            value_loss: value_loss_val,
            mean_reward,
            actor_step,
            value_step,
        })
    }
}

/// Recursive lambda-returns with terminal bootstrap v(s_H): H targets
/// for H rewards and H+1 values.
pub fn lambda_returns<'t>(
    rewards: &[Var<'t>],
    values: &[Var<'t>],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Var<'t>>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if !(gamma > 0.0 && gamma < 1.0) && gamma != 1.0 {
        return Err(Error::invalid(format!("gamma {gamma} outside (0, 1]")));
    }
    let h = rewards.len();
    assert_eq!(values.len(), h + 1, "need H+1 values for H rewards");
    let mut targets: Vec<Var> = Vec::with_capacity(h);
    let mut next: Var = values[h];
    for t in (0..h).rev() {
        let blend = values[t + 1]
            .mul_scalar(1.0 - lambda)
            .add(next.mul_scalar(lambda));
        let target = rewards[t].add(blend.mul_scalar(gamma));
        targets.push(target);
        next = target;
    }
    targets.reverse();
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmodel::WorldModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn custom<F: for<'t> Fn(&'t Tape, &LatentVars<'t>, Var<'t>) -> Var<'t>>(f: F) -> F {
        f
    }

    fn tiny_world(seed: u64) -> (WorldModel, Policy) {
        let mut cfg = WorldModelConfig::new(3, 2);
        cfg.embed_dim = 3;
        cfg.deter_dim = 4;
        cfg.stoch_dim = 2;
        cfg.hidden = 4;
        cfg.gru_input = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = WorldModel::new(cfg.clone(), &mut rng);
        let mut pcfg = PolicyConfig::new(cfg.feature_dim(), 2, vec![-1.0, -1.0], vec![1.0, 1.0]);
        pcfg.hidden = 8;
        pcfg.horizon = 3;
        let policy = Policy::new(pcfg, &mut rng);
        (model, policy)
    }

    #[test]
    fn horizon_one_takes_exactly_one_prior_step() {
        let (model, policy) = tiny_world(0);
        let start = LatentState::zeros(2, &model.cfg);
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let roll = policy
            .imagine_rollout(&tape, &model, &RewardSource::RewardHead, &start, 1, &mut rng)
            .unwrap();
        assert_eq!(roll.states.len(), 2);
        assert_eq!(roll.actions.len(), 1);
        assert_eq!(roll.rewards.len(), 1);
    }

    #[test]
    fn zero_horizon_rejected() {
        let (model, policy) = tiny_world(0);
        let start = LatentState::zeros(1, &model.cfg);
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(policy
            .imagine_rollout(&tape, &model, &RewardSource::RewardHead, &start, 0, &mut rng)
            .is_err());
    }

    #[test]
    fn zero_reward_source_gives_zero_rollout_rewards() {
        let (model, policy) = tiny_world(2);
        let start = LatentState::zeros(2, &model.cfg);
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = custom(|t, s, _a| {
            let rows = s.deter.rows();
            t.constant(rows, 1, vec![0.0; rows])
        });
        let roll = policy
            .imagine_rollout(&tape, &model, &RewardSource::Custom(&zero), &start, 4, &mut rng)
            .unwrap();
        for r in &roll.rewards {
            assert!(r.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_seeds_give_identical_rollouts() {
        let (model, policy) = tiny_world(4);
        let start = LatentState::zeros(2, &model.cfg);
        let collect = |seed: u64| {
            let tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let roll = policy
                .imagine_rollout(&tape, &model, &RewardSource::RewardHead, &start, 5, &mut rng)
                .unwrap();
            roll.states
                .iter()
                .map(|s| s.deter.values())
                .collect::<Vec<_>>()
        };
        assert_eq!(collect(7), collect(7));
    }

    #[test]
    fn lambda_zero_is_one_step_bootstrap() {
        let tape = Tape::new();
        let rewards = vec![tape.scalar(1.0), tape.scalar(2.0)];
        let values = vec![tape.scalar(10.0), tape.scalar(20.0), tape.scalar(30.0)];
        let t = lambda_returns(&rewards, &values, 0.5, 0.0).unwrap();
        assert_eq!(t[0].scalar_value(), 1.0 + 0.5 * 20.0);
        assert_eq!(t[1].scalar_value(), 2.0 + 0.5 * 30.0);
    }

    #[test]
    fn all_zero_rewards_and_terminal_value_give_zero_targets() {
        let tape = Tape::new();
        let rewards = vec![tape.scalar(0.0); 4];
        let values = vec![tape.scalar(0.0); 5];
        let t = lambda_returns(&rewards, &values, 0.99, 0.95).unwrap();
        assert!(t.iter().all(|v| v.scalar_value() == 0.0));
    }

    #[test]
    fn monte_carlo_case_matches_hand_sum() {
        // H=3, r=(1,1,1), gamma=1, lambda=1, v=0: targets (3,2,1).
        let tape = Tape::new();
        let rewards = vec![tape.scalar(1.0); 3];
        let values = vec![tape.scalar(0.0); 4];
        let t = lambda_returns(&rewards, &values, 1.0, 1.0).unwrap();
        let got: Vec<f64> = t.iter().map(|v| v.scalar_value()).collect();
        assert_eq!(got, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn sampled_actions_stay_inside_the_box() {
        let (model, policy) = tiny_world(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let start = LatentState::zeros(8, &model.cfg);
        let tape = Tape::new();
        let roll = policy
            .imagine_rollout(&tape, &model, &RewardSource::RewardHead, &start, 6, &mut rng)
            .unwrap();
        for a in &roll.actions {
            for v in a.values() {
                assert!((-1.0..=1.0).contains(&v), "action {v} escaped the box");
            }
        }
        // Acting in the environment, with and without noise.
        let feats = LatentState::zeros(1, &model.cfg).features();
        for i in 0..100 {
            let a = policy.act(&feats, &mut rng, i % 2 == 0);
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn value_loss_at_perfect_value_function_is_zero() {
        // With zero rewards and a value head that outputs exactly zero,
        // targets are zero and the squared error vanishes.
        let (model, mut policy) = tiny_world(7);
        policy.value.zero_output_layer();
        let start = LatentState::zeros(4, &model.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zero = custom(|t, s, _a| {
            let rows = s.deter.rows();
            t.constant(rows, 1, vec![0.0; rows])
        });
        let m = policy
            .train_step(&model, &RewardSource::Custom(&zero), &start, &mut rng)
            .unwrap();
        assert_eq!(m.value_loss, 0.0);
    }

    #[test]
    fn value_loss_gradient_never_reaches_actor_or_dynamics() {
        let (model, policy) = tiny_world(9);
        let start = LatentState::zeros(4, &model.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Reproduce the value-tape construction and audit its gradient keys.
        let tape = Tape::new();
        let roll = policy
            .imagine_rollout(&tape, &model, &RewardSource::RewardHead, &start, 3, &mut rng)
            .unwrap();
        let feats: Vec<Tensor> = roll.states[..3].iter().map(|s| s.features().to_tensor()).collect();
        let vtape = Tape::new();
        let mut sum: Option<Var> = None;
        for f in &feats {
            let v = policy.value.forward(&vtape, vtape.constant_from(f));
            let e = v.square().mean_all();
            sum = Some(match sum {
                Some(acc) => acc.add(e),
                None => e,
            });
        }
        let grads = vtape.backward(sum.unwrap()).unwrap();
        for p in model.params() {
            assert!(grads.get(p).is_none(), "dynamics parameter received gradient");
        }
        for p in policy.actor_params() {
            assert!(grads.get(p).is_none(), "actor parameter received gradient");
        }
        for p in policy.value_params() {
            assert!(grads.get(p).is_some(), "value parameter missing gradient");
        }
    }
}
