//! Zero- and few-shot adaptation: distill a task reward into the latent
//! reward head from relabeled replay data, train a task policy purely in
//! imagination, then optionally grow the dataset with task episodes.

use rand::Rng;

use super::explore::{collect_episode, filter_step, policy_config, sample_starts};
use super::{relabel, stream_rng, AgentConfig, ReplayDataset, Stream};
use crate::diffcore::{Adam, Tape, Tensor};
use crate::envs::{make_env, TaskReward};
use crate::imagine::{Policy, RewardSource};
use crate::worldmodel::{standard_normal_tensor, WorldModel};
use crate::{Error, Result};

pub struct AdaptOutcome {
    pub policy: Policy,
    /// Mean true-task return over the evaluation episodes.
    pub mean_return: f64,
    pub distill_loss: f64,
    /// Environment steps taken before evaluation; zero-shot asserts 0.
    pub env_steps_before_eval: usize,
}

pub struct FewShotOutcome {
    /// Mean return after 0..=k added task episodes.
    pub returns: Vec<f64>,
    pub policy: Policy,
    pub dataset: ReplayDataset,
    pub env_steps: usize,
}

/// Reward-head-only distillation steps on relabeled subsequences.
/// Filtered states are detached, so only the head's parameters move.
pub fn distill_reward(
    model: &mut WorldModel,
    dataset: &ReplayDataset,
    task: &TaskReward,
    cfg: &AgentConfig,
    steps: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
    prefix: Option<usize>,
) -> Result<f64> {
    let view = relabel(dataset, task)?;
    let mut opt = Adam::new(cfg.model_lr, cfg.clip_norm);
    let mut last = 0.0;
    for _ in 0..steps {
        let batch = view.sample_batch(rng, cfg.batch_size, cfg.seq_len, prefix);
        let labels = batch.rewards.as_ref().expect("relabeled batch has rewards");
        let (states, _) = model.posterior_filter(&batch, rng);
        let rows = batch.batch();
        let fdim = model.cfg.feature_dim();
        let mut feats = Vec::with_capacity(rows * batch.len() * fdim);
        let mut targets = Vec::with_capacity(rows * batch.len());
        for (t, state) in states.iter().enumerate() {
            feats.extend_from_slice(state.features().data());
            targets.extend_from_slice(labels[t].data());
        }
        let n = rows * batch.len();
        let tape = Tape::new();
        let pred = model.reward_from_features(&tape, tape.constant(n, fdim, feats));
        let loss = pred
            .sub(tape.constant(n, 1, targets))
            .square()
            .mean_all();
        last = loss.scalar_value();
        if last.is_finite() {
            let grads = tape.backward(loss)?;
            opt.step(&mut model.reward_head_params_mut(), &grads);
        }
    }
    Ok(last)
}

/// Trains a task policy against the distilled reward head, with no new
/// environment interaction before evaluation (Algorithm 2 without the
/// data-collection step).
pub fn adapt_zero_shot(
    model: &WorldModel,
    dataset: &ReplayDataset,
    task: &TaskReward,
    cfg: &AgentConfig,
    seed: u64,
    source_policy: Option<&Policy>,
) -> Result<AdaptOutcome> {
    adapt_zero_shot_at(model, dataset, task, cfg, seed, source_policy, None)
}

/// Zero-shot adaptation restricted to the first `prefix` episodes, which
/// is how snapshots are evaluated along the exploration curve.
pub fn adapt_zero_shot_at(
    model: &WorldModel,
    dataset: &ReplayDataset,
    task: &TaskReward,
    cfg: &AgentConfig,
    seed: u64,
    source_policy: Option<&Policy>,
    prefix: Option<usize>,
) -> Result<AdaptOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot adapt from an empty dataset"));
    }
    let mut rng = stream_rng(seed, Stream::Adapt);
    let mut local = model.clone();
    let distill_loss = distill_reward(&mut local, dataset, task, cfg, cfg.distill_steps, &mut rng, prefix)?;

    let env = make_env(&cfg.env, cfg.episode_len, cfg.action_repeat)?;
    let spec = env.spec().clone();
    drop(env);
    let pcfg = policy_config(
        cfg,
        local.cfg.feature_dim(),
        spec.action_dim,
        spec.action_low,
        spec.action_high,
        cfg.horizon,
    );
    let mut policy = Policy::new(pcfg, &mut rng);
    if let Some(src) = source_policy {
        policy.copy_params_from(src);
    }
    for _ in 0..cfg.adapt_policy_updates {
        let starts = sample_starts(&local, dataset, cfg, &mut rng, prefix)?;
        policy.train_step(&local, &RewardSource::RewardHead, &starts, &mut rng)?;
    }

    let env_steps_before_eval = 0;
    let mean_return = evaluate_policy(&local, &policy, task, cfg, seed)?;
    Ok(AdaptOutcome {
        policy,
        mean_return,
        distill_loss,
        env_steps_before_eval,
    })
}

/// Zero-shot adaptation followed by k rounds of: collect one task
/// episode with the task policy, append it with true rewards, continue
/// training model and policy (the reward head keeps distilling through
/// the labeled ELBO term).
pub fn adapt_few_shot(
    model: &WorldModel,
    dataset: &ReplayDataset,
    task: &TaskReward,
    cfg: &AgentConfig,
    seed: u64,
    k_episodes: usize,
) -> Result<FewShotOutcome> {
    let zero = adapt_zero_shot(model, dataset, task, cfg, seed, None)?;
    let mut local = model.clone();
    // Re-apply the distilled head from the zero-shot phase by
    // re-distilling deterministically on the same stream.
    let mut rng = stream_rng(seed, Stream::Adapt);
    distill_reward(&mut local, dataset, task, cfg, cfg.distill_steps, &mut rng, None)?;

    let mut data = dataset.clone();
    let mut policy = zero.policy;
    let mut returns = vec![zero.mean_return];
    let mut model_opt = Adam::new(cfg.model_lr, cfg.clip_norm);
    let mut env = make_env(&cfg.env, cfg.episode_len, cfg.action_repeat)?;
    let mut env_steps = 0usize;
    let before = data.len();

    for round in 0..k_episodes {
        let (ep, steps) =
            collect_episode(env.as_mut(), &local, Some(&policy), &mut rng, Some(task))?;
        env_steps += steps;
        data.push(ep)?;

        let view = relabel(&data, task)?;
        for _ in 0..cfg.few_shot_updates {
            let batch = view.sample_batch(&mut rng, cfg.batch_size, cfg.seq_len, None);
            let noises: Vec<Tensor> = (0..batch.len())
                .map(|_| standard_normal_tensor(&mut rng, batch.batch(), cfg.stoch_dim))
                .collect();
            local.train_batch(&batch, &noises, &mut model_opt)?;
            let starts = sample_starts(&local, &data, cfg, &mut rng, None)?;
            policy.train_step(&local, &RewardSource::RewardHead, &starts, &mut rng)?;
        }
        let eval_seed = seed.wrapping_add(1000 + round as u64);
        returns.push(evaluate_policy(&local, &policy, task, cfg, eval_seed)?);
    }
    debug_assert_eq!(data.len(), before + k_episodes);

    Ok(FewShotOutcome {
        returns,
        policy,
        dataset: data,
        env_steps,
    })
}

/// Mean true-task return over `eval_episodes` episodes, acting with the
/// distribution mode (no action noise).
pub fn evaluate_policy(
    model: &WorldModel,
    policy: &Policy,
    task: &TaskReward,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<f64> {
    let mut env = make_env(&cfg.env, cfg.episode_len, cfg.action_repeat)?;
    let spec = env.spec().clone();
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut total = 0.0;
    for _ in 0..cfg.eval_episodes.max(1) {
        let ep_seed = rng.gen::<u64>();
        let obs0 = env.reset(ep_seed);
        let mut state = filter_step(model, None, &vec![0.0; spec.action_dim], &obs0, &mut rng);
        let mut ep_return = 0.0;
        loop {
            let action = policy.act(&state.features(), &mut rng, false);
            let result = env.step(&action)?;
            ep_return += task.eval(&result.obs, &action);
            state = filter_step(model, Some(&state), &action, &result.obs, &mut rng);
            if result.done {
                break;
            }
        }
        total += ep_return;
    }
    Ok(total / cfg.eval_episodes.max(1) as f64)
}
