//! The exploration loop: per collected episode, C model updates, C
//! ensemble updates, and C policy updates in imagination, then one
//! environment episode under the current policy with action noise.
//! Baseline variants reuse the same wiring with the policy replaced
//! (random), the horizon shortened (retrospective), or the intrinsic
//! reward swapped for distilled model loss (curiosity). The oracle
//! trains the same stack with true task rewards.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{stream_rng, AgentConfig, Episode, ReplayDataset, Stream};
use crate::diffcore::{Adam, Mlp, Tape, Tensor};
use crate::ensemble::{Ensemble, EnsembleBatch, EnsembleConfig};
use crate::envs::{make_env, occupancy_entropy, Environment, NoisyRoom, TaskReward};
use crate::imagine::{Policy, PolicyConfig, RewardSource};
use crate::worldmodel::{
    standard_normal_tensor, LatentState, SequenceBatch, WorldModel, WorldModelConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExploreVariant {
    /// Plan toward ensemble disagreement in imagination.
    Plan2Explore,
    /// Uniform random actions; model and ensemble still train.
    Random,
    /// Horizon-1 imagination: novelty only one step from replay states.
    Retrospective,
    /// Intrinsic reward is the per-step model loss, distilled into a
    /// latent head so imagination can optimize it.
    Curiosity,
}

/// Scalar record logged once per collected episode.
#[derive(Debug, Clone, Default)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub env_steps: usize,
    pub model_loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub reward_nll: f64,
    pub model_grad_norm: f64,
    pub skipped_steps: u64,
    pub ensemble_loss: Option<f64>,
    pub probe_disagreement: Option<f64>,
    pub zone_disagreement: Option<f64>,
    pub zone_intrinsic: Option<f64>,
    pub intrinsic_head_mse: Option<f64>,
    pub actor_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub mean_imagined_reward: Option<f64>,
    pub coverage_entropy: f64,
    pub prior_posterior_gap: f64,
    pub episode_task_return: Option<f64>,
}

/// Parameter snapshot taken every `snapshot_every` episodes for the
/// zero-shot curve.
pub struct Snapshot {
    pub episode: usize,
    pub dataset_len: usize,
    pub model_bytes: Vec<u8>,
    pub ensemble_bytes: Option<Vec<u8>>,
}

pub struct ExploreOutcome {
    pub dataset: ReplayDataset,
    pub model: WorldModel,
    pub ensemble: Option<Ensemble>,
    pub policy: Policy,
    pub metrics: Vec<EpisodeMetrics>,
    pub snapshots: Vec<Snapshot>,
    pub env_steps: usize,
}

pub(crate) fn world_model_config(cfg: &AgentConfig, obs_dim: usize, action_dim: usize) -> WorldModelConfig {
    WorldModelConfig {
        obs_dim,
        action_dim,
        embed_dim: cfg.embed_dim,
        deter_dim: cfg.deter_dim,
        stoch_dim: cfg.stoch_dim,
        hidden: cfg.hidden,
        gru_input: cfg.gru_input,
        min_std: cfg.min_std,
        free_nats: cfg.free_nats,
        kl_beta: cfg.kl_beta,
    }
}

pub(crate) fn policy_config(
    cfg: &AgentConfig,
    feature_dim: usize,
    action_dim: usize,
    low: Vec<f64>,
    high: Vec<f64>,
    horizon: usize,
) -> PolicyConfig {
    PolicyConfig {
        feature_dim,
        action_dim,
        hidden: cfg.policy_hidden,
        action_low: low,
        action_high: high,
        min_std: 1e-3,
        explore_noise: cfg.explore_noise,
        actor_lr: cfg.actor_lr,
        value_lr: cfg.value_lr,
        clip_norm: cfg.clip_norm,
        horizon,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
    }
}

/// Reward-free exploration (Plan2Explore or a baseline variant).
pub fn explore(cfg: &AgentConfig, seed: u64, variant: ExploreVariant) -> Result<ExploreOutcome> {
    run_loop(cfg, seed, Mode::Explore(variant))
}

/// The supervised reference: identical stack trained with true task
/// rewards from the start, no ensemble.
pub fn train_oracle(cfg: &AgentConfig, task: &TaskReward, seed: u64) -> Result<ExploreOutcome> {
    run_loop(cfg, seed, Mode::Oracle(task))
}

enum Mode<'a> {
    Explore(ExploreVariant),
    Oracle(&'a TaskReward),
}

fn run_loop(cfg: &AgentConfig, seed: u64, mode: Mode<'_>) -> Result<ExploreOutcome> {
    if cfg.episodes == 0 {
        return Err(Error::invalid("exploration budget must be at least one episode"));
    }
    let variant = match &mode {
        Mode::Explore(v) => Some(*v),
        Mode::Oracle(_) => None,
    };
    let collection_task: Option<&TaskReward> = match &mode {
        Mode::Oracle(t) => Some(t),
        Mode::Explore(_) => None,
    };

    let mut env = make_env(&cfg.env, cfg.episode_len, cfg.action_repeat)?;
    let spec = env.spec().clone();
    let bounds = env.coverage_bounds();

    let mut init_rng = stream_rng(seed, Stream::Init);
    let wm_cfg = world_model_config(cfg, spec.obs_dim, spec.action_dim);
    let mut model = WorldModel::new(wm_cfg.clone(), &mut init_rng);
    let mut model_opt = Adam::new(cfg.model_lr, cfg.clip_norm);

    let wants_ensemble = matches!(
        variant,
        Some(ExploreVariant::Plan2Explore | ExploreVariant::Random | ExploreVariant::Retrospective)
    );
    let mut ensemble = if wants_ensemble {
        Some(Ensemble::new(
            EnsembleConfig {
                members: cfg.ensemble_members,
                hidden: cfg.ensemble_hidden,
                reward_scale: cfg.disagreement_scale,
                lr: cfg.model_lr,
                clip_norm: cfg.clip_norm,
            },
            cfg.deter_dim,
            spec.action_dim,
            cfg.embed_dim,
            seed,
        )?)
    } else {
        None
    };

    let horizon = match variant {
        Some(ExploreVariant::Retrospective) => 1,
        _ => cfg.horizon,
    };
    let pcfg = policy_config(
        cfg,
        wm_cfg.feature_dim(),
        spec.action_dim,
        spec.action_low.clone(),
        spec.action_high.clone(),
        horizon,
    );
    let mut policy = Policy::new(pcfg, &mut init_rng);

    // Curiosity distills realized model loss into a head usable in
    // imagination.
    let mut intrinsic_head = if matches!(variant, Some(ExploreVariant::Curiosity)) {
        Some((
            Mlp::new(&[wm_cfg.feature_dim(), cfg.policy_hidden, 1], &mut init_rng),
            Adam::new(cfg.model_lr, cfg.clip_norm),
        ))
    } else {
        None
    };

    let mut dataset = ReplayDataset::new(spec.obs_dim, spec.action_dim, cfg.episode_len, cfg.action_repeat);
    let mut collect_rng = stream_rng(seed, Stream::Collect);
    let mut model_batch_rng = stream_rng(seed, Stream::ModelBatch);
    let mut model_noise_rng = stream_rng(seed, Stream::ModelNoise);
    let mut policy_batch_rng = stream_rng(seed, Stream::PolicyBatch);
    let mut policy_noise_rng = stream_rng(seed, Stream::PolicyNoise);
    let mut probe_rng = stream_rng(seed, Stream::Probe);

    let mut env_steps = 0usize;
    for _ in 0..cfg.seed_episodes.max(1) {
        let (ep, steps) =
            collect_episode(env.as_mut(), &model, None, &mut collect_rng, collection_task)?;
        env_steps += steps;
        dataset.push(ep)?;
    }

    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut snapshots = Vec::new();

    for episode in 0..cfg.episodes {
        // Train M on D.
        let mut last_model = None;
        let mut skipped = 0u64;
        for _ in 0..cfg.updates_per_episode {
            let batch = dataset.sample_batch(
                &mut model_batch_rng,
                cfg.batch_size,
                cfg.seq_len,
                None,
                None,
            );
            let noises: Vec<Tensor> = (0..batch.len())
                .map(|_| standard_normal_tensor(&mut model_noise_rng, batch.batch(), cfg.stoch_dim))
                .collect();
            let m = model.train_batch(&batch, &noises, &mut model_opt)?;
            if !m.step.applied {
                skipped += 1;
            }
            if let Some((head, opt)) = &mut intrinsic_head {
                train_intrinsic_head(head, opt, &m.elbo.per_step_features, &m.elbo.per_step_loss);
            }
            last_model = Some(m);
        }

        // Train E on D.
        let mut ensemble_loss = None;
        if let Some(ens) = &mut ensemble {
            for _ in 0..cfg.updates_per_episode {
                let rows = ensemble_rows(cfg);
                let batch = dataset.sample_batch(&mut model_batch_rng, rows.0, rows.1, None, None);
                let triples = build_ensemble_batch(&model, &batch, &mut model_noise_rng);
                let em = ens.train(&triples);
                ensemble_loss = Some(em.mean_loss);
            }
        }

        // Train the policy on intrinsic (or task) reward in imagination.
        let mut actor_loss = None;
        let mut value_loss = None;
        let mut mean_imag_reward = None;
        let train_policy = !matches!(variant, Some(ExploreVariant::Random));
        if train_policy {
            for _ in 0..cfg.updates_per_episode {
                let starts = sample_starts(&model, &dataset, cfg, &mut policy_batch_rng, None)?;
                let source = match (&mode, &ensemble, &intrinsic_head) {
                    (Mode::Oracle(_), _, _) => RewardSource::RewardHead,
                    (_, Some(ens), _) => RewardSource::Disagreement(ens),
                    (_, _, Some((head, _))) => RewardSource::IntrinsicHead(head),
                    _ => unreachable!("exploration variant without a reward source"),
                };
                let pm = policy.train_step(&model, &source, &starts, &mut policy_noise_rng)?;
                actor_loss = Some(pm.actor_loss);
                value_loss = Some(pm.value_loss);
                mean_imag_reward = Some(pm.mean_reward);
            }
        }

        // Execute the policy in the environment to expand D.
        let actor = if matches!(variant, Some(ExploreVariant::Random)) {
            None
        } else {
            Some(&policy)
        };
        let (ep, steps) =
            collect_episode(env.as_mut(), &model, actor, &mut collect_rng, collection_task)?;
        env_steps += steps;
        let episode_task_return = ep.rewards.as_ref().map(|r| r.iter().sum());
        dataset.push(ep)?;

        // Probes and the per-episode record.
        let probes = probe_metrics(
            &model,
            ensemble.as_ref(),
            intrinsic_head.as_ref().map(|(h, _)| h),
            &dataset,
            cfg,
            &mut probe_rng,
        );
        let coverage = dataset_coverage(&dataset, bounds);
        let last = last_model.expect("at least one model update ran");
        metrics.push(EpisodeMetrics {
            episode,
            env_steps,
            model_loss: last.elbo.loss,
            recon_nll: last.elbo.recon_nll,
            kl: last.elbo.kl,
            reward_nll: last.elbo.reward_nll,
            model_grad_norm: last.step.grad_norm,
            skipped_steps: skipped,
            ensemble_loss,
            probe_disagreement: probes.disagreement,
            zone_disagreement: probes.zone_disagreement,
            zone_intrinsic: probes.zone_intrinsic,
            intrinsic_head_mse: probes.intrinsic_head_mse,
            actor_loss,
            value_loss,
            mean_imagined_reward: mean_imag_reward,
            coverage_entropy: coverage,
            prior_posterior_gap: probes.prior_posterior_gap,
            episode_task_return,
        });

        let collected = episode + 1;
        if collected % cfg.snapshot_every == 0 || collected == cfg.episodes {
            snapshots.push(Snapshot {
                episode: collected,
                dataset_len: dataset.len(),
                model_bytes: model.to_bytes(),
                ensemble_bytes: ensemble.as_ref().map(|e| e.to_bytes()),
            });
        }
    }

    Ok(ExploreOutcome {
        dataset,
        model,
        ensemble,
        policy,
        metrics,
        snapshots,
        env_steps,
    })
}

fn ensemble_rows(cfg: &AgentConfig) -> (usize, usize) {
    // Enough sequences that the flattened transition count reaches the
    // configured bootstrap batch.
    let per_seq = cfg.seq_len.saturating_sub(1).max(1);
    let seqs = cfg.ensemble_batch.div_ceil(per_seq).max(1);
    (seqs, cfg.seq_len)
}

/// Flattens a filtered batch into (state, action, next-embedding)
/// triples. Values are detached, so ensemble gradients cannot reach the
/// world model.
pub(crate) fn build_ensemble_batch(
    model: &WorldModel,
    batch: &SequenceBatch,
    rng: &mut ChaCha8Rng,
) -> EnsembleBatch {
    let (states, embeds) = model.posterior_filter(batch, rng);
    let rows = batch.batch();
    let steps = batch.len();
    let dd = model.cfg.deter_dim;
    let ad = batch.prev_actions[0].dims2().1;
    let ed = model.cfg.embed_dim;
    let n = rows * (steps - 1);
    let mut deter = Vec::with_capacity(n * dd);
    let mut action = Vec::with_capacity(n * ad);
    let mut target = Vec::with_capacity(n * ed);
    for t in 0..steps - 1 {
        for row in 0..rows {
            deter.extend_from_slice(&states[t].deter.data()[row * dd..(row + 1) * dd]);
            action.extend_from_slice(&batch.prev_actions[t + 1].data()[row * ad..(row + 1) * ad]);
            target.extend_from_slice(&embeds[t + 1].data()[row * ed..(row + 1) * ed]);
        }
    }
    EnsembleBatch {
        deter: Tensor::new(vec![n, dd], deter),
        action: Tensor::new(vec![n, ad], action),
        target: Tensor::new(vec![n, ed], target),
    }
}

/// Draws imagination start states from filtered replay subsequences,
/// one start per sequence so starts stay diverse across episodes.
pub(crate) fn sample_starts(
    model: &WorldModel,
    dataset: &ReplayDataset,
    cfg: &AgentConfig,
    rng: &mut ChaCha8Rng,
    prefix: Option<usize>,
) -> Result<LatentState> {
    let seqs = cfg.imag_starts.max(2);
    let batch = dataset.sample_batch(rng, seqs, cfg.seq_len, None, prefix);
    let (states, _) = model.posterior_filter(&batch, rng);
    let picked: Vec<(&LatentState, usize)> = (0..seqs)
        .map(|row| (&states[rng.gen_range(0..cfg.seq_len)], row))
        .collect();
    Ok(LatentState::gather_rows(&picked))
}

/// Runs one episode, filtering the latent state alongside to pick
/// actions. `actor: None` means uniform random actions. Rewards are
/// attached only when a task is supplied (oracle and few-shot paths).
pub(crate) fn collect_episode(
    env: &mut dyn Environment,
    model: &WorldModel,
    actor: Option<&Policy>,
    rng: &mut ChaCha8Rng,
    task: Option<&TaskReward>,
) -> Result<(Episode, usize)> {
    let spec = env.spec().clone();
    let ep_seed = rng.gen::<u64>();
    let obs0 = env.reset(ep_seed);
    let mut state = filter_step(model, None, &vec![0.0; spec.action_dim], &obs0, rng);
    let mut observations = vec![obs0];
    let mut actions: Vec<Vec<f64>> = Vec::with_capacity(spec.decisions());
    let mut steps = 0usize;
    loop {
        let action = match actor {
            Some(policy) => policy.act(&state.features(), rng, true),
            None => (0..spec.action_dim)
                .map(|j| rng.gen_range(spec.action_low[j]..spec.action_high[j]))
                .collect(),
        };
        let result = env.step(&action)?;
        steps += spec.action_repeat;
        state = filter_step(model, Some(&state), &action, &result.obs, rng);
        observations.push(result.obs);
        actions.push(action);
        if result.done {
            break;
        }
    }
    let rewards = task.map(|t| {
        let zero = vec![0.0; spec.action_dim];
        observations
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let prev = if i == 0 { &zero } else { &actions[i - 1] };
                t.eval(o, prev)
            })
            .collect()
    });
    Ok((
        Episode {
            observations,
            actions,
            rewards,
            seed: ep_seed,
        },
        steps,
    ))
}

/// One posterior step for a single observation row.
pub(crate) fn filter_step(
    model: &WorldModel,
    prev: Option<&LatentState>,
    action: &[f64],
    obs: &[f64],
    rng: &mut impl Rng,
) -> LatentState {
    let tape = Tape::new();
    let prev_vars = match prev {
        Some(s) => model.lift_state(&tape, s),
        None => model.initial_vars(&tape, 1),
    };
    let a = tape.constant(1, action.len(), action.to_vec());
    let o = tape.constant(1, obs.len(), obs.to_vec());
    let embed = model.encode(&tape, o);
    let noise = standard_normal_tensor(rng, 1, model.cfg.stoch_dim);
    model
        .posterior_step(&tape, &prev_vars, a, embed, &noise)
        .to_state()
}

fn train_intrinsic_head(
    head: &mut Mlp,
    opt: &mut Adam,
    features: &[Tensor],
    losses: &[Vec<f64>],
) -> f64 {
    let tape = Tape::new();
    let mut total: Option<crate::diffcore::Var> = None;
    for (f, l) in features.iter().zip(losses) {
        let pred = head.forward(&tape, tape.constant_from(f));
        let target = tape.constant(l.len(), 1, l.clone());
        let err = pred.sub(target).square().mean_all();
        total = Some(match total {
            Some(acc) => acc.add(err),
            None => err,
        });
    }
    let loss = total.expect("nonempty batch").mul_scalar(1.0 / features.len() as f64);
    let value = loss.scalar_value();
    if value.is_finite() {
        if let Ok(grads) = tape.backward(loss) {
            opt.step(&mut head.params_mut(), &grads);
        }
    }
    value
}

struct ProbeMetrics {
    disagreement: Option<f64>,
    zone_disagreement: Option<f64>,
    zone_intrinsic: Option<f64>,
    intrinsic_head_mse: Option<f64>,
    prior_posterior_gap: f64,
}

/// Evaluates diagnostic quantities on a fixed-stream probe batch:
/// mean disagreement over replay transitions, the same restricted to
/// noise-zone arrivals, the realized model loss in the zone, and the
/// prior/posterior gap.
fn probe_metrics(
    model: &WorldModel,
    ensemble: Option<&Ensemble>,
    intrinsic_head: Option<&Mlp>,
    dataset: &ReplayDataset,
    cfg: &AgentConfig,
    rng: &mut ChaCha8Rng,
) -> ProbeMetrics {
    let rows = 16usize.min(cfg.batch_size.max(1));
    let batch = dataset.sample_batch(rng, rows, cfg.seq_len, None, None);
    let steps = batch.len();
    let gap = model.prior_posterior_gap(&batch, rng);
    let (states, _embeds) = model.posterior_filter(&batch, rng);

    let in_zone = |t: usize, row: usize| -> bool {
        cfg.env == "noisyroom" && {
            let d = batch.obs[t].dims2().1;
            NoisyRoom::in_noise_zone(&batch.obs[t].data()[row * d..row * d + 2])
        }
    };

    let mut disagreement = None;
    let mut zone_disagreement = None;
    if let Some(ens) = ensemble {
        let dd = model.cfg.deter_dim;
        let ad = batch.prev_actions[0].dims2().1;
        let mut deter = Vec::new();
        let mut action = Vec::new();
        let mut zone_flags = Vec::new();
        for t in 0..steps - 1 {
            for row in 0..rows {
                deter.extend_from_slice(&states[t].deter.data()[row * dd..(row + 1) * dd]);
                action.extend_from_slice(&batch.prev_actions[t + 1].data()[row * ad..(row + 1) * ad]);
                zone_flags.push(in_zone(t + 1, row));
            }
        }
        let n = zone_flags.len();
        let d = ens.disagreement_values(
            &Tensor::new(vec![n, dd], deter),
            &Tensor::new(vec![n, ad], action),
        );
        disagreement = Some(d.iter().sum::<f64>() / n as f64);
        let zone: Vec<f64> = d
            .iter()
            .zip(&zone_flags)
            .filter(|(_, &z)| z)
            .map(|(&v, _)| v)
            .collect();
        if !zone.is_empty() {
            zone_disagreement = Some(zone.iter().sum::<f64>() / zone.len() as f64);
        }
    }

    let mut zone_intrinsic = None;
    let mut intrinsic_head_mse = None;
    if cfg.env == "noisyroom" || intrinsic_head.is_some() {
        let noises: Vec<Tensor> = (0..steps)
            .map(|_| standard_normal_tensor(rng, rows, cfg.stoch_dim))
            .collect();
        let tape = Tape::new();
        if let Ok((_, elbo)) = model.elbo(&tape, &batch, &noises) {
            let mut zone_vals = Vec::new();
            let mut mse_acc = 0.0;
            let mut mse_n = 0usize;
            for t in 0..steps {
                for row in 0..rows {
                    if in_zone(t, row) {
                        zone_vals.push(elbo.per_step_loss[t][row]);
                    }
                }
                if let Some(head) = intrinsic_head {
                    let htape = Tape::new();
                    let pred = head
                        .forward(&htape, htape.constant_from(&elbo.per_step_features[t]))
                        .values();
                    for row in 0..rows {
                        mse_acc += (pred[row] - elbo.per_step_loss[t][row]).powi(2);
                        mse_n += 1;
                    }
                }
            }
            if !zone_vals.is_empty() {
                zone_intrinsic = Some(zone_vals.iter().sum::<f64>() / zone_vals.len() as f64);
            }
            if mse_n > 0 {
                intrinsic_head_mse = Some(mse_acc / mse_n as f64);
            }
        }
    }

    ProbeMetrics {
        disagreement,
        zone_disagreement,
        zone_intrinsic,
        intrinsic_head_mse,
        prior_posterior_gap: gap,
    }
}

/// Occupancy entropy over every stored observation's first two dims.
pub fn dataset_coverage(dataset: &ReplayDataset, bounds: ((f64, f64), (f64, f64))) -> f64 {
    let ((xlo, xhi), (ylo, yhi)) = bounds;
    let xbins = 20usize;
    let span_ratio = ((yhi - ylo) / (xhi - xlo)).max(1e-9);
    let ybins = ((xbins as f64 * span_ratio).round() as usize).clamp(4, 40);
    let points = dataset
        .episodes
        .iter()
        .flat_map(|ep| ep.observations.iter().map(|o| (o[0], o[1])));
    occupancy_entropy(points, (xlo, xhi), (ylo, yhi), xbins, ybins)
}
