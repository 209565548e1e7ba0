//! Latent dynamics model: encoder, shared recurrent cell with posterior
//! and prior heads, observation decoder, and reward head, trained jointly
//! on replay sequences by maximizing the evidence lower bound.
//!
//! All distribution heads output diagonal Gaussians. The decoder and
//! reward head use fixed unit variance, so their log-likelihoods reduce
//! to scaled squared errors.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{
    gaussian_kl, gaussian_log_density_unit, Adam, GruCell, Linear, Mlp, StepOutcome, Tape, Tensor,
    Var,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Embedding dimension E.
    pub embed_dim: usize,
    /// Deterministic (recurrent) state dimension.
    pub deter_dim: usize,
    /// Stochastic state dimension.
    pub stoch_dim: usize,
    /// Hidden width of the perceptrons.
    pub hidden: usize,
    /// Width of the recurrent cell's input embedding.
    pub gru_input: usize,
    /// Elementwise floor on predicted standard deviations.
    pub min_std: f64,
    /// KL contributions below this clamp to a constant.
    pub free_nats: f64,
    /// KL weight in the loss.
    pub kl_beta: f64,
}

impl WorldModelConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        WorldModelConfig {
            obs_dim,
            action_dim,
            embed_dim: 32,
            deter_dim: 64,
            stoch_dim: 16,
            hidden: 32,
            gru_input: 32,
            min_std: 0.1,
            free_nats: 3.0,
            kl_beta: 1.0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.deter_dim + self.stoch_dim
    }
}

/// Model state for a batch of sequences: deterministic recurrent part
/// plus the stochastic sample with its distribution parameters.
#[derive(Clone)]
pub struct LatentState {
    pub deter: Tensor,
    pub stoch_mean: Tensor,
    pub stoch_std: Tensor,
    pub stoch_sample: Tensor,
}

impl LatentState {
    pub fn zeros(batch: usize, cfg: &WorldModelConfig) -> Self {
        LatentState {
            deter: Tensor::zeros(batch, cfg.deter_dim),
            stoch_mean: Tensor::zeros(batch, cfg.stoch_dim),
            stoch_std: Tensor::new(
                vec![batch, cfg.stoch_dim],
                vec![1.0; batch * cfg.stoch_dim],
            ),
            stoch_sample: Tensor::zeros(batch, cfg.stoch_dim),
        }
    }

    pub fn batch(&self) -> usize {
        self.deter.dims2().0
    }

    /// Policy/value/reward features: concat(deter, stochastic sample).
    pub fn features(&self) -> Tensor {
        let (b, dd) = self.deter.dims2();
        let ds = self.stoch_sample.dims2().1;
        let mut data = Vec::with_capacity(b * (dd + ds));
        for i in 0..b {
            data.extend_from_slice(&self.deter.data()[i * dd..(i + 1) * dd]);
            data.extend_from_slice(&self.stoch_sample.data()[i * ds..(i + 1) * ds]);
        }
        Tensor::new(vec![b, dd + ds], data)
    }

    /// Stacks selected rows of several states into one batch state.
    pub fn gather_rows(states: &[(&LatentState, usize)]) -> LatentState {
        let take = |f: fn(&LatentState) -> &Tensor| {
            let cols = f(states[0].0).dims2().1;
            let mut data = Vec::with_capacity(states.len() * cols);
            for (s, row) in states {
                data.extend_from_slice(&f(s).data()[row * cols..(row + 1) * cols]);
            }
            Tensor::new(vec![states.len(), cols], data)
        };
        LatentState {
            deter: take(|s| &s.deter),
            stoch_mean: take(|s| &s.stoch_mean),
            stoch_std: take(|s| &s.stoch_std),
            stoch_sample: take(|s| &s.stoch_sample),
        }
    }
}

/// On-tape mirror of [`LatentState`].
#[derive(Clone, Copy)]
pub struct LatentVars<'t> {
    pub deter: Var<'t>,
    pub stoch_mean: Var<'t>,
    pub stoch_std: Var<'t>,
    pub stoch_sample: Var<'t>,
}

impl<'t> LatentVars<'t> {
    pub fn features(&self) -> Var<'t> {
        self.deter.concat_cols(self.stoch_sample)
    }

    pub fn to_state(&self) -> LatentState {
        LatentState {
            deter: self.deter.to_tensor(),
            stoch_mean: self.stoch_mean.to_tensor(),
            stoch_std: self.stoch_std.to_tensor(),
            stoch_sample: self.stoch_sample.to_tensor(),
        }
    }
}

/// A batch of replay subsequences, time-major. `prev_actions[t]` is the
/// action that led into `obs[t]` (zeros at episode starts); `rewards[t]`
/// aligns with `obs[t]` and is absent for reward-free data.
pub struct SequenceBatch {
    pub obs: Vec<Tensor>,
    pub prev_actions: Vec<Tensor>,
    pub rewards: Option<Vec<Tensor>>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.obs[0].dims2().0
    }
}

/// Loss pieces from one ELBO evaluation, per batch-and-time average.
pub struct ElboMetrics {
    pub loss: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub reward_nll: f64,
    /// Per-step, per-row model loss (reconstruction + weighted KL),
    /// the curiosity baseline's intrinsic-reward target.
    pub per_step_loss: Vec<Vec<f64>>,
    /// Detached posterior features per step, aligned with per_step_loss.
    pub per_step_features: Vec<Tensor>,
}

pub struct ModelStepMetrics {
    pub elbo: ElboMetrics,
    pub step: StepOutcome,
}

#[derive(Clone)]
pub struct WorldModel {
    pub cfg: WorldModelConfig,
    encoder: Mlp,
    input_embed: Linear,
    cell: GruCell,
    post_head: Mlp,
    prior_head: Mlp,
    decoder: Mlp,
    reward_head: Mlp,
}

impl WorldModel {
    pub fn new(cfg: WorldModelConfig, rng: &mut impl Rng) -> Self {
        let enc = Mlp::new(&[cfg.obs_dim, cfg.hidden, cfg.embed_dim], rng);
        let input_embed = Linear::new(cfg.stoch_dim + cfg.action_dim, cfg.gru_input, rng);
        let cell = GruCell::new(cfg.gru_input, cfg.deter_dim, rng);
        let post_head = Mlp::new(
            &[cfg.deter_dim + cfg.embed_dim, cfg.hidden, 2 * cfg.stoch_dim],
            rng,
        );
        let prior_head = Mlp::new(&[cfg.deter_dim, cfg.hidden, 2 * cfg.stoch_dim], rng);
        let decoder = Mlp::new(&[cfg.feature_dim(), cfg.hidden, cfg.obs_dim], rng);
        let reward_head = Mlp::new(&[cfg.feature_dim(), cfg.hidden, 1], rng);
        WorldModel {
            cfg,
            encoder: enc,
            input_embed,
            cell,
            post_head,
            prior_head,
            decoder,
            reward_head,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        v.extend(self.input_embed.params_mut());
        v.extend(self.cell.params_mut());
        v.extend(self.post_head.params_mut());
        v.extend(self.prior_head.params_mut());
        v.extend(self.decoder.params_mut());
        v.extend(self.reward_head.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        v.extend(self.input_embed.params());
        v.extend(self.cell.params());
        v.extend(self.post_head.params());
        v.extend(self.prior_head.params());
        v.extend(self.decoder.params());
        v.extend(self.reward_head.params());
        v
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_params(&format!("{prefix}.encoder"));
        v.extend(self.input_embed.named_params(&format!("{prefix}.input_embed")));
        v.extend(self.cell.named_params(&format!("{prefix}.cell")));
        v.extend(self.post_head.named_params(&format!("{prefix}.post_head")));
        v.extend(self.prior_head.named_params(&format!("{prefix}.prior_head")));
        v.extend(self.decoder.named_params(&format!("{prefix}.decoder")));
        v.extend(self.reward_head.named_params(&format!("{prefix}.reward_head")));
        v
    }

    pub fn reward_head_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.reward_head.params_mut()
    }

    pub fn zero_encoder_output_layer(&mut self) {
        self.encoder.zero_output_layer();
    }

    /// h_t = e(o_t).
    pub fn encode<'t>(&self, tape: &'t Tape, obs: Var<'t>) -> Var<'t> {
        assert_eq!(
            obs.cols(),
            self.cfg.obs_dim,
            "observation dim {} does not match config {}",
            obs.cols(),
            self.cfg.obs_dim
        );
        self.encoder.forward(tape, obs)
    }

    fn step_deter<'t>(&self, tape: &'t Tape, prev: &LatentVars<'t>, action: Var<'t>) -> Var<'t> {
        let x = self
            .input_embed
            .forward(tape, prev.stoch_sample.concat_cols(action))
            .elu();
        self.cell.forward(tape, x, prev.deter)
    }

    fn split_dist<'t>(&self, raw: Var<'t>) -> (Var<'t>, Var<'t>) {
        let ds = self.cfg.stoch_dim;
        let mean = raw.slice_cols(0, ds);
        let std = raw
            .slice_cols(ds, ds)
            .softplus()
            .add_scalar(self.cfg.min_std);
        (mean, std)
    }

    /// Transition without access to the current observation.
    pub fn prior_step<'t>(
        &self,
        tape: &'t Tape,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        noise: &Tensor,
    ) -> LatentVars<'t> {
        let deter = self.step_deter(tape, prev, action);
        let (mean, std) = self.split_dist(self.prior_head.forward(tape, deter));
        let sample = mean.add(std.mul(tape.leaf(noise)));
        LatentVars {
            deter,
            stoch_mean: mean,
            stoch_std: std,
            stoch_sample: sample,
        }
    }

    /// Transition conditioned on the current observation's embedding.
    /// Shares the recurrent cell with [`Self::prior_step`].
    pub fn posterior_step<'t>(
        &self,
        tape: &'t Tape,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        embed: Var<'t>,
        noise: &Tensor,
    ) -> LatentVars<'t> {
        let deter = self.step_deter(tape, prev, action);
        let (mean, std) = self.split_dist(self.post_head.forward(tape, deter.concat_cols(embed)));
        let sample = mean.add(std.mul(tape.leaf(noise)));
        LatentVars {
            deter,
            stoch_mean: mean,
            stoch_std: std,
            stoch_sample: sample,
        }
    }

    /// Posterior and prior sharing one recurrent update, for the ELBO.
    fn step_both<'t>(
        &self,
        tape: &'t Tape,
        prev: &LatentVars<'t>,
        action: Var<'t>,
        embed: Var<'t>,
        noise: &Tensor,
    ) -> (LatentVars<'t>, Var<'t>, Var<'t>) {
        let deter = self.step_deter(tape, prev, action);
        let (pmean, pstd) = self.split_dist(self.prior_head.forward(tape, deter));
        let (qmean, qstd) = self.split_dist(self.post_head.forward(tape, deter.concat_cols(embed)));
        let sample = qmean.add(qstd.mul(tape.leaf(noise)));
        (
            LatentVars {
                deter,
                stoch_mean: qmean,
                stoch_std: qstd,
                stoch_sample: sample,
            },
            pmean,
            pstd,
        )
    }

    pub fn decode<'t>(&self, tape: &'t Tape, state: &LatentVars<'t>) -> Var<'t> {
        self.decoder.forward(tape, state.features())
    }

    /// Predicted reward mean from state features.
    pub fn reward_from_features<'t>(&self, tape: &'t Tape, feats: Var<'t>) -> Var<'t> {
        self.reward_head.forward(tape, feats)
    }

    pub fn initial_vars<'t>(&self, tape: &'t Tape, batch: usize) -> LatentVars<'t> {
        LatentVars {
            deter: tape.constant(batch, self.cfg.deter_dim, vec![0.0; batch * self.cfg.deter_dim]),
            stoch_mean: tape.constant(batch, self.cfg.stoch_dim, vec![0.0; batch * self.cfg.stoch_dim]),
            stoch_std: tape.constant(batch, self.cfg.stoch_dim, vec![1.0; batch * self.cfg.stoch_dim]),
            stoch_sample: tape.constant(batch, self.cfg.stoch_dim, vec![0.0; batch * self.cfg.stoch_dim]),
        }
    }

    /// Lifts an off-tape state as constants (gradients stop at rollout
    /// starts).
    pub fn lift_state<'t>(&self, tape: &'t Tape, state: &LatentState) -> LatentVars<'t> {
        let lift = |t: &Tensor| {
            let (r, c) = t.dims2();
            tape.constant(r, c, t.data().to_vec())
        };
        LatentVars {
            deter: lift(&state.deter),
            stoch_mean: lift(&state.stoch_mean),
            stoch_std: lift(&state.stoch_std),
            stoch_sample: lift(&state.stoch_sample),
        }
    }

    /// Negative ELBO over a sequence batch, averaged over batch and time.
    /// The reward term participates only when labels are present.
    pub fn elbo<'t>(
        &self,
        tape: &'t Tape,
        batch: &SequenceBatch,
        noises: &[Tensor],
    ) -> Result<(Var<'t>, ElboMetrics)> {
        if batch.len() < 2 {
            return Err(Error::invalid(format!(
                "sequence length {} too short: need at least one transition",
                batch.len()
            )));
        }
        assert_eq!(noises.len(), batch.len(), "one noise tensor per step");
        let steps = batch.len();
        let rows = batch.batch();

        let mut prev = self.initial_vars(tape, rows);
        let mut loss_acc: Option<Var<'t>> = None;
        let mut recon_acc = 0.0;
        let mut kl_acc = 0.0;
        let mut reward_acc = 0.0;
        let mut per_step_loss = Vec::with_capacity(steps);
        let mut per_step_features = Vec::with_capacity(steps);

        for t in 0..steps {
            let obs = tape.leaf(&batch.obs[t]);
            let action = tape.leaf(&batch.prev_actions[t]);
            let embed = self.encode(tape, obs);
            let (post, pmean, pstd) = self.step_both(tape, &prev, action, embed, &noises[t]);

            let recon = self.decode(tape, &post);
            let recon_ll = gaussian_log_density_unit(obs, recon);
            let kl = gaussian_kl(post.stoch_mean, post.stoch_std, pmean, pstd);
            let kl_clamped = kl.max_scalar(self.cfg.free_nats);

            let mut step_loss = recon_ll.neg().add(kl_clamped.mul_scalar(self.cfg.kl_beta));
            if let Some(rewards) = &batch.rewards {
                let label = tape.leaf(&rewards[t]);
                let pred = self.reward_from_features(tape, post.features());
                let reward_ll = gaussian_log_density_unit(label, pred);
                step_loss = step_loss.sub(reward_ll);
                reward_acc += -reward_ll.mean_all().scalar_value();
            }

            per_step_loss.push(step_loss.values());
            per_step_features.push(post.features().to_tensor());
            recon_acc += -recon_ll.mean_all().scalar_value();
            kl_acc += kl.mean_all().scalar_value();

            let batch_mean = step_loss.mean_all();
            loss_acc = Some(match loss_acc {
                Some(acc) => acc.add(batch_mean),
                None => batch_mean,
            });
            prev = post;
        }

        let loss = loss_acc.expect("at least one step").mul_scalar(1.0 / steps as f64);
        let metrics = ElboMetrics {
            loss: loss.scalar_value(),
            recon_nll: recon_acc / steps as f64,
            kl: kl_acc / steps as f64,
            reward_nll: reward_acc / steps as f64,
            per_step_loss,
            per_step_features,
        };
        Ok((loss, metrics))
    }

    /// One ELBO gradient step.
    pub fn train_batch(
        &mut self,
        batch: &SequenceBatch,
        noises: &[Tensor],
        opt: &mut Adam,
    ) -> Result<ModelStepMetrics> {
        let tape = Tape::new();
        let (loss, elbo) = self.elbo(&tape, batch, noises)?;
        if !elbo.loss.is_finite() {
            return Ok(ModelStepMetrics {
                elbo,
                step: StepOutcome {
                    applied: false,
                    grad_norm: f64::NAN,
                    params_finite: true,
                },
            });
        }
        let grads = tape.backward(loss)?;
        let step = opt.step(&mut self.params_mut(), &grads);
        Ok(ModelStepMetrics { elbo, step })
    }

    /// Serializes all parameters in checkpoint format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.named_params("model");
        let mut buf = Vec::new();
        crate::diffcore::write_params(&mut buf, &named).expect("vec write cannot fail");
        buf
    }

    /// Rebuilds a model with `cfg` from serialized parameters.
    pub fn from_bytes(cfg: WorldModelConfig, bytes: &[u8]) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = WorldModel::new(cfg, &mut rng);
        let records = crate::diffcore::read_params(&mut std::io::Cursor::new(bytes))?;
        let names: Vec<String> = model
            .named_params("model")
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let targets: Vec<(String, &mut Tensor)> =
            names.into_iter().zip(model.params_mut()).collect();
        crate::diffcore::restore_into(&records, targets)?;
        Ok(model)
    }

    /// Mean L2 gap between prior and posterior stochastic means along a
    /// filtered sequence, a trend metric for model quality.
    pub fn prior_posterior_gap(&self, batch: &SequenceBatch, rng: &mut impl Rng) -> f64 {
        let tape = Tape::new();
        let rows = batch.batch();
        let mut prev = self.initial_vars(&tape, rows);
        let mut total = 0.0;
        let mut count = 0usize;
        for t in 0..batch.len() {
            let obs = tape.constant_from(&batch.obs[t]);
            let action = tape.constant_from(&batch.prev_actions[t]);
            let embed = self.encode(&tape, obs);
            let noise = standard_normal_tensor(rng, rows, self.cfg.stoch_dim);
            let (post, pmean, _pstd) = self.step_both(&tape, &prev, action, embed, &noise);
            let gap = post.stoch_mean.sub(pmean).square().sum_cols().sqrt();
            total += gap.values().iter().sum::<f64>();
            count += rows;
            prev = post;
        }
        total / count as f64
    }

    /// Runs posterior filtering over a batch without building gradients,
    /// returning the state at every step plus embeddings (the ensemble's
    /// inputs and targets).
    pub fn posterior_filter(
        &self,
        batch: &SequenceBatch,
        rng: &mut impl Rng,
    ) -> (Vec<LatentState>, Vec<Tensor>) {
        let tape = Tape::new();
        let rows = batch.batch();
        let mut prev = self.initial_vars(&tape, rows);
        let mut states = Vec::with_capacity(batch.len());
        let mut embeds = Vec::with_capacity(batch.len());
        for t in 0..batch.len() {
            let obs = tape.constant_from(&batch.obs[t]);
            let action = tape.constant_from(&batch.prev_actions[t]);
            let embed = self.encode(&tape, obs);
            let noise = standard_normal_tensor(rng, rows, self.cfg.stoch_dim);
            let post = self.posterior_step(&tape, &prev, action, embed, &noise);
            states.push(post.to_state());
            embeds.push(embed.to_tensor());
            prev = post;
        }
        (states, embeds)
    }
}

/// Samples a [rows, cols] tensor of standard-normal noise.
pub fn standard_normal_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(vec![rows, cols], data)
}
