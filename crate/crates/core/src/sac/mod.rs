//! Soft actor-critic with twin entropy-regularized critics, frozen targets,
//! and a squashed-Gaussian actor.

mod buffer;

pub use buffer::{ReplayBuffer, Transition};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{standard_normal, Adam, DenseNet, NeuralError, PolicyNet};

/// Entropy-regularized Bellman backup for one sample. Terminal transitions
/// (either done reason) truncate: y = r.
pub fn soft_bellman_target(
    reward: f64,
    terminal: bool,
    gamma: f64,
    min_q_next: f64,
    alpha: f64,
    logp_next: f64,
) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * (min_q_next - alpha * logp_next)
    }
}

/// How the frozen critics follow the online ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetSync {
    /// Target-retaining Polyak average after every gradient cycle with
    /// tau = 1 - eta (the default).
    PolyakPerStep,
    /// The literal once-per-episode schedule phi_hat <- eta phi + (1-eta)
    /// phi_hat, which with eta = 0.995 is nearly a hard copy.
    LiteralPerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub gamma: f64,
    /// Target retain factor; the per-step Polyak rate is 1 - eta.
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync: TargetSync,
}

impl SacConfig {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        SacConfig {
            obs_dim,
            act_dim,
            hidden: vec![256, 256],
            alpha: 0.07,
            gamma: 0.99,
            eta: 0.995,
            learning_rate: 1e-3,
            batch_size: 256,
            buffer_capacity: 400_000,
            target_sync: TargetSync::PolyakPerStep,
        }
    }

    pub fn validate(&self) {
        assert!(self.alpha > 0.0, "alpha must be positive");
        assert!(self.eta > 0.0 && self.eta < 1.0, "eta must lie in (0, 1)");
        assert!((0.0..=1.0).contains(&self.gamma), "gamma must lie in [0, 1]");
    }

    fn critic_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.obs_dim + self.act_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

/// Losses reported by one gradient cycle (values before the step applied).
#[derive(Debug, Clone, Copy)]
pub struct CycleStats {
    pub critic_loss: f64,
    pub policy_objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacAgent {
    config: SacConfig,
    actor: PolicyNet,
    q1: DenseNet,
    q2: DenseNet,
    q1_target: DenseNet,
    q2_target: DenseNet,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
}

/// Stacks transition fields into batch matrices.
fn batch_matrices(batch: &[&Transition]) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>, Vec<bool>) {
    let b = batch.len();
    let obs_dim = batch[0].obs.len();
    let act_dim = batch[0].action.len();
    let mut obs = Array2::zeros((b, obs_dim));
    let mut act = Array2::zeros((b, act_dim));
    let mut rew = Array1::zeros(b);
    let mut next_obs = Array2::zeros((b, obs_dim));
    let mut terminal = Vec::with_capacity(b);
    for (i, tr) in batch.iter().enumerate() {
        obs.row_mut(i).assign(&ArrayView1::from(&tr.obs[..]));
        act.row_mut(i).assign(&ArrayView1::from(&tr.action[..]));
        rew[i] = tr.reward;
        next_obs.row_mut(i).assign(&ArrayView1::from(&tr.next_obs[..]));
        terminal.push(tr.done.is_some());
    }
    (obs, act, rew, next_obs, terminal)
}

pub(crate) fn concat_columns(parts: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("row counts agree")
}

impl SacAgent {
    pub fn new<R: Rng>(config: SacConfig, rng: &mut R) -> Self {
        config.validate();
        let actor = PolicyNet::new(config.obs_dim, &config.hidden, config.act_dim, rng);
        let q1 = DenseNet::new(&config.critic_dims(), 1.0, rng);
        let q2 = DenseNet::new(&config.critic_dims(), 1.0, rng);
        Self::from_parts(config, actor, q1, q2)
    }

    /// Builds an agent around existing networks; targets start as hard copies
    /// and optimizer state is fresh. Used by the offline-to-online transfer.
    pub fn from_parts(config: SacConfig, actor: PolicyNet, q1: DenseNet, q2: DenseNet) -> Self {
        config.validate();
        assert_eq!(actor.obs_dim(), config.obs_dim);
        assert_eq!(actor.action_dim(), config.act_dim);
        assert_eq!(q1.input_dim(), config.obs_dim + config.act_dim);
        assert_eq!(q2.input_dim(), config.obs_dim + config.act_dim);
        let lr = config.learning_rate;
        SacAgent {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor_opt: Adam::new(actor.net(), lr),
            q1_opt: Adam::new(&q1, lr),
            q2_opt: Adam::new(&q2, lr),
            config,
            actor,
            q1,
            q2,
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn actor(&self) -> &PolicyNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut PolicyNet {
        &mut self.actor
    }

    pub fn critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.q1, &self.q2)
    }

    pub fn critics_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.q1, &mut self.q2)
    }

    pub fn target_critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.q1_target, &self.q2_target)
    }

    /// Stochastic policy sample, or tanh of the mean in deterministic
    /// (evaluation) mode.
    pub fn act<R: Rng>(&self, obs: &[f64], deterministic: bool, rng: &mut R) -> Vec<f64> {
        let obs = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row vector");
        if deterministic {
            self.actor.mean_action(obs.view()).row(0).to_vec()
        } else {
            let noise = standard_normal(rng, 1, self.config.act_dim);
            self.actor.sample(obs.view(), noise.view()).action.row(0).to_vec()
        }
    }

    /// Bellman targets y for a batch: fresh next actions from the current
    /// actor, bootstrapped through the minimum of the frozen critics.
    pub fn critic_targets<R: Rng>(&self, batch: &[&Transition], rng: &mut R) -> Array1<f64> {
        let (_, _, rew, next_obs, terminal) = batch_matrices(batch);
        let noise = standard_normal(rng, batch.len(), self.config.act_dim);
        let sample = self.actor.sample(next_obs.view(), noise.view());
        let input = concat_columns(&[&next_obs, &sample.action]);
        let q1 = self.q1_target.output(input.view());
        let q2 = self.q2_target.output(input.view());
        Array1::from_shape_fn(batch.len(), |i| {
            soft_bellman_target(
                rew[i],
                terminal[i],
                self.config.gamma,
                q1[(i, 0)].min(q2[(i, 0)]),
                self.config.alpha,
                sample.log_prob[i],
            )
        })
    }

    /// One Adam step on each critic against the mean-squared Bellman error.
    /// Returns the pre-step loss averaged over the twin critics.
    pub fn update_critics<R: Rng>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let y = self.critic_targets(batch, rng);
        let (obs, act, ..) = batch_matrices(batch);
        let input = concat_columns(&[&obs, &act]);
        let b = batch.len() as f64;
        let mut losses = [0.0; 2];
        for (k, (critic, opt)) in
            [(&mut self.q1, &mut self.q1_opt), (&mut self.q2, &mut self.q2_opt)]
                .into_iter()
                .enumerate()
        {
            let (q, cache) = critic.forward(input.view());
            let residual = &q.column(0).to_owned() - &y;
            let loss = residual.mapv(|v| v * v).mean().unwrap();
            if !loss.is_finite() {
                return Err(NeuralError::NonFiniteLoss(loss));
            }
            let dq = residual.mapv(|v| 2.0 * v / b).insert_axis(Axis(1));
            let (grads, _) = critic.backward(&cache, dq.view());
            opt.step(critic, &grads)?;
            losses[k] = loss;
        }
        Ok((losses[0] + losses[1]) / 2.0)
    }

    /// One Adam ascent step on the reparameterized policy objective
    /// mean[min Q(s, a(xi)) - alpha log pi(a(xi)|s)]. Returns the pre-step
    /// objective value.
    pub fn update_policy<R: Rng>(
        &mut self,
        batch: &[&Transition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, ..) = batch_matrices(batch);
        let b = batch.len();
        let noise = standard_normal(rng, b, self.config.act_dim);
        let sample = self.actor.sample(obs.view(), noise.view());
        let input = concat_columns(&[&obs, &sample.action]);
        let (q1, c1) = self.q1.forward(input.view());
        let (q2, c2) = self.q2.forward(input.view());

        let mut objective = 0.0;
        let mut dy1 = Array2::zeros((b, 1));
        let mut dy2 = Array2::zeros((b, 1));
        let scale = 1.0 / b as f64;
        for i in 0..b {
            let (v1, v2) = (q1[(i, 0)], q2[(i, 0)]);
            objective += v1.min(v2) - self.config.alpha * sample.log_prob[i];
            // Gradient of the minimized loss L = -J flows through the critic
            // achieving the row minimum.
            if v1 <= v2 {
                dy1[(i, 0)] = -scale;
            } else {
                dy2[(i, 0)] = -scale;
            }
        }
        objective *= scale;
        if !objective.is_finite() {
            return Err(NeuralError::NonFiniteLoss(objective));
        }
        let dx1 = self.q1.backward_input(&c1, dy1.view());
        let dx2 = self.q2.backward_input(&c2, dy2.view());
        let obs_dim = self.config.obs_dim;
        let act_dim = self.config.act_dim;
        let d_action = (&dx1 + &dx2)
            .slice(ndarray::s![.., obs_dim..obs_dim + act_dim])
            .to_owned();
        let d_logp = Array1::from_elem(b, self.config.alpha * scale);
        let grads = self.actor.backward(&sample, d_action.view(), d_logp.view());
        self.actor_opt.step(self.actor.net_mut(), &grads)?;
        Ok(objective)
    }

    /// Polyak step: target <- (1 - tau) target + tau online.
    pub fn soft_update(&mut self, tau: f64) {
        for (target, online) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)]
        {
            for (tl, ol) in target.layers_mut().iter_mut().zip(online.layers()) {
                tl.w.zip_mut_with(&ol.w, |t, &o| *t = (1.0 - tau) * *t + tau * o);
                tl.b.zip_mut_with(&ol.b, |t, &o| *t = (1.0 - tau) * *t + tau * o);
            }
        }
    }

    /// One full gradient cycle on a sampled batch: critics, then policy, then
    /// (in the default mode) the per-step Polyak target update.
    pub fn update_cycle<R: Rng>(
        &mut self,
        buffer: &ReplayBuffer<Transition>,
        rng: &mut R,
    ) -> Result<CycleStats, NeuralError> {
        let batch = buffer.sample(self.config.batch_size, rng);
        let critic_loss = self.update_critics(&batch, rng)?;
        let policy_objective = self.update_policy(&batch, rng)?;
        if self.config.target_sync == TargetSync::PolyakPerStep {
            self.soft_update(1.0 - self.config.eta);
        }
        Ok(CycleStats { critic_loss, policy_objective })
    }

    /// Episode-boundary hook for the literal once-per-episode schedule.
    pub fn episode_end_sync(&mut self) {
        if self.config.target_sync == TargetSync::LiteralPerEpisode {
            self.soft_update(self.config.eta);
        }
    }
}
