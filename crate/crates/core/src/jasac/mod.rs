//! Jointly adversarial soft actor-critic: a zero-sum two-player extension of
//! SAC in which both agents share twin critics spanning the joint action
//! space (s, a_p, a_o). The protagonist ascends the entropy-regularized value
//! while the adversary descends it; a single shared critic pair serves both,
//! which is what distinguishes this from the separate-critic ASAC baseline.

mod asac;
mod transfer;

pub use asac::AsacAgent;
pub use transfer::{transfer_to_sac, DistillConfig, TransferReport};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::DoneReason;
use crate::neural::{standard_normal, Adam, DenseNet, NeuralError, PolicyNet, PolicySample};
use crate::sac::{concat_columns, soft_bellman_target, TargetSync};

/// A stored joint interaction: both players' actions alongside the shared
/// (protagonist) reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTransition {
    pub obs: Vec<f64>,
    pub action_p: Vec<f64>,
    pub action_o: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: Option<DoneReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JasacConfig {
    pub obs_dim: usize,
    pub act_p_dim: usize,
    pub act_o_dim: usize,
    pub hidden: Vec<usize>,
    /// Protagonist entropy coefficient, strictly positive.
    pub alpha_p: f64,
    /// Adversary entropy coefficient magnitude; the agent applies the
    /// negative sign internally (the adversary minimizes the shared value).
    pub alpha_o_magnitude: f64,
    pub gamma: f64,
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync: TargetSync,
}

impl JasacConfig {
    pub fn new(obs_dim: usize, act_p_dim: usize, act_o_dim: usize) -> Self {
        JasacConfig {
            obs_dim,
            act_p_dim,
            act_o_dim,
            hidden: vec![256, 256],
            alpha_p: 0.07,
            alpha_o_magnitude: 0.04,
            gamma: 0.99,
            eta: 0.995,
            learning_rate: 1e-3,
            batch_size: 256,
            buffer_capacity: 400_000,
            target_sync: TargetSync::PolyakPerStep,
        }
    }

    pub fn validate(&self) {
        assert!(self.alpha_p > 0.0, "alpha_p must be positive");
        assert!(
            self.alpha_o_magnitude > 0.0,
            "alpha_o magnitude must be positive (the sign is applied internally)"
        );
        assert!(self.eta > 0.0 && self.eta < 1.0, "eta must lie in (0, 1)");
        assert!((0.0..=1.0).contains(&self.gamma), "gamma must lie in [0, 1]");
    }

    fn joint_critic_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.obs_dim + self.act_p_dim + self.act_o_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

/// Zero-sum entropy-regularized Bellman backup: both players' entropy terms
/// enter the target, with opposite-signed coefficients.
#[allow(clippy::too_many_arguments)]
pub fn joint_soft_target(
    reward: f64,
    terminal: bool,
    gamma: f64,
    min_q_next: f64,
    alpha_p: f64,
    logp_p_next: f64,
    alpha_o: f64,
    logp_o_next: f64,
) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * (min_q_next - alpha_p * logp_p_next - alpha_o * logp_o_next)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JointCycleStats {
    pub critic_loss: f64,
    pub protagonist_objective: f64,
    pub adversary_objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JasacAgent {
    config: JasacConfig,
    protagonist: PolicyNet,
    adversary: PolicyNet,
    q1: DenseNet,
    q2: DenseNet,
    q1_target: DenseNet,
    q2_target: DenseNet,
    protagonist_opt: Adam,
    adversary_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
}

pub(crate) fn joint_batch_matrices(
    batch: &[&JointTransition],
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>, Vec<bool>) {
    let b = batch.len();
    let obs_dim = batch[0].obs.len();
    let p_dim = batch[0].action_p.len();
    let o_dim = batch[0].action_o.len();
    let mut obs = Array2::zeros((b, obs_dim));
    let mut act_p = Array2::zeros((b, p_dim));
    let mut act_o = Array2::zeros((b, o_dim));
    let mut rew = Array1::zeros(b);
    let mut next_obs = Array2::zeros((b, obs_dim));
    let mut terminal = Vec::with_capacity(b);
    for (i, tr) in batch.iter().enumerate() {
        obs.row_mut(i).assign(&ArrayView1::from(&tr.obs[..]));
        act_p.row_mut(i).assign(&ArrayView1::from(&tr.action_p[..]));
        act_o.row_mut(i).assign(&ArrayView1::from(&tr.action_o[..]));
        rew[i] = tr.reward;
        next_obs.row_mut(i).assign(&ArrayView1::from(&tr.next_obs[..]));
        terminal.push(tr.done.is_some());
    }
    (obs, act_p, act_o, rew, next_obs, terminal)
}

/// One Adam step of a critic toward regression targets; returns the pre-step
/// mean-squared error.
pub(crate) fn mse_step(
    critic: &mut DenseNet,
    opt: &mut Adam,
    input: &Array2<f64>,
    y: &Array1<f64>,
) -> Result<f64, NeuralError> {
    let b = y.len() as f64;
    let (q, cache) = critic.forward(input.view());
    let residual = &q.column(0).to_owned() - y;
    let loss = residual.mapv(|v| v * v).mean().unwrap();
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss(loss));
    }
    let dq = residual.mapv(|v| 2.0 * v / b).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, dq.view());
    opt.step(critic, &grads)?;
    Ok(loss)
}

/// One policy step through min(Q1, Q2). The actor's own action occupies
/// columns [offset, offset + d) of `input`. `direction` is +1 for ascent
/// (protagonist) and -1 for descent (adversary). Returns the objective
/// J = mean(min Q - alpha * log pi) before the step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn squashed_policy_step(
    actor: &mut PolicyNet,
    opt: &mut Adam,
    q1: &DenseNet,
    q2: &DenseNet,
    input: &Array2<f64>,
    sample: &PolicySample,
    offset: usize,
    alpha: f64,
    direction: f64,
) -> Result<f64, NeuralError> {
    let b = input.nrows();
    let d = actor.action_dim();
    let (v1, c1) = q1.forward(input.view());
    let (v2, c2) = q2.forward(input.view());
    let mut objective = 0.0;
    let mut dy1 = Array2::zeros((b, 1));
    let mut dy2 = Array2::zeros((b, 1));
    let scale = 1.0 / b as f64;
    for i in 0..b {
        let (a, bq) = (v1[(i, 0)], v2[(i, 0)]);
        objective += a.min(bq) - alpha * sample.log_prob[i];
        // d(loss)/d(minQ) = -direction / B through the active twin.
        if a <= bq {
            dy1[(i, 0)] = -direction * scale;
        } else {
            dy2[(i, 0)] = -direction * scale;
        }
    }
    objective *= scale;
    if !objective.is_finite() {
        return Err(NeuralError::NonFiniteLoss(objective));
    }
    let dx1 = q1.backward_input(&c1, dy1.view());
    let dx2 = q2.backward_input(&c2, dy2.view());
    let d_action = (&dx1 + &dx2).slice(ndarray::s![.., offset..offset + d]).to_owned();
    let d_logp = Array1::from_elem(b, direction * alpha * scale);
    let grads = actor.backward(sample, d_action.view(), d_logp.view());
    opt.step(actor.net_mut(), &grads)?;
    Ok(objective)
}

impl JasacAgent {
    pub fn new<R: Rng>(config: JasacConfig, rng: &mut R) -> Self {
        config.validate();
        let protagonist = PolicyNet::new(config.obs_dim, &config.hidden, config.act_p_dim, rng);
        let adversary = PolicyNet::new(config.obs_dim, &config.hidden, config.act_o_dim, rng);
        let q1 = DenseNet::new(&config.joint_critic_dims(), 1.0, rng);
        let q2 = DenseNet::new(&config.joint_critic_dims(), 1.0, rng);
        Self::from_parts(config, protagonist, adversary, q1, q2)
    }

    pub fn from_parts(
        config: JasacConfig,
        protagonist: PolicyNet,
        adversary: PolicyNet,
        q1: DenseNet,
        q2: DenseNet,
    ) -> Self {
        config.validate();
        assert_eq!(protagonist.action_dim(), config.act_p_dim);
        assert_eq!(adversary.action_dim(), config.act_o_dim);
        assert_eq!(q1.input_dim(), config.obs_dim + config.act_p_dim + config.act_o_dim);
        let lr = config.learning_rate;
        JasacAgent {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            protagonist_opt: Adam::new(protagonist.net(), lr),
            adversary_opt: Adam::new(adversary.net(), lr),
            q1_opt: Adam::new(&q1, lr),
            q2_opt: Adam::new(&q2, lr),
            config,
            protagonist,
            adversary,
            q1,
            q2,
        }
    }

    pub fn config(&self) -> &JasacConfig {
        &self.config
    }

    /// Signed adversary entropy coefficient (always negative).
    pub fn alpha_o(&self) -> f64 {
        -self.config.alpha_o_magnitude
    }

    pub fn protagonist(&self) -> &PolicyNet {
        &self.protagonist
    }

    pub fn protagonist_mut(&mut self) -> &mut PolicyNet {
        &mut self.protagonist
    }

    pub fn adversary(&self) -> &PolicyNet {
        &self.adversary
    }

    pub fn adversary_mut(&mut self) -> &mut PolicyNet {
        &mut self.adversary
    }

    pub fn critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.q1, &self.q2)
    }

    pub fn critics_mut(&mut self) -> (&mut DenseNet, &mut DenseNet) {
        (&mut self.q1, &mut self.q2)
    }

    /// Draws both players' actions (protagonist first, then adversary).
    pub fn act_pair<R: Rng>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> (Vec<f64>, Vec<f64>) {
        let obs = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row vector");
        if deterministic {
            (
                self.protagonist.mean_action(obs.view()).row(0).to_vec(),
                self.adversary.mean_action(obs.view()).row(0).to_vec(),
            )
        } else {
            let noise_p = standard_normal(rng, 1, self.config.act_p_dim);
            let noise_o = standard_normal(rng, 1, self.config.act_o_dim);
            (
                self.protagonist.sample(obs.view(), noise_p.view()).action.row(0).to_vec(),
                self.adversary.sample(obs.view(), noise_o.view()).action.row(0).to_vec(),
            )
        }
    }

    /// Joint Bellman targets: both primed actions drawn fresh from the
    /// current policies, bootstrapped through min of the frozen joint twins.
    pub fn joint_critic_targets<R: Rng>(
        &self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Array1<f64> {
        let (_, _, _, rew, next_obs, terminal) = joint_batch_matrices(batch);
        let b = batch.len();
        let noise_p = standard_normal(rng, b, self.config.act_p_dim);
        let noise_o = standard_normal(rng, b, self.config.act_o_dim);
        let sample_p = self.protagonist.sample(next_obs.view(), noise_p.view());
        let sample_o = self.adversary.sample(next_obs.view(), noise_o.view());
        let input = concat_columns(&[&next_obs, &sample_p.action, &sample_o.action]);
        let q1 = self.q1_target.output(input.view());
        let q2 = self.q2_target.output(input.view());
        Array1::from_shape_fn(b, |i| {
            joint_soft_target(
                rew[i],
                terminal[i],
                self.config.gamma,
                q1[(i, 0)].min(q2[(i, 0)]),
                self.config.alpha_p,
                sample_p.log_prob[i],
                self.alpha_o(),
                sample_o.log_prob[i],
            )
        })
    }

    /// Adam step on both joint critics against the shared targets. Returns
    /// the pre-step loss averaged over the twins.
    pub fn update_joint_critics<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let y = self.joint_critic_targets(batch, rng);
        let (obs, act_p, act_o, ..) = joint_batch_matrices(batch);
        let input = concat_columns(&[&obs, &act_p, &act_o]);
        let l1 = mse_step(&mut self.q1, &mut self.q1_opt, &input, &y)?;
        let l2 = mse_step(&mut self.q2, &mut self.q2_opt, &input, &y)?;
        Ok((l1 + l2) / 2.0)
    }

    /// Ascent step for the protagonist with the adversary frozen; the
    /// adversary's fresh stochastic action enters the joint critic input so
    /// the search direction accounts for the opponent.
    pub fn update_protagonist<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, ..) = joint_batch_matrices(batch);
        let b = batch.len();
        let noise_p = standard_normal(rng, b, self.config.act_p_dim);
        let noise_o = standard_normal(rng, b, self.config.act_o_dim);
        let sample_p = self.protagonist.sample(obs.view(), noise_p.view());
        let sample_o = self.adversary.sample(obs.view(), noise_o.view());
        let input = concat_columns(&[&obs, &sample_p.action, &sample_o.action]);
        squashed_policy_step(
            &mut self.protagonist,
            &mut self.protagonist_opt,
            &self.q1,
            &self.q2,
            &input,
            &sample_p,
            self.config.obs_dim,
            self.config.alpha_p,
            1.0,
        )
    }

    /// Descent step for the adversary with the protagonist frozen. With
    /// alpha_o < 0 the entropy term rewards adversary entropy under
    /// minimization.
    pub fn update_adversary<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, ..) = joint_batch_matrices(batch);
        let b = batch.len();
        let noise_p = standard_normal(rng, b, self.config.act_p_dim);
        let noise_o = standard_normal(rng, b, self.config.act_o_dim);
        let sample_p = self.protagonist.sample(obs.view(), noise_p.view());
        let sample_o = self.adversary.sample(obs.view(), noise_o.view());
        let input = concat_columns(&[&obs, &sample_p.action, &sample_o.action]);
        squashed_policy_step(
            &mut self.adversary,
            &mut self.adversary_opt,
            &self.q1,
            &self.q2,
            &input,
            &sample_o,
            self.config.obs_dim + self.config.act_p_dim,
            self.alpha_o(),
            -1.0,
        )
    }

    pub fn soft_update(&mut self, tau: f64) {
        for (target, online) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)]
        {
            for (tl, ol) in target.layers_mut().iter_mut().zip(online.layers()) {
                tl.w.zip_mut_with(&ol.w, |t, &o| *t = (1.0 - tau) * *t + tau * o);
                tl.b.zip_mut_with(&ol.b, |t, &o| *t = (1.0 - tau) * *t + tau * o);
            }
        }
    }

    /// One full cycle in algorithm order: critics, then protagonist, then
    /// adversary; neither policy update touches the critics in between.
    pub fn update_cycle<R: Rng>(
        &mut self,
        buffer: &crate::sac::ReplayBuffer<JointTransition>,
        rng: &mut R,
    ) -> Result<JointCycleStats, NeuralError> {
        let batch = buffer.sample(self.config.batch_size, rng);
        let critic_loss = self.update_joint_critics(&batch, rng)?;
        let protagonist_objective = self.update_protagonist(&batch, rng)?;
        let adversary_objective = self.update_adversary(&batch, rng)?;
        if self.config.target_sync == TargetSync::PolyakPerStep {
            self.soft_update(1.0 - self.config.eta);
        }
        Ok(JointCycleStats { critic_loss, protagonist_objective, adversary_objective })
    }

    pub fn episode_end_sync(&mut self) {
        if self.config.target_sync == TargetSync::LiteralPerEpisode {
            self.soft_update(self.config.eta);
        }
    }

    /// Monte-Carlo marginalization of the joint critic over the adversary's
    /// policy, yielding a protagonist-only critic view. The twin minimum is
    /// taken inside the expectation (pessimistic).
    pub fn marginalized_q(&self, n_samples: usize) -> MarginalizedQ<'_> {
        assert!(n_samples >= 1, "need at least one adversary draw");
        MarginalizedQ { agent: self, n_samples }
    }
}

/// Wrapper critic Q(s, a_p) = E_{xi_o}[min Q(s, a_p, a_o(s, xi_o))].
pub struct MarginalizedQ<'a> {
    agent: &'a JasacAgent,
    n_samples: usize,
}

impl MarginalizedQ<'_> {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Batched evaluation over rows of (obs, action_p).
    pub fn eval_batch<R: Rng>(
        &self,
        obs: &Array2<f64>,
        action_p: &Array2<f64>,
        rng: &mut R,
    ) -> Array1<f64> {
        let b = obs.nrows();
        let mut acc = Array1::zeros(b);
        for _ in 0..self.n_samples {
            let noise_o = standard_normal(rng, b, self.agent.config.act_o_dim);
            let sample_o = self.agent.adversary.sample(obs.view(), noise_o.view());
            let input = concat_columns(&[obs, action_p, &sample_o.action]);
            let q1 = self.agent.q1.output(input.view());
            let q2 = self.agent.q2.output(input.view());
            for i in 0..b {
                acc[i] += q1[(i, 0)].min(q2[(i, 0)]);
            }
        }
        acc / self.n_samples as f64
    }

    pub fn eval<R: Rng>(&self, obs: &[f64], action_p: &[f64], rng: &mut R) -> f64 {
        let obs = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row vector");
        let act = Array2::from_shape_vec((1, action_p.len()), action_p.to_vec()).expect("row");
        self.eval_batch(&obs, &act, rng)[0]
    }
}

#[cfg(test)]
mod tests;
