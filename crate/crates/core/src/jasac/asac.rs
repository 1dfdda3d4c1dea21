//! Separately adversarial soft actor-critic: the RARL-style baseline in
//! which each player bootstraps and updates only its own critic pair
//! Q_p(s, a_p) / Q_o(s, a_o), with no shared value information.

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{standard_normal, Adam, DenseNet, NeuralError, PolicyNet};
use crate::sac::{concat_columns, soft_bellman_target, ReplayBuffer, TargetSync};

use super::{
    joint_batch_matrices, mse_step, squashed_policy_step, JasacConfig, JointCycleStats,
    JointTransition,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsacAgent {
    config: JasacConfig,
    protagonist: PolicyNet,
    adversary: PolicyNet,
    qp1: DenseNet,
    qp2: DenseNet,
    qp1_target: DenseNet,
    qp2_target: DenseNet,
    qo1: DenseNet,
    qo2: DenseNet,
    qo1_target: DenseNet,
    qo2_target: DenseNet,
    protagonist_opt: Adam,
    adversary_opt: Adam,
    qp1_opt: Adam,
    qp2_opt: Adam,
    qo1_opt: Adam,
    qo2_opt: Adam,
}

impl AsacAgent {
    pub fn new<R: Rng>(config: JasacConfig, rng: &mut R) -> Self {
        config.validate();
        let protagonist = PolicyNet::new(config.obs_dim, &config.hidden, config.act_p_dim, rng);
        let adversary = PolicyNet::new(config.obs_dim, &config.hidden, config.act_o_dim, rng);
        let dims = |act: usize| {
            let mut d = vec![config.obs_dim + act];
            d.extend_from_slice(&config.hidden);
            d.push(1);
            d
        };
        let qp1 = DenseNet::new(&dims(config.act_p_dim), 1.0, rng);
        let qp2 = DenseNet::new(&dims(config.act_p_dim), 1.0, rng);
        let qo1 = DenseNet::new(&dims(config.act_o_dim), 1.0, rng);
        let qo2 = DenseNet::new(&dims(config.act_o_dim), 1.0, rng);
        let lr = config.learning_rate;
        AsacAgent {
            qp1_target: qp1.clone(),
            qp2_target: qp2.clone(),
            qo1_target: qo1.clone(),
            qo2_target: qo2.clone(),
            protagonist_opt: Adam::new(protagonist.net(), lr),
            adversary_opt: Adam::new(adversary.net(), lr),
            qp1_opt: Adam::new(&qp1, lr),
            qp2_opt: Adam::new(&qp2, lr),
            qo1_opt: Adam::new(&qo1, lr),
            qo2_opt: Adam::new(&qo2, lr),
            config,
            protagonist,
            adversary,
            qp1,
            qp2,
            qo1,
            qo2,
        }
    }

    pub fn config(&self) -> &JasacConfig {
        &self.config
    }

    pub fn alpha_o(&self) -> f64 {
        -self.config.alpha_o_magnitude
    }

    pub fn protagonist(&self) -> &PolicyNet {
        &self.protagonist
    }

    pub fn adversary(&self) -> &PolicyNet {
        &self.adversary
    }

    /// Each player's critics see only that player's action: (obs + own dim).
    pub fn critic_input_dims(&self) -> (usize, usize) {
        (self.qp1.input_dim(), self.qo1.input_dim())
    }

    pub fn protagonist_critics(&self) -> (&DenseNet, &DenseNet) {
        (&self.qp1, &self.qp2)
    }

    pub fn act_pair<R: Rng>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> (Vec<f64>, Vec<f64>) {
        let obs = ndarray::Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
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

    /// Protagonist-side critic update: an ordinary SAC backup that ignores
    /// the adversary entirely.
    pub fn update_protagonist_critics<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, act_p, _, rew, next_obs, terminal) = joint_batch_matrices(batch);
        let b = batch.len();
        let noise = standard_normal(rng, b, self.config.act_p_dim);
        let sample = self.protagonist.sample(next_obs.view(), noise.view());
        let input_next = concat_columns(&[&next_obs, &sample.action]);
        let q1 = self.qp1_target.output(input_next.view());
        let q2 = self.qp2_target.output(input_next.view());
        let y = Array1::from_shape_fn(b, |i| {
            soft_bellman_target(
                rew[i],
                terminal[i],
                self.config.gamma,
                q1[(i, 0)].min(q2[(i, 0)]),
                self.config.alpha_p,
                sample.log_prob[i],
            )
        });
        let input = concat_columns(&[&obs, &act_p]);
        let l1 = mse_step(&mut self.qp1, &mut self.qp1_opt, &input, &y)?;
        let l2 = mse_step(&mut self.qp2, &mut self.qp2_opt, &input, &y)?;
        Ok((l1 + l2) / 2.0)
    }

    /// Adversary-side critic update: bootstraps the shared reward through the
    /// adversary's own marginal critics and its negative entropy coefficient.
    pub fn update_adversary_critics<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, _, act_o, rew, next_obs, terminal) = joint_batch_matrices(batch);
        let b = batch.len();
        let noise = standard_normal(rng, b, self.config.act_o_dim);
        let sample = self.adversary.sample(next_obs.view(), noise.view());
        let input_next = concat_columns(&[&next_obs, &sample.action]);
        let q1 = self.qo1_target.output(input_next.view());
        let q2 = self.qo2_target.output(input_next.view());
        let y = Array1::from_shape_fn(b, |i| {
            soft_bellman_target(
                rew[i],
                terminal[i],
                self.config.gamma,
                q1[(i, 0)].min(q2[(i, 0)]),
                self.alpha_o(),
                sample.log_prob[i],
            )
        });
        let input = concat_columns(&[&obs, &act_o]);
        let l1 = mse_step(&mut self.qo1, &mut self.qo1_opt, &input, &y)?;
        let l2 = mse_step(&mut self.qo2, &mut self.qo2_opt, &input, &y)?;
        Ok((l1 + l2) / 2.0)
    }

    pub fn update_protagonist_policy<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, ..) = joint_batch_matrices(batch);
        let noise = standard_normal(rng, batch.len(), self.config.act_p_dim);
        let sample = self.protagonist.sample(obs.view(), noise.view());
        let input = concat_columns(&[&obs, &sample.action]);
        squashed_policy_step(
            &mut self.protagonist,
            &mut self.protagonist_opt,
            &self.qp1,
            &self.qp2,
            &input,
            &sample,
            self.config.obs_dim,
            self.config.alpha_p,
            1.0,
        )
    }

    pub fn update_adversary_policy<R: Rng>(
        &mut self,
        batch: &[&JointTransition],
        rng: &mut R,
    ) -> Result<f64, NeuralError> {
        let (obs, ..) = joint_batch_matrices(batch);
        let noise = standard_normal(rng, batch.len(), self.config.act_o_dim);
        let sample = self.adversary.sample(obs.view(), noise.view());
        let input = concat_columns(&[&obs, &sample.action]);
        squashed_policy_step(
            &mut self.adversary,
            &mut self.adversary_opt,
            &self.qo1,
            &self.qo2,
            &input,
            &sample,
            self.config.obs_dim,
            self.alpha_o(),
            -1.0,
        )
    }

    pub fn soft_update(&mut self, tau: f64) {
        for (target, online) in [
            (&mut self.qp1_target, &self.qp1),
            (&mut self.qp2_target, &self.qp2),
            (&mut self.qo1_target, &self.qo1),
            (&mut self.qo2_target, &self.qo2),
        ] {
            for (tl, ol) in target.layers_mut().iter_mut().zip(online.layers()) {
                tl.w.zip_mut_with(&ol.w, |t, &o| *t = (1.0 - tau) * *t + tau * o);
                tl.b.zip_mut_with(&ol.b, |t, &o| *t = (1.0 - tau) * *t + tau * o);
            }
        }
    }

    pub fn update_cycle<R: Rng>(
        &mut self,
        buffer: &ReplayBuffer<JointTransition>,
        rng: &mut R,
    ) -> Result<JointCycleStats, NeuralError> {
        let batch = buffer.sample(self.config.batch_size, rng);
        let lp = self.update_protagonist_critics(&batch, rng)?;
        let lo = self.update_adversary_critics(&batch, rng)?;
        let protagonist_objective = self.update_protagonist_policy(&batch, rng)?;
        let adversary_objective = self.update_adversary_policy(&batch, rng)?;
        if self.config.target_sync == TargetSync::PolyakPerStep {
            self.soft_update(1.0 - self.config.eta);
        }
        Ok(JointCycleStats {
            critic_loss: (lp + lo) / 2.0,
            protagonist_objective,
            adversary_objective,
        })
    }

    pub fn episode_end_sync(&mut self) {
        if self.config.target_sync == TargetSync::LiteralPerEpisode {
            self.soft_update(self.config.eta);
        }
    }
}
