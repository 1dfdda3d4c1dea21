//! Offline-to-online transfer: the protagonist policy migrates as-is, and the
//! marginalized joint critic is distilled by regression into ordinary
//! (s, a_p) critics, so the online agent is a plain SAC agent with no
//! adversary dependency.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{Adam, DenseNet, NeuralError};
use crate::sac::{concat_columns, SacAgent, SacConfig};

use super::{mse_step, JasacAgent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Regression points: (buffer state, uniform random protagonist action).
    pub points: usize,
    pub max_epochs: usize,
    /// Acceptable fit: RMSE <= factor * std(targets).
    pub rmse_threshold_factor: f64,
    /// Monte-Carlo draws per marginalization target.
    pub mc_samples: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            points: 20_000,
            max_epochs: 200,
            rmse_threshold_factor: 0.05,
            mc_samples: 32,
            batch_size: 256,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub points: usize,
    pub epochs_run: usize,
    pub rmse_q1: f64,
    pub rmse_q2: f64,
    pub target_std: f64,
    pub rmse_threshold: f64,
    /// Set when the fit missed the threshold; the transfer is still usable.
    pub warning: bool,
}

fn rmse(critic: &DenseNet, input: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let q = critic.output(input.view());
    let mut acc = 0.0;
    for i in 0..y.len() {
        let d = q[(i, 0)] - y[i];
        acc += d * d;
    }
    (acc / y.len() as f64).sqrt()
}

/// Builds the online SAC agent from a trained joint-adversarial agent. The
/// actor is a parameter copy of the protagonist; the critics are fresh
/// networks regressed onto marginalized joint-critic values over a sample of
/// visited states and uniform random protagonist actions.
pub fn transfer_to_sac<R: Rng>(
    agent: &JasacAgent,
    sac_config: SacConfig,
    distill: &DistillConfig,
    state_pool: &[Vec<f64>],
    rng: &mut R,
) -> Result<(SacAgent, TransferReport), NeuralError> {
    assert_eq!(sac_config.obs_dim, agent.config().obs_dim, "transfer must keep the observation space");
    assert_eq!(sac_config.act_dim, agent.config().act_p_dim, "transfer must keep the protagonist action space");
    assert!(!state_pool.is_empty(), "need at least one state to distill on");

    let d = agent.config().act_p_dim;
    let n = distill.points;
    let mut obs = Array2::zeros((n, sac_config.obs_dim));
    let mut act = Array2::zeros((n, d));
    for i in 0..n {
        let s = &state_pool[rng.random_range(0..state_pool.len())];
        for (j, &v) in s.iter().enumerate() {
            obs[(i, j)] = v;
        }
        for j in 0..d {
            act[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    let marginal = agent.marginalized_q(distill.mc_samples);
    // Marginalization in batches keeps the adversary samples manageable.
    let mut y = Array1::zeros(n);
    let chunk = 2048.min(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let obs_c = obs.slice(ndarray::s![start..end, ..]).to_owned();
        let act_c = act.slice(ndarray::s![start..end, ..]).to_owned();
        let vals = marginal.eval_batch(&obs_c, &act_c, rng);
        for (k, i) in (start..end).enumerate() {
            y[i] = vals[k];
        }
        start = end;
    }

    let mean = y.mean().unwrap();
    let target_std = (y.mapv(|v| (v - mean) * (v - mean)).mean().unwrap()).sqrt();
    let threshold = distill.rmse_threshold_factor * target_std.max(1e-9);

    let mut dims = vec![sac_config.obs_dim + d];
    dims.extend_from_slice(&sac_config.hidden);
    dims.push(1);
    let mut q1 = DenseNet::new(&dims, 1.0, rng);
    let mut q2 = DenseNet::new(&dims, 1.0, rng);
    let mut opt1 = Adam::new(&q1, distill.learning_rate);
    let mut opt2 = Adam::new(&q2, distill.learning_rate);

    let input = concat_columns(&[&obs, &act]);
    let mut epochs_run = 0;
    for _ in 0..distill.max_epochs {
        epochs_run += 1;
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates with the caller's rng keeps the run deterministic.
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for block in order.chunks(distill.batch_size) {
            let mut bi = Array2::zeros((block.len(), input.ncols()));
            let mut by = Array1::zeros(block.len());
            for (k, &i) in block.iter().enumerate() {
                bi.row_mut(k).assign(&input.row(i));
                by[k] = y[i];
            }
            mse_step(&mut q1, &mut opt1, &bi, &by)?;
            mse_step(&mut q2, &mut opt2, &bi, &by)?;
        }
        if rmse(&q1, &input, &y) <= threshold && rmse(&q2, &input, &y) <= threshold {
            break;
        }
    }

    let rmse_q1 = rmse(&q1, &input, &y);
    let rmse_q2 = rmse(&q2, &input, &y);
    let report = TransferReport {
        points: n,
        epochs_run,
        rmse_q1,
        rmse_q2,
        target_std,
        rmse_threshold: threshold,
        warning: rmse_q1 > threshold || rmse_q2 > threshold,
    };
    let sac = SacAgent::from_parts(sac_config, agent.protagonist().clone(), q1, q2);
    Ok((sac, report))
}
