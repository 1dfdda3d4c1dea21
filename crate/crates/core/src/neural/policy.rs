//! Squashed-Gaussian policy head: a = tanh(mu(s) + sigma(s) * xi) with the
//! change-of-variables log-density, differentiable through the noise
//! (reparameterization).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseNet, ForwardCache, NetGrads};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Epsilon inside the squash correction log(1 - a^2 + eps) and for clamping
/// boundary actions before the atanh pre-image.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// A dense trunk whose final layer emits `(mean | log_std)` blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyNet {
    net: DenseNet,
    action_dim: usize,
}

/// A reparameterized batch sample with everything the backward pass needs.
pub struct PolicySample {
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
    cache: ForwardCache,
    sigma: Array2<f64>,
    noise: Array2<f64>,
    std_active: Array2<f64>,
    squash: Array2<f64>,
}

impl PolicyNet {
    /// `dims` describes obs -> hidden layers; the output block of size
    /// `2 * action_dim` is appended here. The final layer is scaled down so
    /// initial actions hover near zero.
    pub fn new<R: Rng>(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(obs_dim);
        dims.extend_from_slice(hidden);
        dims.push(2 * action_dim);
        PolicyNet { net: DenseNet::new(&dims, 0.01, rng), action_dim }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    fn heads(&self, raw: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let d = self.action_dim;
        let mu = raw.slice(s![.., 0..d]).to_owned();
        let raw_log_std = raw.slice(s![.., d..2 * d]).to_owned();
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mu, raw_log_std, log_std)
    }

    /// Draws `a = tanh(mu + sigma * xi)` for each row and evaluates the
    /// squashed log-density at the sample.
    pub fn sample(&self, obs: ArrayView2<f64>, noise: ArrayView2<f64>) -> PolicySample {
        let batch = obs.nrows();
        assert_eq!(noise.dim(), (batch, self.action_dim), "noise shape mismatch");
        let (raw, cache) = self.net.forward(obs);
        let (mu, raw_log_std, log_std) = self.heads(&raw);
        let sigma = log_std.mapv(f64::exp);
        let pre_squash = &mu + &sigma * &noise;
        let action = pre_squash.mapv(f64::tanh);

        let mut log_prob = Array1::zeros(batch);
        let mut squash = Array2::zeros((batch, self.action_dim));
        for b in 0..batch {
            let mut lp = 0.0;
            for i in 0..self.action_dim {
                let xi = noise[(b, i)];
                let a = action[(b, i)];
                let t = 1.0 - a * a;
                lp += -0.5 * xi * xi - log_std[(b, i)] - HALF_LN_2PI - (t + SQUASH_EPS).ln();
                // d/du of the squash correction, reused by backward.
                squash[(b, i)] = 2.0 * a * t / (t + SQUASH_EPS);
            }
            log_prob[b] = lp;
        }
        let std_active = raw_log_std.mapv(|v| {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&v) {
                1.0
            } else {
                0.0
            }
        });
        PolicySample { action, log_prob, cache, sigma, noise: noise.to_owned(), std_active, squash }
    }

    /// Backpropagates `d_action` (per element) and `d_logp` (per row) from a
    /// sample into parameter gradients.
    pub fn backward(
        &self,
        sample: &PolicySample,
        d_action: ArrayView2<f64>,
        d_logp: ArrayView1<f64>,
    ) -> NetGrads {
        let batch = sample.action.nrows();
        let d = self.action_dim;
        assert_eq!(d_action.dim(), (batch, d));
        assert_eq!(d_logp.len(), batch);
        let mut dy = Array2::zeros((batch, 2 * d));
        for b in 0..batch {
            for i in 0..d {
                let a = sample.action[(b, i)];
                let t = 1.0 - a * a;
                let d_mu = d_action[(b, i)] * t + d_logp[b] * sample.squash[(b, i)];
                let d_log_std =
                    (d_mu * sample.sigma[(b, i)] * sample.noise[(b, i)] - d_logp[b])
                        * sample.std_active[(b, i)];
                dy[(b, i)] = d_mu;
                dy[(b, d + i)] = d_log_std;
            }
        }
        self.net.backward(&sample.cache, dy.view()).0
    }

    /// Deterministic evaluation head: tanh of the mean output.
    pub fn mean_action(&self, obs: ArrayView2<f64>) -> Array2<f64> {
        let raw = self.net.output(obs);
        let (mu, _, _) = self.heads(&raw);
        mu.mapv(f64::tanh)
    }

    /// Mean and standard-deviation heads for a batch, without sampling.
    pub fn distribution(&self, obs: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let raw = self.net.output(obs);
        let (mu, _, log_std) = self.heads(&raw);
        (mu, log_std.mapv(f64::exp))
    }

    /// Log-density of a given action under the current head, via the atanh
    /// pre-image. Boundary actions are clamped inward by [`SQUASH_EPS`]; the
    /// flag reports whether clamping occurred.
    pub fn log_prob(&self, obs: ArrayView1<f64>, action: ArrayView1<f64>) -> (f64, bool) {
        assert_eq!(action.len(), self.action_dim);
        let obs2 = obs.insert_axis(ndarray::Axis(0));
        let raw = self.net.output(obs2);
        let (mu, _, log_std) = self.heads(&raw);
        let mut lp = 0.0;
        let mut clamped = false;
        for i in 0..self.action_dim {
            let mut a = action[i];
            let bound = 1.0 - SQUASH_EPS;
            if a.abs() > bound {
                a = a.clamp(-bound, bound);
                clamped = true;
            }
            let u = a.atanh();
            let sigma = log_std[(0, i)].exp();
            let xi = (u - mu[(0, i)]) / sigma;
            let t = 1.0 - a * a;
            lp += -0.5 * xi * xi - log_std[(0, i)] - HALF_LN_2PI - (t + SQUASH_EPS).ln();
        }
        (lp, clamped)
    }
}
