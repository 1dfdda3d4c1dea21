//! Minimal dense-network toolkit: rectifier MLPs with exact reverse-mode
//! gradients, Adam, and squashed-Gaussian policy heads. The compute graph is
//! fixed (affine chains, ReLU hidden activations, tanh policy squashing),
//! which keeps every gradient path small enough to be finite-difference
//! checked exhaustively.

mod adam;
mod policy;

pub use adam::Adam;
pub use policy::{PolicyNet, PolicySample};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
}

/// Draws an i.i.d. standard-normal matrix; the noise source for
/// reparameterized policy samples.
pub fn standard_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Weight matrix, input-major: shape (fan_in, fan_out).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A fully connected network with ReLU hidden activations and a linear
/// output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Per-layer parameter gradients (or any direction in parameter space with
/// the same shapes).
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Layer inputs recorded by a forward pass, consumed by `backward`.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

impl DenseNet {
    /// Fan-in uniform initialization, U(-1/sqrt(in), 1/sqrt(in)) per layer;
    /// the final layer is additionally scaled by `final_scale`.
    pub fn new<R: Rng>(dims: &[usize], final_scale: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let scale = if l == last { final_scale } else { 1.0 };
                DenseLayer {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        scale * rng.random_range(-bound..bound)
                    }),
                    b: Array1::from_shape_fn(fan_out, |_| scale * rng.random_range(-bound..bound)),
                }
            })
            .collect();
        DenseNet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Forward pass over a batch (rows are samples), keeping the activations
    /// needed for a later backward pass.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let mut z = h.dot(&layer.w) + &layer.b;
            if l + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        (h, ForwardCache { inputs })
    }

    /// Forward pass without caching.
    pub fn output(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "input width mismatch");
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w) + &layer.b;
            if l + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h
    }

    /// Exact reverse-mode gradients of the affine/ReLU chain. Returns the
    /// parameter gradients and the gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, dy: ArrayView2<f64>) -> (NetGrads, Array2<f64>) {
        self.backward_impl(cache, dy, true)
    }

    /// Input gradient only; used when the caller differentiates through this
    /// network without updating it (e.g. policy updates through a critic).
    pub fn backward_input(&self, cache: &ForwardCache, dy: ArrayView2<f64>) -> Array2<f64> {
        self.backward_impl(cache, dy, false).1
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        dy: ArrayView2<f64>,
        with_params: bool,
    ) -> (NetGrads, Array2<f64>) {
        assert_eq!(cache.inputs.len(), self.layers.len(), "stale cache");
        assert_eq!(cache.inputs[0].nrows(), dy.nrows(), "stale cache");
        assert_eq!(dy.ncols(), self.output_dim(), "output grad width mismatch");
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = dy.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.inputs[l];
            if with_params {
                let dw = x.t().dot(&delta);
                let db = delta.sum_axis(Axis(0));
                grads.push((dw, db));
            }
            let dx = delta.dot(&layer.w.t());
            if l > 0 {
                // cache.inputs[l] holds relu(z_{l-1}); positive iff z was.
                delta = dx * cache.inputs[l].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            } else {
                delta = dx;
            }
        }
        grads.reverse();
        (NetGrads { layers: grads }, delta)
    }

    /// Shifts every parameter by `scale * dir`; the workhorse for optimizer
    /// steps and finite-difference probes.
    pub fn add_scaled(&mut self, dir: &NetGrads, scale: f64) {
        assert_eq!(dir.layers.len(), self.layers.len());
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&dir.layers) {
            layer.w.scaled_add(scale, dw);
            layer.b.scaled_add(scale, db);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.dim())))
                .collect(),
        }
    }

    /// A random direction with the network's shapes, for directional
    /// finite-difference checks.
    pub fn random_like<R: Rng>(net: &DenseNet, rng: &mut R) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::from_shape_fn(l.w.dim(), |_| rng.sample(StandardNormal)),
                        Array1::from_shape_fn(l.b.dim(), |_| rng.sample(StandardNormal)),
                    )
                })
                .collect(),
        }
    }

    pub fn dot(&self, other: &NetGrads) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|((aw, ab), (bw, bb))| {
                aw.iter().zip(bw).map(|(x, y)| x * y).sum::<f64>()
                    + ab.iter().zip(bb).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * s);
            b.mapv_inplace(|v| v * s);
        }
    }

    pub fn add(&mut self, other: &NetGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests;
