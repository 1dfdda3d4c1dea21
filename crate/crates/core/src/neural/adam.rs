//! Bias-corrected Adam over [`DenseNet`] parameters.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DenseNet, NetGrads, NeuralError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        let zeros: Vec<_> = net
            .layers()
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.dim())))
            .collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One descent step. Non-finite gradients reject the step so a bad batch
    /// cannot poison the moment accumulators.
    pub fn step(&mut self, net: &mut DenseNet, grads: &NetGrads) -> Result<(), NeuralError> {
        if let Some(layer) = grads
            .layers
            .iter()
            .position(|(w, b)| w.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()))
        {
            return Err(NeuralError::NonFiniteGradient { layer });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            mw.zip_mut_with(gw, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            mb.zip_mut_with(gb, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            vw.zip_mut_with(gw, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            vb.zip_mut_with(gb, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(&mut layer.w).and(&*mw).and(&*vw).for_each(|p, &m, &v| {
                *p -= self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            });
            ndarray::Zip::from(&mut layer.b).and(&*mb).and(&*vb).for_each(|p, &m, &v| {
                *p -= self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}
