//! Controllable reactive-power devices and the action decodings for both
//! players: protagonist setpoints and adversary parameter deviations.

use serde::{Deserialize, Serialize};

use crate::netcore::NetworkModel;

use super::EnvError;

/// Inverter-based energy resource. Reactive capability is whatever headroom
/// the rated capacity leaves over the current active output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbEr {
    pub bus: usize,
    pub s_rated_mva: f64,
    /// Active output under the stationary profile; per-step profiles override it.
    pub p_output_mw: f64,
}

impl IbEr {
    /// Symmetric reactive limit sqrt(S^2 - P^2) at active output `p_mw`.
    pub fn q_limit_mvar(&self, p_mw: f64) -> f64 {
        (self.s_rated_mva * self.s_rated_mva - p_mw * p_mw).max(0.0).sqrt()
    }
}

/// Static VAR compensator with a fixed reactive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svc {
    pub bus: usize,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceSet {
    pub iber: Vec<IbEr>,
    pub svc: Vec<Svc>,
}

/// Reactive setpoints in MVAr, one entry per device in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoints {
    pub q_iber_mvar: Vec<f64>,
    pub q_svc_mvar: Vec<f64>,
}

impl DeviceSet {
    pub fn action_dim(&self) -> usize {
        self.iber.len() + self.svc.len()
    }

    /// IB-ER and SVC buses must exist and be pairwise disjoint; ratings must
    /// be coherent.
    pub fn validate(&self, net: &NetworkModel) -> Result<(), EnvError> {
        let mut seen = std::collections::HashSet::new();
        for dev in &self.iber {
            if net.position(dev.bus).is_none() {
                return Err(EnvError::UnknownDeviceBus(dev.bus));
            }
            if !seen.insert(dev.bus) {
                return Err(EnvError::SharedDeviceBus(dev.bus));
            }
            if !(dev.s_rated_mva >= dev.p_output_mw && dev.p_output_mw >= 0.0) {
                return Err(EnvError::InvalidDeviceRating(dev.bus));
            }
        }
        for dev in &self.svc {
            if net.position(dev.bus).is_none() {
                return Err(EnvError::UnknownDeviceBus(dev.bus));
            }
            if !seen.insert(dev.bus) {
                return Err(EnvError::SharedDeviceBus(dev.bus));
            }
            if dev.q_min_mvar > dev.q_max_mvar {
                return Err(EnvError::InvalidDeviceRating(dev.bus));
            }
        }
        Ok(())
    }

    /// Affine decode of a squashed action in (-1, 1)^d onto the devices'
    /// feasible reactive intervals. IB-ER intervals are symmetric around zero
    /// and recomputed from the supplied per-device active outputs.
    pub fn action_to_setpoints(&self, action: &[f64], iber_p_mw: &[f64]) -> Setpoints {
        assert_eq!(action.len(), self.action_dim(), "action width mismatch");
        assert_eq!(iber_p_mw.len(), self.iber.len(), "active output width mismatch");
        let q_iber_mvar = self
            .iber
            .iter()
            .zip(iber_p_mw)
            .zip(&action[..self.iber.len()])
            .map(|((dev, &p), &a)| a.clamp(-1.0, 1.0) * dev.q_limit_mvar(p))
            .collect();
        let q_svc_mvar = self
            .svc
            .iter()
            .zip(&action[self.iber.len()..])
            .map(|(dev, &a)| {
                let half = (a.clamp(-1.0, 1.0) + 1.0) / 2.0;
                dev.q_min_mvar + half * (dev.q_max_mvar - dev.q_min_mvar)
            })
            .collect();
        Setpoints { q_iber_mvar, q_svc_mvar }
    }

    /// Inverse of [`Self::action_to_setpoints`], for driving the environment
    /// with explicit MVAr dispatches (e.g. oracle solutions).
    pub fn setpoints_to_action(&self, setpoints: &Setpoints, iber_p_mw: &[f64]) -> Vec<f64> {
        let mut action = Vec::with_capacity(self.action_dim());
        for ((dev, &p), &q) in self.iber.iter().zip(iber_p_mw).zip(&setpoints.q_iber_mvar) {
            let limit = dev.q_limit_mvar(p);
            action.push(if limit > 0.0 { (q / limit).clamp(-1.0, 1.0) } else { 0.0 });
        }
        for (dev, &q) in self.svc.iter().zip(&setpoints.q_svc_mvar) {
            let span = dev.q_max_mvar - dev.q_min_mvar;
            action.push(if span > 0.0 {
                (2.0 * (q - dev.q_min_mvar) / span - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            });
        }
        action
    }
}

/// Multiplicative bounds on branch parameters reachable by the adversary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryBounds {
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for AdversaryBounds {
    fn default() -> Self {
        AdversaryBounds { scale_lo: 0.5, scale_hi: 2.0 }
    }
}

impl AdversaryBounds {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.scale_lo > 0.0 && self.scale_lo <= 1.0 && self.scale_hi >= 1.0 {
            Ok(())
        } else {
            Err(EnvError::InvalidAdversaryBounds)
        }
    }

    /// Geometric decode of one squashed coordinate into a scale factor:
    /// hi^a above zero, lo^(-a) below, so a = 0 is the nominal parameter and
    /// a = +/-1 hits the range ends.
    pub fn scale(&self, a: f64) -> f64 {
        let a = a.clamp(-1.0, 1.0);
        if a >= 0.0 {
            self.scale_hi.powf(a)
        } else {
            self.scale_lo.powf(-a)
        }
    }
}

/// Decodes an adversary action in (-1, 1)^(2|E|) into per-branch additive
/// deltas (delta_r, delta_x). Layout: all r coordinates first, then all x
/// coordinates, in branch declaration order.
pub fn adversary_to_parameters(
    action: &[f64],
    bounds: &AdversaryBounds,
    nominal: &NetworkModel,
) -> Vec<(f64, f64)> {
    let e = nominal.branches().len();
    assert_eq!(action.len(), 2 * e, "adversary action width mismatch");
    nominal
        .branches()
        .iter()
        .enumerate()
        .map(|(i, br)| {
            let kr = bounds.scale(action[i]);
            let kx = bounds.scale(action[e + i]);
            ((kr - 1.0) * br.r, (kx - 1.0) * br.x)
        })
        .collect()
}
