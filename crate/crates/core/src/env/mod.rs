//! Episodic reinforcement-learning environments for Volt-VAR control: the
//! plain MDP used online and the two-player adversarial MDP used offline,
//! sharing one exact power-flow backend.

mod devices;

pub use devices::{adversary_to_parameters, AdversaryBounds, DeviceSet, IbEr, Setpoints, Svc};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{
    self, Injections, NetworkModel, PowerFlowSolution,
};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("device bus {0} does not exist in the network")]
    UnknownDeviceBus(usize),
    #[error("bus {0} hosts more than one device")]
    SharedDeviceBus(usize),
    #[error("device at bus {0} has an invalid rating or range")]
    InvalidDeviceRating(usize),
    #[error("adversary bounds must satisfy 0 < lo <= 1 <= hi")]
    InvalidAdversaryBounds,
    #[error("reward weights must satisfy c_v > 0 and v_lo < v_hi")]
    InvalidRewardWeights,
    #[error("profile must cover the horizon and keep multipliers positive")]
    InvalidProfile,
    #[error("power flow diverged in the rest configuration; the case is invalid")]
    InitialPowerFlowDiverged,
    #[error(transparent)]
    Network(#[from] netcore::NetworkError),
}

/// Observation vector: realized per-unit nodal injections and voltages plus
/// the episode step index. The slack entries carry the recovered slack
/// injection, so the vector reflects network losses.
#[derive(Debug, Clone, PartialEq)]
pub struct VvcState {
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub v_mag: Vec<f64>,
    pub t: usize,
}

/// Reward shaping constants. The voltage term is the displayed penalty form
/// (non-positive), so the combined reward is maximal at zero violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub c_v: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub r_fail: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { c_v: 100.0, v_lo: 0.95, v_hi: 1.05, r_fail: -300.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.c_v > 0.0 && self.v_lo < self.v_hi {
            Ok(())
        } else {
            Err(EnvError::InvalidRewardWeights)
        }
    }
}

/// One row of a per-step profile: a multiplier on all base loads and one
/// active-output value per IB-ER (declaration order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileStep {
    pub load_mult: f64,
    pub iber_p_mw: Vec<f64>,
}

/// Load/generation schedule across an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum LoadProfile {
    /// A stationary power-flow section: base loads and the devices' declared
    /// active outputs at every step.
    #[default]
    Stationary,
    Steps(Vec<ProfileStep>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub horizon: usize,
    pub profile: LoadProfile,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { horizon: 96, profile: LoadProfile::Stationary, gamma: 0.99, seed: 0 }
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    Horizon,
    PowerFlowFailure,
}

/// Reward decomposition for one step. `loss_mw` and `voltage_penalty` are
/// NaN on a failed step (no converged solution exists to measure them).
#[derive(Debug, Clone, Copy)]
pub struct RewardTerms {
    pub reward: f64,
    pub failed: bool,
    pub loss_mw: f64,
    /// R_V: non-positive, zero exactly when all voltages are within limits.
    pub voltage_penalty: f64,
}

/// Squared-excursion voltage penalty (non-positive).
pub fn voltage_penalty(v_mag: &[f64], weights: &RewardWeights) -> f64 {
    -v_mag
        .iter()
        .map(|&v| {
            let over = (v - weights.v_hi).max(0.0);
            let under = (weights.v_lo - v).max(0.0);
            over * over + under * under
        })
        .sum::<f64>()
}

/// Reward of a solved (or failed) step: r = -loss_MW + c_v * R_V, or the
/// failure reward when the solver did not converge.
pub fn compute_reward(
    net: &NetworkModel,
    sol: &PowerFlowSolution,
    inj: &Injections,
    weights: &RewardWeights,
) -> RewardTerms {
    if !sol.converged {
        return RewardTerms {
            reward: weights.r_fail,
            failed: true,
            loss_mw: f64::NAN,
            voltage_penalty: f64::NAN,
        };
    }
    let loss_mw = netcore::total_loss_mw(net, sol, inj).expect("converged solution");
    let r_v = voltage_penalty(&sol.v_mag, weights);
    RewardTerms { reward: -loss_mw + weights.c_v * r_v, failed: false, loss_mw, voltage_penalty: r_v }
}

/// Fixed affine feature map computed once from the nominal no-control solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateNormalizer {
    p0: Vec<f64>,
    q0: Vec<f64>,
    v0: Vec<f64>,
    p_scale: f64,
    q_scale: f64,
    v_scale: f64,
    horizon: usize,
}

impl StateNormalizer {
    fn new(baseline: &VvcState, horizon: usize) -> Self {
        let spread = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-2);
        StateNormalizer {
            p_scale: spread(&baseline.p_inj),
            q_scale: spread(&baseline.q_inj),
            v_scale: 0.05,
            p0: baseline.p_inj.clone(),
            q0: baseline.q_inj.clone(),
            v0: baseline.v_mag.clone(),
            horizon,
        }
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.p0.len() + 1
    }

    pub fn features(&self, state: &VvcState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_dim());
        out.extend(state.p_inj.iter().zip(&self.p0).map(|(x, x0)| (x - x0) / self.p_scale));
        out.extend(state.q_inj.iter().zip(&self.q0).map(|(x, x0)| (x - x0) / self.q_scale));
        out.extend(state.v_mag.iter().zip(&self.v0).map(|(x, x0)| (x - x0) / self.v_scale));
        out.push(state.t as f64 / self.horizon as f64);
        out
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: VvcState,
    pub reward: f64,
    pub done: Option<DoneReason>,
    pub terms: RewardTerms,
}

/// Solver and adversary options beyond the episode schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvOptions {
    pub v_slack: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub bounds: AdversaryBounds,
    /// When set, the adversary action of the first step stays in force for
    /// the whole episode.
    pub freeze_adversary: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        EnvOptions {
            v_slack: 1.0,
            tolerance: 1e-8,
            max_iterations: 30,
            bounds: AdversaryBounds::default(),
            freeze_adversary: false,
        }
    }
}

/// The Volt-VAR control environment. One instance is single-threaded;
/// independent instances (one per seed/worker) may run in parallel.
#[derive(Debug, Clone)]
pub struct VvcEnv {
    nominal: NetworkModel,
    hidden: Option<NetworkModel>,
    hidden_scales: Option<Vec<(f64, f64)>>,
    devices: DeviceSet,
    weights: RewardWeights,
    episode: EpisodeConfig,
    options: EnvOptions,
    adversarial: bool,
    normalizer: StateNormalizer,
    t: usize,
    done: bool,
    state: VvcState,
    frozen_deltas: Option<Vec<(f64, f64)>>,
}

impl VvcEnv {
    /// Offline environment on the nominal model. With `adversarial` the
    /// two-player step applies branch-parameter deviations before solving.
    pub fn offline(
        nominal: NetworkModel,
        devices: DeviceSet,
        weights: RewardWeights,
        episode: EpisodeConfig,
        options: EnvOptions,
        adversarial: bool,
    ) -> Result<Self, EnvError> {
        Self::build(nominal, None, None, devices, weights, episode, options, adversarial)
    }

    /// Online environment: steps run against a hidden "real" model drawn once
    /// from the adversary bounds with `model_seed`. The draw is published via
    /// [`Self::hidden_scales`] for audit, not fed to the agent.
    pub fn online(
        nominal: NetworkModel,
        devices: DeviceSet,
        weights: RewardWeights,
        episode: EpisodeConfig,
        options: EnvOptions,
        model_seed: u64,
    ) -> Result<Self, EnvError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(model_seed);
        let (lo, hi) = (options.bounds.scale_lo, options.bounds.scale_hi);
        let scales: Vec<(f64, f64)> = nominal
            .branches()
            .iter()
            .map(|_| (rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
            .collect();
        let deltas: Vec<(f64, f64)> = nominal
            .branches()
            .iter()
            .zip(&scales)
            .map(|(br, &(kr, kx))| ((kr - 1.0) * br.r, (kx - 1.0) * br.x))
            .collect();
        let (hidden, _) = nominal.apply_parameter_scaling(&deltas, lo, hi)?;
        Self::build(nominal, Some(hidden), Some(scales), devices, weights, episode, options, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        nominal: NetworkModel,
        hidden: Option<NetworkModel>,
        hidden_scales: Option<Vec<(f64, f64)>>,
        devices: DeviceSet,
        weights: RewardWeights,
        episode: EpisodeConfig,
        options: EnvOptions,
        adversarial: bool,
    ) -> Result<Self, EnvError> {
        devices.validate(&nominal)?;
        weights.validate()?;
        options.bounds.validate()?;
        if episode.horizon == 0 {
            return Err(EnvError::InvalidProfile);
        }
        if let LoadProfile::Steps(steps) = &episode.profile {
            let valid = !steps.is_empty()
                && steps
                    .iter()
                    .all(|s| s.load_mult > 0.0 && s.iber_p_mw.len() == devices.iber.len());
            if !valid {
                return Err(EnvError::InvalidProfile);
            }
        }
        let mut env = VvcEnv {
            nominal,
            hidden,
            hidden_scales,
            devices,
            weights,
            episode,
            options,
            adversarial,
            normalizer: StateNormalizer {
                p0: vec![],
                q0: vec![],
                v0: vec![],
                p_scale: 1.0,
                q_scale: 1.0,
                v_scale: 1.0,
                horizon: 1,
            },
            t: 0,
            done: false,
            state: VvcState { p_inj: vec![], q_inj: vec![], v_mag: vec![], t: 0 },
            frozen_deltas: None,
        };
        // Baseline for the feature map: the nominal no-control solve. A case
        // that fails at rest is invalid.
        let (baseline, _) = env
            .solve_step(&env.nominal.clone(), &env.zero_setpoints(), 0)
            .ok_or(EnvError::InitialPowerFlowDiverged)?;
        env.normalizer = StateNormalizer::new(&baseline, env.episode.horizon);
        env.state = baseline;
        Ok(env)
    }

    pub fn network(&self) -> &NetworkModel {
        &self.nominal
    }

    pub fn devices(&self) -> &DeviceSet {
        &self.devices
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn episode(&self) -> &EpisodeConfig {
        &self.episode
    }

    pub fn options(&self) -> &EnvOptions {
        &self.options
    }

    pub fn normalizer(&self) -> &StateNormalizer {
        &self.normalizer
    }

    /// Per-branch (r, x) scales of the hidden online model, if any.
    pub fn hidden_scales(&self) -> Option<&[(f64, f64)]> {
        self.hidden_scales.as_deref()
    }

    pub fn action_dim(&self) -> usize {
        self.devices.action_dim()
    }

    pub fn adversary_dim(&self) -> usize {
        2 * self.nominal.branches().len()
    }

    pub fn obs_dim(&self) -> usize {
        self.normalizer.feature_dim()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn state(&self) -> &VvcState {
        &self.state
    }

    fn zero_setpoints(&self) -> Setpoints {
        Setpoints {
            q_iber_mvar: vec![0.0; self.devices.iber.len()],
            q_svc_mvar: self
                .devices
                .svc
                .iter()
                .map(|d| 0.0f64.clamp(d.q_min_mvar, d.q_max_mvar))
                .collect(),
        }
    }

    /// Profile row in force at step index `t`.
    fn profile_at(&self, t: usize) -> (f64, Vec<f64>) {
        match &self.episode.profile {
            LoadProfile::Stationary => {
                (1.0, self.devices.iber.iter().map(|d| d.p_output_mw).collect())
            }
            LoadProfile::Steps(steps) => {
                let row = &steps[t.min(steps.len() - 1)];
                (row.load_mult, row.iber_p_mw.clone())
            }
        }
    }

    fn injections(&self, setpoints: &Setpoints, t: usize) -> Injections {
        let (mult, iber_p) = self.profile_at(t);
        let net = &self.nominal;
        let base = net.base_mva();
        let mut inj = Injections {
            p: net.buses().iter().map(|b| -b.p_load_mw * mult / base).collect(),
            q: net.buses().iter().map(|b| -b.q_load_mvar * mult / base).collect(),
        };
        for ((dev, &p_mw), &q_mvar) in
            self.devices.iber.iter().zip(&iber_p).zip(&setpoints.q_iber_mvar)
        {
            let pos = net.position(dev.bus).expect("validated");
            inj.p[pos] += p_mw / base;
            inj.q[pos] += q_mvar / base;
        }
        for (dev, &q_mvar) in self.devices.svc.iter().zip(&setpoints.q_svc_mvar) {
            let pos = net.position(dev.bus).expect("validated");
            inj.q[pos] += q_mvar / base;
        }
        inj
    }

    /// Solves one step on `net`; returns the realized state (with recovered
    /// slack injection) or `None` on divergence.
    fn solve_step(
        &self,
        net: &NetworkModel,
        setpoints: &Setpoints,
        t: usize,
    ) -> Option<(VvcState, (PowerFlowSolution, Injections))> {
        let inj = self.injections(setpoints, t);
        let sol = netcore::solve_power_flow(
            net,
            &inj,
            self.options.v_slack,
            self.options.tolerance,
            self.options.max_iterations,
        );
        if !sol.converged {
            return None;
        }
        let slack = net.slack_position();
        let (p_slack, q_slack) = netcore::slack_injection(net, &sol);
        let mut state = VvcState {
            p_inj: inj.p.clone(),
            q_inj: inj.q.clone(),
            v_mag: sol.v_mag.clone(),
            t,
        };
        state.p_inj[slack] = p_slack;
        state.q_inj[slack] = q_slack;
        Some((state, (sol, inj)))
    }

    /// Starts a new episode: step zero loads, devices at zero reactive
    /// output, power flow solved on the stage's base model.
    pub fn reset(&mut self, seed: u64) -> Result<VvcState, EnvError> {
        self.episode.seed = seed;
        self.t = 0;
        self.done = false;
        self.frozen_deltas = None;
        let base = self.hidden.clone().unwrap_or_else(|| self.nominal.clone());
        let (state, _) = self
            .solve_step(&base, &self.zero_setpoints(), 0)
            .ok_or(EnvError::InitialPowerFlowDiverged)?;
        self.state = state.clone();
        Ok(state)
    }

    fn advance(&mut self, net: &NetworkModel, action: &[f64]) -> StepResult {
        assert!(!self.done, "stepping a finished episode");
        let t_next = self.t + 1;
        let row = t_next.min(self.episode.horizon - 1);
        let (_, iber_p) = self.profile_at(row);
        let setpoints = self.devices.action_to_setpoints(action, &iber_p);
        match self.solve_step(net, &setpoints, row) {
            Some((mut state, (sol, inj))) => {
                state.t = t_next;
                let terms = compute_reward(net, &sol, &inj, &self.weights);
                self.t = t_next;
                self.state = state.clone();
                let done = if t_next >= self.episode.horizon {
                    self.done = true;
                    Some(DoneReason::Horizon)
                } else {
                    None
                };
                StepResult { state, reward: terms.reward, done, terms }
            }
            None => {
                // Divergence is a system failure: terminal, failure reward,
                // last valid observation with the step index advanced.
                self.t = t_next;
                self.done = true;
                let mut state = self.state.clone();
                state.t = t_next;
                self.state = state.clone();
                let terms = RewardTerms {
                    reward: self.weights.r_fail,
                    failed: true,
                    loss_mw: f64::NAN,
                    voltage_penalty: f64::NAN,
                };
                StepResult {
                    state,
                    reward: self.weights.r_fail,
                    done: Some(DoneReason::PowerFlowFailure),
                    terms,
                }
            }
        }
    }

    /// Single-player transition on the stage's base model (nominal offline,
    /// hidden model online).
    pub fn step_mdp(&mut self, action: &[f64]) -> StepResult {
        let net = self.hidden.clone().unwrap_or_else(|| self.nominal.clone());
        self.advance(&net, action)
    }

    /// Two-player transition: the adversary's deviations are applied to the
    /// nominal parameters first, then the step proceeds as in the MDP. The
    /// returned reward is the protagonist's; the adversary receives its
    /// negation implicitly (zero-sum).
    pub fn step_amdp(&mut self, action_p: &[f64], action_o: &[f64]) -> StepResult {
        assert!(self.adversarial, "step_amdp requires an adversarial environment");
        assert!(!self.done, "stepping a finished episode");
        let deltas = if self.options.freeze_adversary {
            if self.frozen_deltas.is_none() {
                self.frozen_deltas =
                    Some(adversary_to_parameters(action_o, &self.options.bounds, &self.nominal));
            }
            self.frozen_deltas.clone().unwrap()
        } else {
            adversary_to_parameters(action_o, &self.options.bounds, &self.nominal)
        };
        let (net, _) = self
            .nominal
            .apply_parameter_scaling(&deltas, self.options.bounds.scale_lo, self.options.bounds.scale_hi)
            .expect("deltas respect bounds by construction");
        self.advance(&net, action_p)
    }
}

#[cfg(test)]
mod tests;
