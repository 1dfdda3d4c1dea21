use super::*;
use crate::netcore::{Branch, Bus, NetworkModel};
use proptest::prelude::*;

fn two_bus_net(p_load_mw: f64, q_load_mvar: f64) -> NetworkModel {
    NetworkModel::new(
        vec![Bus::load_only(0, 0.0, 0.0), Bus::load_only(1, p_load_mw, q_load_mvar)],
        vec![Branch { from: 0, to: 1, r: 0.01, x: 0.01 }],
        0,
        100.0,
        12.66,
    )
    .unwrap()
}

fn svc_only_devices(q_min: f64, q_max: f64) -> DeviceSet {
    DeviceSet { iber: vec![], svc: vec![Svc { bus: 1, q_min_mvar: q_min, q_max_mvar: q_max }] }
}

fn small_env(adversarial: bool) -> VvcEnv {
    VvcEnv::offline(
        two_bus_net(2.0, 1.0),
        svc_only_devices(0.0, 4.0),
        RewardWeights::default(),
        EpisodeConfig { horizon: 96, ..Default::default() },
        EnvOptions::default(),
        adversarial,
    )
    .unwrap()
}

#[test]
fn reset_is_deterministic_for_stationary_profiles() {
    let mut env = small_env(false);
    let s1 = env.reset(1).unwrap();
    let s2 = env.reset(2).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(s1.t, 0);
}

#[test]
fn zero_load_reset_is_flat() {
    let mut env = VvcEnv::offline(
        two_bus_net(0.0, 0.0),
        svc_only_devices(-1.0, 1.0),
        RewardWeights::default(),
        EpisodeConfig::default(),
        EnvOptions::default(),
        false,
    )
    .unwrap();
    let s = env.reset(0).unwrap();
    assert!(s.v_mag.iter().all(|&v| v == 1.0));
}

#[test]
fn state_vectors_match_bus_count() {
    let mut env = small_env(false);
    let s = env.reset(0).unwrap();
    assert_eq!(s.p_inj.len(), 2);
    assert_eq!(s.q_inj.len(), 2);
    assert_eq!(s.v_mag.len(), 2);
    assert_eq!(env.obs_dim(), 3 * 2 + 1);
    assert_eq!(env.normalizer().features(&s).len(), env.obs_dim());
}

#[test]
fn iber_midpoint_action_is_zero_reactive() {
    let devices = DeviceSet {
        iber: vec![IbEr { bus: 1, s_rated_mva: 4.5, p_output_mw: 2.7 }],
        svc: vec![],
    };
    let sp = devices.action_to_setpoints(&[0.0], &[2.7]);
    assert_eq!(sp.q_iber_mvar[0], 0.0);
}

#[test]
fn iber_full_action_hits_capability_limit() {
    let devices = DeviceSet {
        iber: vec![IbEr { bus: 1, s_rated_mva: 4.5, p_output_mw: 2.7 }],
        svc: vec![],
    };
    let sp = devices.action_to_setpoints(&[1.0], &[2.7]);
    assert!((sp.q_iber_mvar[0] - 3.6).abs() < 1e-12);
}

#[test]
fn svc_low_action_hits_lower_bound() {
    let devices = svc_only_devices(0.0, 4.0);
    let sp = devices.action_to_setpoints(&[-1.0], &[]);
    assert_eq!(sp.q_svc_mvar[0], 0.0);
}

#[test]
fn setpoint_round_trip() {
    let devices = DeviceSet {
        iber: vec![IbEr { bus: 1, s_rated_mva: 4.5, p_output_mw: 2.7 }],
        svc: vec![Svc { bus: 0, q_min_mvar: -1.0, q_max_mvar: 3.0 }],
    };
    let action = vec![0.37, -0.52];
    let sp = devices.action_to_setpoints(&action, &[2.7]);
    let back = devices.setpoints_to_action(&sp, &[2.7]);
    for (a, b) in action.iter().zip(&back) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn neutral_adversary_action_leaves_parameters_alone() {
    let net = two_bus_net(2.0, 1.0);
    let deltas = adversary_to_parameters(&[0.0, 0.0], &AdversaryBounds::default(), &net);
    assert_eq!(deltas, vec![(0.0, 0.0)]);
}

#[test]
fn extreme_adversary_actions_hit_range_ends() {
    let net = two_bus_net(2.0, 1.0);
    let r0 = net.branches()[0].r;
    let x0 = net.branches()[0].x;
    let up = adversary_to_parameters(&[1.0, 1.0], &AdversaryBounds::default(), &net);
    assert!((up[0].0 - r0).abs() < 1e-15, "kappa = 2 doubles r");
    assert!((up[0].1 - x0).abs() < 1e-15);
    let down = adversary_to_parameters(&[-1.0, -1.0], &AdversaryBounds::default(), &net);
    assert!((down[0].0 + 0.5 * r0).abs() < 1e-15, "kappa = 0.5 halves r");
    assert!((down[0].1 + 0.5 * x0).abs() < 1e-15);
}

#[test]
fn reward_is_negative_loss_when_voltages_are_legal() {
    let net = two_bus_net(2.0, 1.0);
    let inj = crate::netcore::Injections::from_loads(&net);
    let sol = crate::netcore::solve_power_flow(&net, &inj, 1.0, 1e-10, 30);
    assert!(sol.converged);
    let terms = compute_reward(&net, &sol, &inj, &RewardWeights::default());
    assert!(!terms.failed);
    assert_eq!(terms.voltage_penalty, 0.0);
    // Dual route: the reward magnitude is the branch-current loss.
    let branch_loss = crate::netcore::branch_loss_mw(&net, &sol);
    assert!((terms.reward + branch_loss).abs() < 1e-8);
}

#[test]
fn voltage_penalty_quadratic_excursion() {
    let w = RewardWeights::default();
    let rv = voltage_penalty(&[1.06], &w);
    assert!((rv + 1e-4).abs() < 1e-12, "(1.06 - 1.05)^2 = 1e-4");
    assert_eq!(voltage_penalty(&[1.0, 0.95, 1.05], &w), 0.0);
    let rv_low = voltage_penalty(&[0.93], &w);
    assert!((rv_low + 4e-4).abs() < 1e-12);
}

#[test]
fn diverged_solution_gets_failure_reward() {
    let net = two_bus_net(2.0, 1.0);
    let mut inj = crate::netcore::Injections::from_loads(&net);
    inj.p[1] = -60.0;
    let sol = crate::netcore::solve_power_flow(&net, &inj, 1.0, 1e-8, 30);
    assert!(!sol.converged);
    let terms = compute_reward(&net, &sol, &inj, &RewardWeights::default());
    assert!(terms.failed);
    assert_eq!(terms.reward, -300.0);
}

#[test]
fn horizon_terminates_episode() {
    let mut env = small_env(false);
    env.reset(0).unwrap();
    let mut last_done = None;
    for t in 1..=96 {
        let r = env.step_mdp(&[0.0]);
        assert_eq!(r.state.t, t);
        last_done = r.done;
        if t < 96 {
            assert_eq!(r.done, None);
        }
    }
    assert_eq!(last_done, Some(DoneReason::Horizon));
    assert!(env.is_done());
}

#[test]
#[should_panic(expected = "finished episode")]
fn stepping_a_finished_episode_panics() {
    let mut env = VvcEnv::offline(
        two_bus_net(2.0, 1.0),
        svc_only_devices(0.0, 4.0),
        RewardWeights::default(),
        EpisodeConfig { horizon: 1, ..Default::default() },
        EnvOptions::default(),
        false,
    )
    .unwrap();
    env.reset(0).unwrap();
    env.step_mdp(&[0.0]);
    env.step_mdp(&[0.0]);
}

#[test]
fn overload_step_fails_and_terminates() {
    let mut env = VvcEnv::offline(
        two_bus_net(2.0, 1.0),
        svc_only_devices(0.0, 4.0),
        RewardWeights::default(),
        EpisodeConfig {
            horizon: 96,
            profile: LoadProfile::Steps(vec![
                ProfileStep { load_mult: 1.0, iber_p_mw: vec![] },
                ProfileStep { load_mult: 3000.0, iber_p_mw: vec![] },
            ]),
            ..Default::default()
        },
        EnvOptions::default(),
        false,
    )
    .unwrap();
    env.reset(0).unwrap();
    let r = env.step_mdp(&[0.0]);
    assert_eq!(r.reward, -300.0);
    assert_eq!(r.done, Some(DoneReason::PowerFlowFailure));
    assert!(r.terms.failed);
}

#[test]
fn zero_capability_devices_cannot_move_the_network() {
    let devices = DeviceSet {
        iber: vec![IbEr { bus: 1, s_rated_mva: 1.0, p_output_mw: 1.0 }],
        svc: vec![],
    };
    let mut env = VvcEnv::offline(
        two_bus_net(2.0, 1.0),
        devices,
        RewardWeights::default(),
        EpisodeConfig::default(),
        EnvOptions::default(),
        false,
    )
    .unwrap();
    env.reset(0).unwrap();
    let controlled = env.step_mdp(&[0.9]);
    env.reset(0).unwrap();
    let neutral = env.step_mdp(&[0.0]);
    assert_eq!(controlled.state.v_mag, neutral.state.v_mag);
}

#[test]
fn neutral_adversary_matches_mdp_transition() {
    let mut amdp = small_env(true);
    amdp.reset(0).unwrap();
    let joint = amdp.step_amdp(&[0.3], &[0.0, 0.0]);

    let mut mdp = small_env(false);
    mdp.reset(0).unwrap();
    let single = mdp.step_mdp(&[0.3]);

    assert_eq!(joint.state, single.state);
    assert_eq!(joint.reward, single.reward);
}

#[test]
fn raising_resistance_raises_loss_and_changes_reward() {
    let mut env = small_env(true);
    env.reset(0).unwrap();
    let neutral = env.step_amdp(&[0.0], &[0.0, 0.0]);
    env.reset(0).unwrap();
    let raised = env.step_amdp(&[0.0], &[1.0, 0.0]);
    assert!(raised.terms.loss_mw > neutral.terms.loss_mw, "doubling r must raise loss");
    assert_ne!(raised.reward, neutral.reward, "the adversary action matters");
    // Zero-sum bookkeeping: the adversary's implicit return negates the
    // protagonist's on every step.
    assert_eq!(raised.reward + -raised.reward, 0.0);
}

#[test]
fn frozen_adversary_reuses_first_deviation() {
    let opts = EnvOptions { freeze_adversary: true, ..Default::default() };
    let mut env = VvcEnv::offline(
        two_bus_net(2.0, 1.0),
        svc_only_devices(0.0, 4.0),
        RewardWeights::default(),
        EpisodeConfig::default(),
        opts,
        true,
    )
    .unwrap();
    env.reset(0).unwrap();
    let first = env.step_amdp(&[0.0], &[1.0, 1.0]);
    // Second step passes a neutral action, but the frozen deviation applies.
    let second = env.step_amdp(&[0.0], &[0.0, 0.0]);
    assert_eq!(first.terms.loss_mw, second.terms.loss_mw);

    env.reset(0).unwrap();
    let after_reset = env.step_amdp(&[0.0], &[0.0, 0.0]);
    assert!(after_reset.terms.loss_mw < first.terms.loss_mw, "reset clears the freeze");
}

#[test]
fn infeasible_rest_configuration_is_a_construction_error() {
    let err = VvcEnv::offline(
        two_bus_net(6000.0, 3000.0),
        svc_only_devices(0.0, 4.0),
        RewardWeights::default(),
        EpisodeConfig::default(),
        EnvOptions::default(),
        false,
    )
    .err();
    assert_eq!(err, Some(EnvError::InitialPowerFlowDiverged));
}

#[test]
fn trajectories_are_bit_for_bit_reproducible() {
    let run = || {
        let mut env = small_env(false);
        env.reset(7).unwrap();
        let mut rewards = Vec::new();
        for k in 0..20 {
            let a = ((k as f64) / 10.0).sin();
            rewards.push(env.step_mdp(&[a]).reward);
        }
        rewards
    };
    assert_eq!(run(), run());
}

#[test]
fn reward_decomposition_holds_on_every_non_failure_step() {
    let mut env = small_env(false);
    env.reset(0).unwrap();
    for k in 0..10 {
        let r = env.step_mdp(&[(k as f64 / 5.0) - 1.0]);
        assert!(!r.terms.failed);
        let recomposed = -r.terms.loss_mw + env.weights().c_v * r.terms.voltage_penalty;
        assert!((r.reward - recomposed).abs() < 1e-12);
    }
}

#[test]
fn device_validation_rejects_shared_and_unknown_buses() {
    let net = two_bus_net(2.0, 1.0);
    let shared = DeviceSet {
        iber: vec![IbEr { bus: 1, s_rated_mva: 2.0, p_output_mw: 1.0 }],
        svc: vec![Svc { bus: 1, q_min_mvar: 0.0, q_max_mvar: 1.0 }],
    };
    assert_eq!(shared.validate(&net), Err(EnvError::SharedDeviceBus(1)));
    let unknown = svc_only_devices(0.0, 1.0);
    let mut unknown = unknown;
    unknown.svc[0].bus = 9;
    assert_eq!(unknown.validate(&net), Err(EnvError::UnknownDeviceBus(9)));
}

proptest! {
    #[test]
    fn decoded_setpoints_stay_within_device_limits(
        a1 in -1.0f64..=1.0,
        a2 in -1.0f64..=1.0,
        p in 0.0f64..=4.5,
    ) {
        let devices = DeviceSet {
            iber: vec![IbEr { bus: 1, s_rated_mva: 4.5, p_output_mw: p }],
            svc: vec![Svc { bus: 0, q_min_mvar: -0.5, q_max_mvar: 3.0 }],
        };
        let sp = devices.action_to_setpoints(&[a1, a2], &[p]);
        let limit = devices.iber[0].q_limit_mvar(p);
        prop_assert!(sp.q_iber_mvar[0].abs() <= limit + 1e-12);
        prop_assert!(sp.q_svc_mvar[0] >= -0.5 - 1e-12 && sp.q_svc_mvar[0] <= 3.0 + 1e-12);
    }

    #[test]
    fn voltage_penalty_is_zero_exactly_inside_limits(v in 0.8f64..=1.2) {
        let w = RewardWeights::default();
        let rv = voltage_penalty(&[v], &w);
        if (w.v_lo..=w.v_hi).contains(&v) {
            prop_assert_eq!(rv, 0.0);
        } else {
            prop_assert!(rv < 0.0);
        }
    }
}
