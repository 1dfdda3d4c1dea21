use super::policy::SQUASH_EPS;
use super::*;
use ndarray::{arr1, arr2, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// True when every hidden pre-activation of `net` on `x` is clear of the
/// ReLU kink, so central differences are valid.
fn clear_of_kinks(net: &DenseNet, x: ArrayView2<f64>) -> bool {
    let mut h = x.to_owned();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let z = h.dot(&layer.w) + &layer.b;
        if l < last {
            if z.iter().any(|v| v.abs() < 1e-3) {
                return false;
            }
            h = z.mapv(|v| v.max(0.0));
        }
    }
    true
}

fn directional_fd(loss: impl Fn(&DenseNet) -> f64, net: &DenseNet, dir: &NetGrads) -> f64 {
    let mut plus = net.clone();
    plus.add_scaled(dir, FD_H);
    let mut minus = net.clone();
    minus.add_scaled(dir, -FD_H);
    (loss(&plus) - loss(&minus)) / (2.0 * FD_H)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn zero_network_outputs_zero() {
    let mut r = rng(0);
    let mut net = DenseNet::new(&[3, 4, 2], 1.0, &mut r);
    for layer in net.layers_mut() {
        layer.w.fill(0.0);
        layer.b.fill(0.0);
    }
    let x = arr2(&[[1.0, -2.0, 3.0]]);
    let y = net.output(x.view());
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn identity_layer_passes_input_through() {
    let mut r = rng(0);
    let mut net = DenseNet::new(&[3, 3], 1.0, &mut r);
    net.layers_mut()[0].w = Array2::eye(3);
    net.layers_mut()[0].b = Array1::zeros(3);
    let x = arr2(&[[0.5, -1.5, 2.0]]);
    assert_eq!(net.output(x.view()), x);
}

#[test]
fn zero_output_grad_gives_zero_param_grads() {
    let mut r = rng(1);
    let net = DenseNet::new(&[3, 5, 2], 1.0, &mut r);
    let x = standard_normal(&mut r, 4, 3);
    let (_, cache) = net.forward(x.view());
    let (grads, dx) = net.backward(&cache, Array2::zeros((4, 2)).view());
    assert!(grads.layers.iter().all(|(w, b)| w.iter().all(|&v| v == 0.0) && b.iter().all(|&v| v == 0.0)));
    assert!(dx.iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_linear_grad_is_input_times_output_grad() {
    let mut r = rng(2);
    let mut net = DenseNet::new(&[1, 1], 1.0, &mut r);
    net.layers_mut()[0].w[(0, 0)] = 0.7;
    net.layers_mut()[0].b[0] = 0.0;
    let x = arr2(&[[3.0]]);
    let (_, cache) = net.forward(x.view());
    let (grads, dx) = net.backward(&cache, arr2(&[[2.0]]).view());
    assert!((grads.layers[0].0[(0, 0)] - 6.0).abs() < 1e-12); // x * dy
    assert!((grads.layers[0].1[0] - 2.0).abs() < 1e-12);
    assert!((dx[(0, 0)] - 1.4).abs() < 1e-12); // w * dy
}

#[test]
fn backward_matches_finite_differences_over_random_nets() {
    let mut r = rng(3);
    let mut checked = 0;
    while checked < 100 {
        let dims = [
            r.random_range(1..5usize),
            r.random_range(2..8),
            r.random_range(2..8),
            r.random_range(1..4),
        ];
        let net = DenseNet::new(&dims, 1.0, &mut r);
        let batch = r.random_range(1..5);
        let x = standard_normal(&mut r, batch, dims[0]);
        if !clear_of_kinks(&net, x.view()) {
            continue;
        }
        // Scalar loss: fixed random weighting of the outputs.
        let w_out = standard_normal(&mut r, batch, dims[3]);
        let loss = |n: &DenseNet| (n.output(x.view()) * &w_out).sum();
        let (_, cache) = net.forward(x.view());
        let (grads, _) = net.backward(&cache, w_out.view());
        let dir = NetGrads::random_like(&net, &mut r);
        let fd = directional_fd(loss, &net, &dir);
        let analytic = grads.dot(&dir);
        assert!(
            rel_err(analytic, fd) < FD_TOL,
            "config {checked}: analytic {analytic} vs fd {fd}"
        );
        checked += 1;
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut r = rng(4);
    let net = DenseNet::new(&[3, 6, 2], 1.0, &mut r);
    let x = standard_normal(&mut r, 2, 3);
    assert!(clear_of_kinks(&net, x.view()));
    let w_out = standard_normal(&mut r, 2, 2);
    let (_, cache) = net.forward(x.view());
    let dx = net.backward_input(&cache, w_out.view());
    let dir = standard_normal(&mut r, 2, 3);
    let mut xp = x.clone();
    xp.scaled_add(FD_H, &dir);
    let mut xm = x.clone();
    xm.scaled_add(-FD_H, &dir);
    let fd = ((net.output(xp.view()) * &w_out).sum() - (net.output(xm.view()) * &w_out).sum())
        / (2.0 * FD_H);
    let analytic = (&dx * &dir).sum();
    assert!(rel_err(analytic, fd) < FD_TOL);
}

#[test]
fn adam_leaves_params_alone_on_zero_gradient() {
    let mut r = rng(5);
    let mut net = DenseNet::new(&[2, 3, 1], 1.0, &mut r);
    let before = net.clone();
    let mut opt = Adam::new(&net, 1e-3);
    let zeros = NetGrads::zeros_like(&net);
    opt.step(&mut net, &zeros).unwrap();
    for (a, b) in net.layers().iter().zip(before.layers()) {
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
    }
}

#[test]
fn adam_first_step_magnitude_is_learning_rate() {
    let mut r = rng(6);
    let mut net = DenseNet::new(&[2, 2], 1.0, &mut r);
    let before = net.clone();
    let mut opt = Adam::new(&net, 1e-3);
    let mut grads = NetGrads::zeros_like(&net);
    grads.layers[0].0.fill(0.37);
    grads.layers[0].1.fill(-0.37);
    opt.step(&mut net, &grads).unwrap();
    for (a, b) in net.layers().iter().zip(before.layers()) {
        for (pa, pb) in a.w.iter().zip(b.w.iter()) {
            assert!(((pa - pb).abs() - 1e-3).abs() < 1e-9);
        }
        for (pa, pb) in a.b.iter().zip(b.b.iter()) {
            assert!(((pa - pb).abs() - 1e-3).abs() < 1e-9);
        }
    }
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut r = rng(7);
    let mut net = DenseNet::new(&[2, 2], 1.0, &mut r);
    let before = net.clone();
    let mut opt = Adam::new(&net, 1e-3);
    let mut grads = NetGrads::zeros_like(&net);
    grads.layers[0].0[(0, 0)] = f64::NAN;
    assert_eq!(
        opt.step(&mut net, &grads),
        Err(NeuralError::NonFiniteGradient { layer: 0 })
    );
    assert_eq!(net.layers()[0].w, before.layers()[0].w);
}

#[test]
fn adam_runs_are_deterministic() {
    let run = || {
        let mut r = rng(8);
        let mut net = DenseNet::new(&[3, 8, 1], 1.0, &mut r);
        let mut opt = Adam::new(&net, 1e-3);
        let x = standard_normal(&mut r, 16, 3);
        for _ in 0..20 {
            let (y, cache) = net.forward(x.view());
            let (grads, _) = net.backward(&cache, (&y * (2.0 / 16.0)).view());
            opt.step(&mut net, &grads).unwrap();
        }
        net
    };
    let (a, b) = (run(), run());
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        assert_eq!(la.w, lb.w);
        assert_eq!(la.b, lb.b);
    }
}

/// Policy head with a single linear layer and hand-set mean / log-std biases.
fn fixed_head(mu: f64, sigma: f64) -> PolicyNet {
    let mut r = rng(9);
    let mut head = PolicyNet::new(1, &[], 1, &mut r);
    head.net_mut().layers_mut()[0].w.fill(0.0);
    head.net_mut().layers_mut()[0].b[0] = mu;
    head.net_mut().layers_mut()[0].b[1] = sigma.ln();
    head
}

#[test]
fn zero_mean_zero_noise_yields_zero_action() {
    let head = fixed_head(0.0, 1e-9);
    let obs = arr2(&[[0.0]]);
    let sample = head.sample(obs.view(), arr2(&[[0.7]]).view());
    assert!(sample.action[(0, 0)].abs() < 1e-8);
}

#[test]
fn log_prob_at_origin_matches_gaussian_constant() {
    let head = fixed_head(0.0, 1.0);
    let obs = arr2(&[[0.0]]);
    let sample = head.sample(obs.view(), arr2(&[[0.0]]).view());
    // -0.5 ln(2 pi): the squash correction vanishes at action zero.
    assert!((sample.log_prob[0] - (-0.918_938_5)).abs() < 1e-4);
}

#[test]
fn squashed_density_integrates_to_one() {
    let head = fixed_head(0.3, 0.8);
    let obs = arr1(&[0.0]);
    // Simpson's rule on (-1, 1); the density vanishes at the endpoints.
    let n = 20_000usize;
    let a0 = -1.0 + 1e-9;
    let h = (1.0 - 1e-9 - a0) / n as f64;
    let density = |a: f64| head.log_prob(obs.view(), arr1(&[a]).view()).0.exp();
    let mut integral = density(a0) + density(a0 + n as f64 * h);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * density(a0 + k as f64 * h);
    }
    integral *= h / 3.0;
    assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
}

#[test]
fn sample_and_log_prob_agree() {
    let mut r = rng(10);
    let head = PolicyNet::new(3, &[8], 2, &mut r);
    let obs = standard_normal(&mut r, 5, 3);
    let noise = standard_normal(&mut r, 5, 2);
    let sample = head.sample(obs.view(), noise.view());
    for b in 0..5 {
        let (lp, clamped) = head.log_prob(obs.row(b), sample.action.row(b));
        assert!(!clamped);
        assert!((lp - sample.log_prob[b]).abs() < 1e-10);
    }
}

#[test]
fn symmetric_head_has_symmetric_density() {
    let head = fixed_head(0.0, 0.7);
    let obs = arr1(&[0.0]);
    for &a in &[0.1, 0.4, 0.8] {
        let (lp_pos, _) = head.log_prob(obs.view(), arr1(&[a]).view());
        let (lp_neg, _) = head.log_prob(obs.view(), arr1(&[-a]).view());
        assert!((lp_pos - lp_neg).abs() < 1e-12);
    }
}

#[test]
fn density_decays_with_action_magnitude_at_small_sigma() {
    let head = fixed_head(0.0, 0.3);
    let obs = arr1(&[0.0]);
    let mut last = f64::INFINITY;
    for k in 0..9 {
        let a = 0.1 * k as f64;
        let (lp, _) = head.log_prob(obs.view(), arr1(&[a]).view());
        assert!(lp < last, "log density must fall with |action|");
        last = lp;
    }
}

#[test]
fn boundary_action_is_clamped_and_flagged() {
    let head = fixed_head(0.0, 1.0);
    let (lp, clamped) = head.log_prob(arr1(&[0.0]).view(), arr1(&[1.0]).view());
    assert!(clamped);
    assert!(lp.is_finite());
}

#[test]
fn entropy_grows_with_sigma() {
    let mut r = rng(11);
    let obs = arr1(&[0.0]);
    let mut last = f64::NEG_INFINITY;
    for &sigma in &[0.3, 0.6, 1.2] {
        let head = fixed_head(0.0, sigma);
        let n = 10_000;
        let obs_b = Array2::zeros((n, 1));
        let noise = standard_normal(&mut r, n, 1);
        let sample = head.sample(obs_b.view(), noise.view());
        let entropy = -sample.log_prob.mean().unwrap();
        assert!(entropy > last, "entropy must grow with sigma (obs {obs:?})");
        last = entropy;
    }
}

#[test]
fn policy_gradients_match_finite_differences() {
    let mut r = rng(12);
    let mut checked = 0;
    while checked < 100 {
        let obs_dim = r.random_range(1..4usize);
        let act_dim = r.random_range(1..3usize);
        let hidden = [r.random_range(2..6usize)];
        let head = PolicyNet::new(obs_dim, &hidden, act_dim, &mut r);
        let batch = r.random_range(1..4);
        let obs = standard_normal(&mut r, batch, obs_dim);
        if !clear_of_kinks(head.net(), obs.view()) {
            continue;
        }
        let noise = standard_normal(&mut r, batch, act_dim);
        let ca = standard_normal(&mut r, batch, act_dim);
        let clp = standard_normal(&mut r, batch, 1).column(0).to_owned();

        // Loss: sum(ca * action) + sum(clp * log_prob) at fixed noise.
        let eval = |p: &PolicyNet| {
            let s = p.sample(obs.view(), noise.view());
            (&s.action * &ca).sum() + (&s.log_prob * &clp).sum()
        };
        let sample = head.sample(obs.view(), noise.view());
        let grads = head.backward(&sample, ca.view(), clp.view());
        let dir = NetGrads::random_like(head.net(), &mut r);
        let mut plus = head.clone();
        plus.net_mut().add_scaled(&dir, FD_H);
        let mut minus = head.clone();
        minus.net_mut().add_scaled(&dir, -FD_H);
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_H);
        let analytic = grads.dot(&dir);
        assert!(
            rel_err(analytic, fd) < FD_TOL,
            "config {checked}: analytic {analytic} vs fd {fd}"
        );
        checked += 1;
    }
}

#[test]
fn empty_action_space_is_degenerate_but_valid() {
    let mut r = rng(13);
    let head = PolicyNet::new(2, &[4], 0, &mut r);
    let obs = standard_normal(&mut r, 3, 2);
    let noise = Array2::zeros((3, 0));
    let sample = head.sample(obs.view(), noise.view());
    assert_eq!(sample.action.dim(), (3, 0));
    assert!(sample.log_prob.iter().all(|&lp| lp == 0.0));
}

#[test]
fn squash_epsilon_is_the_documented_value() {
    assert_eq!(SQUASH_EPS, 1e-6);
}
