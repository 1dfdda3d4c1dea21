//! Backward/forward sweep power flow. Exploits the radial topology directly
//! and shares no code with the Newton-Raphson path, so the two solvers
//! cross-validate each other.

use super::{max_power_mismatch, Injections, NetworkModel, PowerFlowSolution};

#[derive(Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    fn conj(self) -> Complex {
        Complex::new(self.re, -self.im)
    }
    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Solves the same PQ problem as [`super::solve_power_flow`] by alternating
/// backward current accumulation and forward voltage updates along the tree.
/// Convergence is declared on the same per-bus power-mismatch test as the
/// Newton solver so the two report comparable residuals.
pub fn sweep_power_flow(
    net: &NetworkModel,
    inj: &Injections,
    v_slack: f64,
    tol: f64,
    max_iter: usize,
) -> PowerFlowSolution {
    let n = net.bus_count();
    let slack = net.slack_position();

    // Orient the tree away from the slack.
    let mut adjacency = vec![Vec::new(); n];
    for (bi, branch) in net.branches().iter().enumerate() {
        let f = net.position(branch.from).expect("validated");
        let t = net.position(branch.to).expect("validated");
        adjacency[f].push((t, bi));
        adjacency[t].push((f, bi));
    }
    let mut parent = vec![usize::MAX; n];
    let mut parent_branch = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::from([slack]);
    let mut seen = vec![false; n];
    seen[slack] = true;
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &(j, bi) in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                parent[j] = i;
                parent_branch[j] = bi;
                queue.push_back(j);
            }
        }
    }

    let mut v = vec![Complex::new(1.0, 0.0); n];
    v[slack] = Complex::new(v_slack, 0.0);

    let mut iterations = 0usize;
    let mut converged = false;
    let mut max_mismatch = f64::INFINITY;

    for _ in 0..=max_iter {
        let v_mag: Vec<f64> = v.iter().map(|c| c.abs()).collect();
        let v_ang: Vec<f64> = v.iter().map(|c| c.im.atan2(c.re)).collect();
        max_mismatch = max_power_mismatch(net, inj, &v_mag, &v_ang);
        if !max_mismatch.is_finite() {
            break;
        }
        if max_mismatch <= tol {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }

        // Backward: accumulate demanded current from the leaves to the root.
        let mut current = vec![Complex::new(0.0, 0.0); n];
        for &i in order.iter().rev() {
            let consumed = Complex::new(-inj.p[i], -inj.q[i]);
            let shunt = Complex::new(net.buses()[i].shunt_g, net.buses()[i].shunt_b);
            let mut acc = consumed.div(v[i]).conj().add(shunt.mul(v[i]));
            for &(j, _) in &adjacency[i] {
                if parent[j] == i {
                    acc = acc.add(current[j]);
                }
            }
            current[i] = acc;
        }
        // Forward: drop voltages from the root along each branch.
        let mut finite = true;
        for &i in order.iter().skip(1) {
            let branch = &net.branches()[parent_branch[i]];
            let z = Complex::new(branch.r, branch.x);
            v[i] = v[parent[i]].sub(z.mul(current[i]));
            finite &= v[i].re.is_finite() && v[i].im.is_finite();
            if v[i].abs() < 1e-6 {
                finite = false;
            }
        }
        iterations += 1;
        if !finite {
            converged = false;
            break;
        }
    }

    let v_mag = v.iter().map(|c| c.abs()).collect();
    let v_ang = v.iter().map(|c| c.im.atan2(c.re)).collect();
    PowerFlowSolution { v_mag, v_ang, converged, iterations, max_mismatch }
}
