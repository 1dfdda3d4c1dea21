//! Balanced radial network model and exact power-flow solvers.
//!
//! All internal arithmetic is in per-unit on the network's MVA base; megawatt
//! values appear only at the conversion helpers. Solutions are plain value
//! objects and every function here is pure, so instances can be shared freely
//! across threads.

mod linalg;
mod newton;
mod sweep;

pub use newton::solve_power_flow;
pub use sweep::sweep_power_flow;

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("branch {from}-{to} has zero impedance")]
    ZeroImpedance { from: usize, to: usize },
    #[error("branch {from}-{to} has negative resistance or reactance")]
    NegativeImpedance { from: usize, to: usize },
    #[error("branch {from}-{to} references an unknown bus")]
    UnknownBus { from: usize, to: usize },
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("slack bus {0} not present in bus table")]
    MissingSlack(usize),
    #[error("network is not a tree: {buses} buses require {} branches, found {branches}", buses - 1)]
    NotATree { buses: usize, branches: usize },
    #[error("network is not connected: bus {0} unreachable from the slack")]
    Disconnected(usize),
    #[error("bus {0} has a non-finite load or shunt")]
    NonFiniteBusData(usize),
    #[error("operation requires a converged power-flow solution")]
    Unconverged,
    #[error("expected {expected} per-branch deltas, got {got}")]
    DeltaLength { expected: usize, got: usize },
}

/// A network node. Loads are in MW / MVAr, shunt admittance in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub p_load_mw: f64,
    pub q_load_mvar: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

impl Bus {
    pub fn load_only(id: usize, p_load_mw: f64, q_load_mvar: f64) -> Self {
        Bus { id, p_load_mw, q_load_mvar, shunt_g: 0.0, shunt_b: 0.0 }
    }
}

/// A series branch between two buses, impedance in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

/// Series admittance g + jb = 1 / (r + jx) of a branch.
pub fn branch_admittance(branch: &Branch) -> Result<(f64, f64), NetworkError> {
    let d = branch.r * branch.r + branch.x * branch.x;
    if d == 0.0 {
        return Err(NetworkError::ZeroImpedance { from: branch.from, to: branch.to });
    }
    Ok((branch.r / d, -branch.x / d))
}

/// A validated radial network: a tree of branches rooted at the slack bus.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    slack_id: usize,
    base_mva: f64,
    base_kv: f64,
    index: HashMap<usize, usize>,
}

impl NetworkModel {
    /// Validates radial operation: unique bus ids, exactly |buses|-1 branches,
    /// every bus reachable from the slack, and nonzero branch impedances.
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        slack_id: usize,
        base_mva: f64,
        base_kv: f64,
    ) -> Result<Self, NetworkError> {
        let mut index = HashMap::with_capacity(buses.len());
        for (pos, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, pos).is_some() {
                return Err(NetworkError::DuplicateBus(bus.id));
            }
            let finite = [bus.p_load_mw, bus.q_load_mvar, bus.shunt_g, bus.shunt_b]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(NetworkError::NonFiniteBusData(bus.id));
            }
        }
        if !index.contains_key(&slack_id) {
            return Err(NetworkError::MissingSlack(slack_id));
        }
        if branches.len() + 1 != buses.len() {
            return Err(NetworkError::NotATree { buses: buses.len(), branches: branches.len() });
        }
        let mut adjacency = vec![Vec::new(); buses.len()];
        for branch in &branches {
            if branch.r < 0.0 || branch.x < 0.0 {
                return Err(NetworkError::NegativeImpedance { from: branch.from, to: branch.to });
            }
            branch_admittance(branch)?;
            let (Some(&f), Some(&t)) = (index.get(&branch.from), index.get(&branch.to)) else {
                return Err(NetworkError::UnknownBus { from: branch.from, to: branch.to });
            };
            if f == t {
                return Err(NetworkError::NotATree { buses: buses.len(), branches: branches.len() });
            }
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
        // With |E| = |N|-1, full reachability from the slack implies a tree.
        let mut seen = vec![false; buses.len()];
        let mut stack = vec![index[&slack_id]];
        seen[index[&slack_id]] = true;
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(NetworkError::Disconnected(buses[pos].id));
        }
        Ok(NetworkModel { buses, branches, slack_id, base_mva, base_kv, index })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn slack_id(&self) -> usize {
        self.slack_id
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in the bus table.
    pub fn position(&self, bus_id: usize) -> Option<usize> {
        self.index.get(&bus_id).copied()
    }

    pub fn slack_position(&self) -> usize {
        self.index[&self.slack_id]
    }

    /// Nodal admittance matrix (G, B) as dense row-major n*n slabs,
    /// including bus shunt admittances on the diagonal.
    pub(crate) fn admittance_matrix(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.buses.len();
        let mut g = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for (pos, bus) in self.buses.iter().enumerate() {
            g[pos * n + pos] += bus.shunt_g;
            b[pos * n + pos] += bus.shunt_b;
        }
        for branch in &self.branches {
            let (gb, bb) = branch_admittance(branch).expect("validated at construction");
            let f = self.index[&branch.from];
            let t = self.index[&branch.to];
            g[f * n + f] += gb;
            b[f * n + f] += bb;
            g[t * n + t] += gb;
            b[t * n + t] += bb;
            g[f * n + t] -= gb;
            b[f * n + t] -= bb;
            g[t * n + f] -= gb;
            b[t * n + f] -= bb;
        }
        (g, b)
    }

    /// Returns a copy with per-branch additive deltas applied to (r, x),
    /// clamped to `[scale_lo, scale_hi]` times the nominal value. The second
    /// element counts clamped coordinates so callers can surface it.
    pub fn apply_parameter_scaling(
        &self,
        deltas: &[(f64, f64)],
        scale_lo: f64,
        scale_hi: f64,
    ) -> Result<(NetworkModel, usize), NetworkError> {
        if deltas.len() != self.branches.len() {
            return Err(NetworkError::DeltaLength {
                expected: self.branches.len(),
                got: deltas.len(),
            });
        }
        let mut clamped = 0usize;
        let mut apply = |nominal: f64, delta: f64| -> f64 {
            let lo = scale_lo * nominal;
            let hi = scale_hi * nominal;
            let v = nominal + delta;
            if v < lo {
                clamped += 1;
                lo
            } else if v > hi {
                clamped += 1;
                hi
            } else {
                v
            }
        };
        let branches = self
            .branches
            .iter()
            .zip(deltas)
            .map(|(br, &(dr, dx))| Branch {
                from: br.from,
                to: br.to,
                r: apply(br.r, dr),
                x: apply(br.x, dx),
            })
            .collect();
        let net = NetworkModel::new(
            self.buses.clone(),
            branches,
            self.slack_id,
            self.base_mva,
            self.base_kv,
        )?;
        Ok((net, clamped))
    }
}

/// Per-bus net power injections in per-unit, aligned with the bus table.
/// The slack entry is ignored by the solvers; the slack balances the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Injections { p: vec![0.0; n], q: vec![0.0; n] }
    }

    /// Injections from the network's own loads only (consumption is negative).
    pub fn from_loads(net: &NetworkModel) -> Self {
        let p = net.buses.iter().map(|b| -b.p_load_mw / net.base_mva).collect();
        let q = net.buses.iter().map(|b| -b.q_load_mvar / net.base_mva).collect();
        Injections { p, q }
    }
}

/// Voltage solution of a power-flow run. `converged == false` is a valid,
/// reportable outcome (the RL environment maps it to the failure reward),
/// never an error.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

/// Net complex power drawn from the network at bus position `pos`, computed
/// from the voltage solution through the admittance matrix.
pub(crate) fn calculated_power(
    g: &[f64],
    b: &[f64],
    v_mag: &[f64],
    v_ang: &[f64],
    pos: usize,
) -> (f64, f64) {
    let n = v_mag.len();
    let mut p = 0.0;
    let mut q = 0.0;
    for j in 0..n {
        let gij = g[pos * n + j];
        let bij = b[pos * n + j];
        if gij == 0.0 && bij == 0.0 {
            continue;
        }
        let theta = v_ang[pos] - v_ang[j];
        let (s, c) = theta.sin_cos();
        p += v_mag[j] * (gij * c + bij * s);
        q += v_mag[j] * (gij * s - bij * c);
    }
    (v_mag[pos] * p, v_mag[pos] * q)
}

/// Largest per-bus power mismatch (per-unit) of a candidate solution against
/// the specified injections, slack excluded.
pub fn max_power_mismatch(net: &NetworkModel, inj: &Injections, v_mag: &[f64], v_ang: &[f64]) -> f64 {
    let (g, b) = net.admittance_matrix();
    let slack = net.slack_position();
    let mut worst: f64 = 0.0;
    for pos in 0..net.bus_count() {
        if pos == slack {
            continue;
        }
        let (p, q) = calculated_power(&g, &b, v_mag, v_ang, pos);
        worst = worst.max((inj.p[pos] - p).abs()).max((inj.q[pos] - q).abs());
    }
    worst
}

/// Total active power loss in MW as the sum of nodal injections, with the
/// slack injection recovered from the solution.
pub fn total_loss_mw(
    net: &NetworkModel,
    sol: &PowerFlowSolution,
    inj: &Injections,
) -> Result<f64, NetworkError> {
    if !sol.converged {
        return Err(NetworkError::Unconverged);
    }
    let (g, b) = net.admittance_matrix();
    let slack = net.slack_position();
    let (p_slack, _) = calculated_power(&g, &b, &sol.v_mag, &sol.v_ang, slack);
    let mut loss_pu = p_slack;
    for pos in 0..net.bus_count() {
        if pos != slack {
            loss_pu += inj.p[pos];
        }
    }
    Ok(loss_pu * net.base_mva)
}

/// Reactive power drawn through the slack bus, in per-unit.
pub fn slack_injection(net: &NetworkModel, sol: &PowerFlowSolution) -> (f64, f64) {
    let (g, b) = net.admittance_matrix();
    calculated_power(&g, &b, &sol.v_mag, &sol.v_ang, net.slack_position())
}

/// Active loss in MW summed branch by branch (|I|^2 r plus shunt conductance
/// dissipation). Algebraically dual to [`total_loss_mw`]; the two routes must
/// agree on every converged solution.
pub fn branch_loss_mw(net: &NetworkModel, sol: &PowerFlowSolution) -> f64 {
    let mut loss_pu = 0.0;
    for branch in &net.branches {
        let f = net.position(branch.from).expect("validated");
        let t = net.position(branch.to).expect("validated");
        let (vf, af) = (sol.v_mag[f], sol.v_ang[f]);
        let (vt, at) = (sol.v_mag[t], sol.v_ang[t]);
        // |V_f - V_t|^2 in rectangular coordinates.
        let dre = vf * af.cos() - vt * at.cos();
        let dim = vf * af.sin() - vt * at.sin();
        let dv2 = dre * dre + dim * dim;
        let z2 = branch.r * branch.r + branch.x * branch.x;
        loss_pu += dv2 / z2 * branch.r;
    }
    for (pos, bus) in net.buses.iter().enumerate() {
        loss_pu += bus.shunt_g * sol.v_mag[pos] * sol.v_mag[pos];
    }
    loss_pu * net.base_mva
}
