//! Newton-Raphson power flow in polar coordinates.

use super::linalg::solve_in_place;
use super::{calculated_power, Injections, NetworkModel, PowerFlowSolution};

/// Solves the power-flow equations with a flat start (V = 1, theta = 0).
///
/// All non-slack buses are treated as PQ buses with the given injections; the
/// slack holds `v_slack` at angle zero and balances the system. Failure to
/// converge within `max_iter` returns the partial state with
/// `converged == false` rather than an error.
pub fn solve_power_flow(
    net: &NetworkModel,
    inj: &Injections,
    v_slack: f64,
    tol: f64,
    max_iter: usize,
) -> PowerFlowSolution {
    let n = net.bus_count();
    let slack = net.slack_position();
    let (g, b) = net.admittance_matrix();

    let mut v_mag = vec![1.0; n];
    let mut v_ang = vec![0.0; n];
    v_mag[slack] = v_slack;

    // Non-slack bus positions; unknown vector is [d_theta..., d_vmag...].
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = free.len();

    let mut iterations = 0usize;
    let mut max_mismatch = f64::INFINITY;
    let mut converged = false;

    for _ in 0..=max_iter {
        let mut p_calc = vec![0.0; n];
        let mut q_calc = vec![0.0; n];
        for pos in 0..n {
            let (p, q) = calculated_power(&g, &b, &v_mag, &v_ang, pos);
            p_calc[pos] = p;
            q_calc[pos] = q;
        }

        let mut rhs = vec![0.0; 2 * m];
        max_mismatch = 0.0;
        for (k, &i) in free.iter().enumerate() {
            rhs[k] = inj.p[i] - p_calc[i];
            rhs[m + k] = inj.q[i] - q_calc[i];
            max_mismatch = max_mismatch.max(rhs[k].abs()).max(rhs[m + k].abs());
        }
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

        let mut jac = vec![0.0; 4 * m * m];
        let dim = 2 * m;
        for (row, &i) in free.iter().enumerate() {
            for (col, &j) in free.iter().enumerate() {
                let (dp_dt, dp_dv, dq_dt, dq_dv) = if i == j {
                    let gii = g[i * n + i];
                    let bii = b[i * n + i];
                    (
                        -q_calc[i] - bii * v_mag[i] * v_mag[i],
                        p_calc[i] / v_mag[i] + gii * v_mag[i],
                        p_calc[i] - gii * v_mag[i] * v_mag[i],
                        q_calc[i] / v_mag[i] - bii * v_mag[i],
                    )
                } else {
                    let gij = g[i * n + j];
                    let bij = b[i * n + j];
                    if gij == 0.0 && bij == 0.0 {
                        continue;
                    }
                    let theta = v_ang[i] - v_ang[j];
                    let (s, c) = theta.sin_cos();
                    let vij = v_mag[i] * v_mag[j];
                    (
                        vij * (gij * s - bij * c),
                        v_mag[i] * (gij * c + bij * s),
                        -vij * (gij * c + bij * s),
                        v_mag[i] * (gij * s - bij * c),
                    )
                };
                jac[row * dim + col] = dp_dt;
                jac[row * dim + m + col] = dp_dv;
                jac[(m + row) * dim + col] = dq_dt;
                jac[(m + row) * dim + m + col] = dq_dv;
            }
        }

        if !solve_in_place(&mut jac, &mut rhs, dim) {
            break;
        }
        let mut finite = true;
        for (k, &i) in free.iter().enumerate() {
            v_ang[i] += rhs[k];
            v_mag[i] += rhs[m + k];
            finite &= v_ang[i].is_finite() && v_mag[i].is_finite();
        }
        iterations += 1;
        if !finite || v_mag.iter().any(|&v| v <= 0.0) {
            break;
        }
    }

    PowerFlowSolution { v_mag, v_ang, converged, iterations, max_mismatch }
}
