//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use gradeloc::dp::{DpGrid, RouteProfile};
use gradeloc::ekf::{measurement_jacobian, measurement_mean, process_jacobian, process_mean};
use gradeloc::grade_map::GradeMap;
use gradeloc::harness::{harmonic_road, rolling_hills};
use gradeloc::mpc::{HorizonPreview, MpcConfig};
use gradeloc::sensor_sim::GRAVITY;
use gradeloc::vehicle::{step_spatial, step_time, VehicleParams};
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- EKF

/// Central-difference Jacobian of `f` at `x`.
pub fn central_difference(f: impl Fn(&Vector2<f64>) -> Vector2<f64>, x: &Vector2<f64>, h: f64) -> Matrix2<f64> {
    let mut j = Matrix2::zeros();
    for c in 0..2 {
        let mut dx = Vector2::zeros();
        dx[c] = h;
        let col = (f(&(x + dx)) - f(&(x - dx))) / (2.0 * h);
        j.set_column(c, &col);
    }
    j
}

/// Worst entrywise relative error, `|fd - an| / max(|an|, 1e-6)`.
pub fn relative_error(fd: &Matrix2<f64>, an: &Matrix2<f64>) -> f64 {
    fd.iter()
        .zip(an.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-6))
        .fold(0.0, f64::max)
}

/// Worst relative error of the analytic F and H against central differences over
/// `count` random states on a road with 1 m knots. States stay at least 0.1 m from a
/// knot so the stencil never straddles a kink of the interpolant.
pub fn jacobian_errors(count: usize, seed: u64) -> (f64, f64) {
    let map = harmonic_road(&rolling_hills(), 5000.0, 1.0).unwrap();
    let mut r = rng(seed);
    let (dt, h) = (0.1, 0.05);
    let (mut worst_f, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let s = r.random_range(1..4999) as f64 + r.random_range(0.1..0.9);
        let x = Vector2::new(s, r.random_range(0.0..35.0));
        let a = r.random_range(-3.0..3.0);
        let f_fd = central_difference(|y| process_mean(y, a, dt, &map, GRAVITY), &x, h);
        let h_fd = central_difference(|y| measurement_mean(y, &map), &x, h);
        worst_f = worst_f.max(relative_error(&f_fd, &process_jacobian(s, dt, &map, GRAVITY)));
        worst_h = worst_h.max(relative_error(&h_fd, &measurement_jacobian(s, &map)));
    }
    (worst_f, worst_h)
}

// ---------------------------------------------------------------- DP

/// Stage cost written out from its definition.
pub fn oracle_stage_cost(v: f64, u: f64, v_max: f64, gamma: f64, ds: f64) -> f64 {
    (v * u.max(0.0) + gamma * (v - v_max).powi(2)) * ds
}

/// Successor speed or `None`, from the transition rules: no stopping inside a cell
/// other than the last, no standing still across a cell, stay within the next
/// node's level range.
pub fn oracle_successor(route: &RouteProfile, levels: &[f64], k: usize, v: f64, u: f64, p: &VehicleParams) -> Option<f64> {
    let step = step_spatial(v, route.grade[k].asin(), u, p, route.ds);
    if step.clamped && k + 1 != route.cells() {
        return None;
    }
    if step.v == 0.0 && v == 0.0 {
        return None;
    }
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    if step.v < lo - 1e-9 || step.v > hi + 1e-9 {
        return None;
    }
    Some(step.v)
}

fn snap(levels: &[f64], v: f64) -> usize {
    let mut best = 0;
    for i in 1..levels.len() {
        if (levels[i] - v).abs() < (levels[best] - v).abs() {
            best = i;
        }
    }
    best
}

/// Cheapest completion of the route from level `i` at node `k` over every input
/// sequence, summed from the route end backwards. Also returns the first input.
fn best_sequence(
    route: &RouteProfile,
    grid: &DpGrid,
    p: &VehicleParams,
    gamma: f64,
    k: usize,
    i: usize,
) -> (f64, Option<f64>) {
    let n = route.cells();
    let levels = &grid.velocity_levels;
    let m = grid.input_levels.len();
    let len = n - k;
    let total = m.pow(len as u32);
    let mut best = (f64::INFINITY, None::<f64>);
    'seq: for code in 0..total {
        let mut c = code;
        let inputs: Vec<f64> = (0..len)
            .map(|_| {
                let u = grid.input_levels[c % m];
                c /= m;
                u
            })
            .collect();
        let mut costs = Vec::with_capacity(len);
        let mut v = levels[k][i];
        for (j, &u) in inputs.iter().enumerate() {
            let node = k + j;
            let Some(vn) = oracle_successor(route, &levels[node + 1], node, v, u, p) else {
                continue 'seq;
            };
            costs.push(oracle_stage_cost(v, u, route.v_max[node], gamma, route.ds));
            v = levels[node + 1][snap(&levels[node + 1], vn)];
        }
        let value = costs.iter().rev().fold(0.0, |acc, c| c + acc);
        let u0 = inputs[0];
        let better = value < best.0
            || (value == best.0 && best.1.is_some_and(|b| (u0.abs(), u0) < (b.abs(), b)));
        if better {
            best = (value, Some(u0));
        }
    }
    best
}

/// Cost-to-go and first-input tables by exhaustive enumeration on the snapped grid.
pub fn dp_brute_force(
    route: &RouteProfile,
    grid: &DpGrid,
    p: &VehicleParams,
    gamma: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<Option<f64>>>) {
    let n = route.cells();
    let mut cost = vec![vec![0.0]; n + 1];
    let mut policy = vec![vec![None]; n + 1];
    for k in 0..n {
        let row: Vec<(f64, Option<f64>)> = (0..grid.velocity_levels[k].len())
            .map(|i| best_sequence(route, grid, p, gamma, k, i))
            .collect();
        cost[k] = row.iter().map(|r| r.0).collect();
        policy[k] = row.iter().map(|r| r.1).collect();
    }
    (cost, policy)
}

/// A random small planning instance: <= 6 cells, <= 6 levels, <= 5 inputs.
pub fn random_dp_instance(r: &mut ChaCha8Rng) -> (RouteProfile, DpGrid, f64) {
    let cells = r.random_range(2..=6);
    let ds = r.random_range(5.0..15.0);
    let grade = (0..cells).map(|_| r.random_range(-0.06..0.06)).collect();
    let v_max: Vec<f64> = (0..=cells).map(|_| r.random_range(4.0..9.0)).collect();
    let v_min = v_max.iter().map(|v| r.random_range(1.0..v - 0.5)).collect();
    let route = RouteProfile::new(ds, grade, v_max, v_min).unwrap();
    let n_v = r.random_range(2..=6);
    let n_u = r.random_range(3..=5);
    let grid = DpGrid::new(&route, n_v, n_u, r.random_range(-3000.0..-500.0), r.random_range(1500.0..3000.0)).unwrap();
    (route, grid, r.random_range(0.0..20.0))
}

// ---------------------------------------------------------------- MPC

/// Objective written out from its definition on top of the vehicle's time step.
pub fn oracle_objective(v0: f64, preview: &HorizonPreview, inputs: &[f64], p: &VehicleParams, cfg: &MpcConfig) -> f64 {
    let n = inputs.len();
    let mut v = v0;
    let mut cost = 0.0;
    for k in 0..n {
        v = step_time(v, preview.theta[k], inputs[k], p, cfg.dt);
        cost += (v - preview.v_ref[k + 1]).powi(2) + cfg.gamma * inputs[k] * inputs[k];
        if k + 1 == n {
            cost += cfg.terminal_weight * (v - preview.v_ref[n]).powi(2);
        }
    }
    cost
}

fn grid_min(
    v0: f64,
    preview: &HorizonPreview,
    p: &VehicleParams,
    cfg: &MpcConfig,
    axes: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let n = axes.len();
    let m = axes[0].len();
    let mut best = (f64::INFINITY, vec![]);
    let mut idx = vec![0usize; n];
    let mut u = vec![0.0; n];
    loop {
        for k in 0..n {
            u[k] = axes[k][idx[k]];
        }
        let c = oracle_objective(v0, preview, &u, p, cfg);
        if c < best.0 {
            best = (c, u.clone());
        }
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Dense enumeration: 201 inputs per step across the box, then 201 per step across
/// three coarse spacings around the best point.
pub fn mpc_enumeration(v0: f64, preview: &HorizonPreview, p: &VehicleParams, cfg: &MpcConfig) -> (f64, Vec<f64>) {
    let n = preview.horizon();
    let lin = |a: f64, b: f64| -> Vec<f64> { (0..201).map(|i| a + (b - a) * i as f64 / 200.0).collect() };
    let coarse = lin(cfg.u_min, cfg.u_max);
    let (_, u) = grid_min(v0, preview, p, cfg, &vec![coarse; n]);
    let spacing = (cfg.u_max - cfg.u_min) / 200.0;
    let fine: Vec<Vec<f64>> = u
        .iter()
        .map(|&c| lin((c - 1.5 * spacing).max(cfg.u_min), (c + 1.5 * spacing).min(cfg.u_max)))
        .collect();
    grid_min(v0, preview, p, cfg, &fine)
}

/// A random horizon problem with `n` steps.
pub fn random_mpc_instance(r: &mut ChaCha8Rng, n: usize) -> (f64, HorizonPreview) {
    let v0 = if r.random_bool(0.15) { 0.0 } else { r.random_range(0.5..25.0) };
    let base = r.random_range(0.0..25.0);
    let preview = HorizonPreview {
        position: (0..=n).map(|k| k as f64).collect(),
        v_ref: (0..=n).map(|_| (base + r.random_range(-1.5..1.5f64)).max(0.0)).collect(),
        theta: (0..=n).map(|_| r.random_range(-0.08f64..0.08).asin()).collect(),
    };
    (v0, preview)
}

/// A road of `length` meters for long EKF runs.
pub fn long_road(length: f64) -> GradeMap {
    harmonic_road(&rolling_hills(), length, 1.0).unwrap()
}
