//! Energy-optimal speed planning by backward dynamic programming over a
//! position x velocity grid.
//!
//! The route is split into `N` cells of length `ds`. Node `k` sits at `k * ds`; cell
//! `k` joins node `k` to node `k + 1`. The two boundary nodes admit only `v = 0`;
//! interior nodes carry `n_v` velocity levels spanning their speed bounds.
//!
//! Stage cost of cell `k` is `(v max(u, 0) + gamma (v - v_max)^2) ds` with `v` the
//! speed entering the cell, and the cell is crossed with [`step_spatial`].

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade_map::{read_csv_rows, GradeMap};
use crate::vehicle::{forces, step_spatial, VehicleParams, J_PER_KWH};

/// Slack allowed when checking a successor speed against the next node's bounds.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Piecewise-linear interpolation through `(xs, ys)`, holding the end values outside.
/// `xs` must be sorted and non-empty.
pub fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&a| a <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Speed limits along the route, sampled at arbitrary positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedBounds {
    pub arc: Vec<f64>,
    pub v_max: Vec<f64>,
    pub v_min: Vec<f64>,
}

impl SpeedBounds {
    /// Builds bounds; a missing lower bound defaults to half the upper bound.
    pub fn new(arc: Vec<f64>, v_max: Vec<f64>, v_min: Option<Vec<f64>>) -> Result<Self> {
        if arc.is_empty() || arc.len() != v_max.len() {
            return Err(Error::invalid("speed bounds need matching non-empty columns"));
        }
        if arc.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("speed bound positions must increase strictly"));
        }
        if let Some(k) = v_max.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("v_max must be > 0 (sample {k})")));
        }
        let v_min = v_min.unwrap_or_else(|| v_max.iter().map(|v| 0.5 * v).collect());
        if v_min.len() != arc.len() {
            return Err(Error::invalid("v_min column length differs"));
        }
        if let Some(k) = (0..arc.len()).find(|&k| !(v_min[k] >= 0.0 && v_min[k] < v_max[k])) {
            return Err(Error::invalid(format!("need 0 <= v_min < v_max (sample {k})")));
        }
        Ok(Self { arc, v_max, v_min })
    }

    pub fn constant(length: f64, v_max: f64, v_min: f64) -> Result<Self> {
        Self::new(vec![0.0, length], vec![v_max; 2], Some(vec![v_min; 2]))
    }

    /// Reads `arc_m,v_max_mps[,v_min_mps]`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            arc_m: f64,
            v_max_mps: f64,
            #[serde(default)]
            v_min_mps: Option<f64>,
        }
        let path = path.as_ref();
        let rows: Vec<Row> = read_csv_rows(path)?;
        let has_min = rows.first().is_some_and(|r| r.v_min_mps.is_some());
        if let Some(i) = rows.iter().position(|r| r.v_min_mps.is_some() != has_min) {
            return Err(Error::Record {
                path: path.to_path_buf(),
                record: i + 1,
                message: "v_min_mps given on some rows only".into(),
            });
        }
        let arc = rows.iter().map(|r| r.arc_m).collect();
        let v_max = rows.iter().map(|r| r.v_max_mps).collect();
        let v_min = has_min.then(|| rows.iter().map(|r| r.v_min_mps.unwrap()).collect());
        Self::new(arc, v_max, v_min)
    }

    /// Resamples onto `nodes` by linear interpolation. The samples must cover the nodes.
    pub fn resample(&self, nodes: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (first, last) = (self.arc[0], self.arc[self.arc.len() - 1]);
        for &s in nodes {
            if s < first - 1e-9 || s > last + 1e-9 {
                return Err(Error::invalid(format!(
                    "speed bounds cover [{first}, {last}] m but the route needs {s} m"
                )));
            }
        }
        let v_max = nodes.iter().map(|&s| interp_clamped(&self.arc, &self.v_max, s)).collect();
        let v_min = nodes.iter().map(|&s| interp_clamped(&self.arc, &self.v_min, s)).collect();
        Ok((v_max, v_min))
    }
}

/// Route discretised for planning.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteProfile {
    pub ds: f64,
    /// `sin(theta)` per cell, sampled at the cell midpoint.
    pub grade: Vec<f64>,
    /// Upper speed bound per node.
    pub v_max: Vec<f64>,
    /// Lower speed bound per node.
    pub v_min: Vec<f64>,
}

impl RouteProfile {
    pub fn new(ds: f64, grade: Vec<f64>, v_max: Vec<f64>, v_min: Vec<f64>) -> Result<Self> {
        if !(ds.is_finite() && ds > 0.0) {
            return Err(Error::invalid("ds must be > 0"));
        }
        let n = grade.len();
        if n == 0 {
            return Err(Error::invalid("route needs at least one cell"));
        }
        if v_max.len() != n + 1 || v_min.len() != n + 1 {
            return Err(Error::invalid("speed bounds need one value per node"));
        }
        if let Some(k) = grade.iter().position(|p| !(p.is_finite() && p.abs() < 1.0)) {
            return Err(Error::invalid(format!("grade of cell {k} must satisfy |p| < 1")));
        }
        for k in 1..n {
            if !(v_min[k] >= 0.0 && v_min[k] < v_max[k] && v_max[k].is_finite()) {
                return Err(Error::invalid(format!("node {k}: need 0 <= v_min < v_max")));
            }
        }
        Ok(Self {
            ds,
            grade,
            v_max,
            v_min,
        })
    }

    /// Samples the map at cell midpoints and the bounds at nodes.
    /// `length` must be a whole number of cells.
    pub fn from_map(map: &GradeMap, length: f64, ds: f64, bounds: &SpeedBounds) -> Result<Self> {
        if !(ds > 0.0 && length > 0.0) {
            return Err(Error::invalid("length and ds must be > 0"));
        }
        let n = (length / ds).round() as usize;
        if n == 0 || (n as f64 * ds - length).abs() > 1e-6 * length.max(1.0) {
            return Err(Error::invalid(format!("length {length} m is not a multiple of ds {ds} m")));
        }
        let grade = (0..n).map(|k| map.grade_at((k as f64 + 0.5) * ds)).collect();
        let nodes: Vec<f64> = (0..=n).map(|k| k as f64 * ds).collect();
        let (v_max, v_min) = bounds.resample(&nodes)?;
        Self::new(ds, grade, v_max, v_min)
    }

    /// Caps the bounds near both ends at `sqrt(2 a d)` (upper) and half that (lower), with
    /// `d` the distance to the nearer end, so that starting and stopping stay reachable.
    pub fn with_endpoint_ramp(mut self, accel: f64) -> Self {
        let n = self.cells();
        for k in 0..=n {
            let d = k.min(n - k) as f64 * self.ds;
            let cap = (2.0 * accel * d).sqrt();
            self.v_max[k] = self.v_max[k].min(cap);
            self.v_min[k] = self.v_min[k].min(0.5 * cap);
        }
        self
    }

    pub fn cells(&self) -> usize {
        self.grade.len()
    }

    pub fn length(&self) -> f64 {
        self.cells() as f64 * self.ds
    }

    pub fn node_arc(&self, k: usize) -> f64 {
        k as f64 * self.ds
    }

    pub fn theta(&self, cell: usize) -> f64 {
        self.grade[cell].asin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub n_v: usize,
    pub n_u: usize,
    pub ds: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Acceleration used to shape the speed bounds next to the route ends (m/s^2).
    pub ramp_accel: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            n_v: 41,
            n_u: 25,
            ds: 10.0,
            u_min: -3000.0,
            u_max: 3000.0,
            ramp_accel: 1.5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("planner.gamma must be >= 0".into()));
        }
        if self.n_v < 2 || self.n_u < 3 {
            return Err(Error::Config("planner needs n_v >= 2 and n_u >= 3".into()));
        }
        if !(self.ds > 0.0 && self.ramp_accel > 0.0) {
            return Err(Error::Config("planner.ds and planner.ramp_accel must be > 0".into()));
        }
        if !(self.u_min <= 0.0 && self.u_max > 0.0 && self.u_min < self.u_max) {
            return Err(Error::Config("planner needs u_min <= 0 < u_max".into()));
        }
        Ok(())
    }
}

/// Velocity levels per node and the shared input levels.
#[derive(Clone, Debug, PartialEq)]
pub struct DpGrid {
    pub velocity_levels: Vec<Vec<f64>>,
    pub input_levels: Vec<f64>,
}

impl DpGrid {
    pub fn new(route: &RouteProfile, n_v: usize, n_u: usize, u_min: f64, u_max: f64) -> Result<Self> {
        if n_v < 2 || n_u < 3 {
            return Err(Error::invalid("need n_v >= 2 and n_u >= 3"));
        }
        if !(u_min <= 0.0 && 0.0 < u_max) {
            return Err(Error::invalid("input range must contain 0 with u_max > 0"));
        }
        let n = route.cells();
        let velocity_levels = (0..=n)
            .map(|k| {
                if k == 0 || k == n {
                    vec![0.0]
                } else {
                    linspace(route.v_min[k], route.v_max[k], n_v)
                }
            })
            .collect();
        let mut input_levels = linspace(u_min, u_max, n_u);
        if u_min < 0.0 && !input_levels.contains(&0.0) {
            let i = (0..n_u)
                .min_by(|&a, &b| input_levels[a].abs().total_cmp(&input_levels[b].abs()))
                .unwrap();
            input_levels[i] = 0.0;
        }
        Ok(Self {
            velocity_levels,
            input_levels,
        })
    }

    pub fn from_config(route: &RouteProfile, cfg: &PlannerConfig) -> Result<Self> {
        Self::new(route, cfg.n_v, cfg.n_u, cfg.u_min, cfg.u_max)
    }
}

pub fn stage_cost(v: f64, u: f64, v_max_cell: f64, gamma: f64, ds: f64) -> f64 {
    (v * u.max(0.0) + gamma * (v - v_max_cell).powi(2)) * ds
}

/// How successor speeds are read off the next node's cost-to-go.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Successor {
    /// Linear interpolation between the bracketing levels.
    #[default]
    Interpolated,
    /// Value at the nearest level (lower index on a tie).
    Snapped,
}

/// Continuous successor speed when cell `cell` is entered at `v` with input `u`, or
/// `None` if the transition is not allowed: stopping inside a cell other than the last,
/// standing still across a cell, or leaving the next node's bounds.
pub fn transition(
    route: &RouteProfile,
    next_levels: &[f64],
    cell: usize,
    v: f64,
    u: f64,
    params: &VehicleParams,
) -> Option<f64> {
    let last = cell + 1 == route.cells();
    let step = step_spatial(v, route.theta(cell), u, params, route.ds);
    if step.clamped && !last {
        return None;
    }
    if step.v == 0.0 && v == 0.0 {
        return None;
    }
    let (lo, hi) = (next_levels[0], next_levels[next_levels.len() - 1]);
    if step.v < lo - BOUND_TOLERANCE || step.v > hi + BOUND_TOLERANCE {
        return None;
    }
    Some(step.v)
}

/// Index of the level closest to `v`, preferring the lower one on a tie.
pub fn nearest_level(levels: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, l) in levels.iter().enumerate().skip(1) {
        if (l - v).abs() < (levels[best] - v).abs() {
            best = i;
        }
    }
    best
}

fn lookup(levels: &[f64], values: &[f64], v: f64, mode: Successor) -> f64 {
    if mode == Successor::Snapped || levels.len() == 1 {
        return values[nearest_level(levels, v)];
    }
    let n = levels.len();
    let v = v.clamp(levels[0], levels[n - 1]);
    let i = (levels.partition_point(|&l| l <= v).max(1) - 1).min(n - 2);
    let w = (v - levels[i]) / (levels[i + 1] - levels[i]);
    if w == 0.0 {
        values[i]
    } else if w == 1.0 {
        values[i + 1]
    } else if values[i].is_infinite() || values[i + 1].is_infinite() {
        f64::INFINITY
    } else {
        (1.0 - w) * values[i] + w * values[i + 1]
    }
}

/// `true` when input `a` should replace the incumbent `b` at equal cost.
fn preferred(a: f64, b: f64) -> bool {
    (a.abs(), a) < (b.abs(), b)
}

/// Cost-to-go and policy tables from the backward sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct DpTables {
    pub levels: Vec<Vec<f64>>,
    pub input_levels: Vec<f64>,
    /// `J*(k, level)`; `+inf` where no feasible continuation exists.
    pub cost_to_go: Vec<Vec<f64>>,
    /// Minimising input per node and level; `None` at the terminal node and where infeasible.
    pub policy: Vec<Vec<Option<f64>>>,
    pub gamma: f64,
    pub mode: Successor,
}

impl DpTables {
    /// Cost-to-go at node `k` and speed `v` under the sweep's lookup rule.
    pub fn cost_at(&self, k: usize, v: f64) -> f64 {
        lookup(&self.levels[k], &self.cost_to_go[k], v, self.mode)
    }

    /// Best input at node `k`, speed `v`, judged against `J*(k + 1, .)`.
    /// Returns `(u, successor speed, stage cost + successor cost)`.
    pub fn best_input(
        &self,
        route: &RouteProfile,
        params: &VehicleParams,
        k: usize,
        v: f64,
    ) -> Option<(f64, f64, f64)> {
        let grid = self.input_levels.iter().copied();
        if self.mode == Successor::Snapped {
            return self.best_of(route, params, k, v, grid);
        }
        // Inputs that land exactly on a next-node level. Without them a cruise whose
        // equilibrium force falls between input levels turns into pulse-and-glide.
        let (lo, hi) = (self.input_levels[0], self.input_levels[self.input_levels.len() - 1]);
        let resist = -forces(v, route.theta(k), 0.0, params).total;
        let exact = self.levels[k + 1]
            .iter()
            .map(move |&l| resist + params.m * (l * l - v * v) / (2.0 * route.ds))
            .filter(move |u| (lo..=hi).contains(u));
        self.best_of(route, params, k, v, grid.chain(exact))
    }

    fn best_of(
        &self,
        route: &RouteProfile,
        params: &VehicleParams,
        k: usize,
        v: f64,
        inputs: impl Iterator<Item = f64>,
    ) -> Option<(f64, f64, f64)> {
        let next = &self.levels[k + 1];
        let mut best: Option<(f64, f64, f64)> = None;
        for u in inputs {
            let Some(vn) = transition(route, next, k, v, u, params) else {
                continue;
            };
            let tail = lookup(next, &self.cost_to_go[k + 1], vn, self.mode);
            if tail.is_infinite() {
                continue;
            }
            let total = stage_cost(v, u, route.v_max[k], self.gamma, route.ds) + tail;
            let better = match best {
                None => true,
                Some((bu, _, bc)) => total < bc || (total == bc && preferred(u, bu)),
            };
            if better {
                best = Some((u, vn, total));
            }
        }
        best
    }
}

/// Backward Bellman recursion over the grid. Fails with [`Error::Infeasible`] when the
/// origin has no finite-cost path, naming the cell where feasibility is first lost.
pub fn backward_sweep(
    route: &RouteProfile,
    grid: &DpGrid,
    params: &VehicleParams,
    gamma: f64,
    mode: Successor,
) -> Result<DpTables> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("gamma must be >= 0"));
    }
    let n = route.cells();
    if grid.velocity_levels.len() != n + 1 {
        return Err(Error::invalid("grid and route disagree on the number of nodes"));
    }
    let mut tables = DpTables {
        levels: grid.velocity_levels.clone(),
        input_levels: grid.input_levels.clone(),
        cost_to_go: grid.velocity_levels.iter().map(|l| vec![f64::INFINITY; l.len()]).collect(),
        policy: grid.velocity_levels.iter().map(|l| vec![None; l.len()]).collect(),
        gamma,
        mode,
    };
    tables.cost_to_go[n] = vec![0.0];
    for k in (0..n).rev() {
        let row: Vec<(f64, Option<f64>)> = tables.levels[k]
            .par_iter()
            .map(|&v| match tables.best_input(route, params, k, v) {
                Some((u, _, cost)) => (cost, Some(u)),
                None => (f64::INFINITY, None),
            })
            .collect();
        (tables.cost_to_go[k], tables.policy[k]) = row.into_iter().unzip();
    }
    if tables.cost_to_go[0][0].is_infinite() {
        let cell = (0..n)
            .rev()
            .find(|&k| tables.cost_to_go[k].iter().all(|j| j.is_infinite()))
            .unwrap_or(0);
        return Err(Error::Infeasible(format!(
            "no feasible speed profile: every state at node {cell} ({} m) is a dead end; \
             refine the grid or relax the speed bounds",
            route.node_arc(cell)
        )));
    }
    Ok(tables)
}

/// Speed profile along the route, one entry per node.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityPlan {
    pub arc: Vec<f64>,
    pub v_ref: Vec<f64>,
    /// Input applied over the cell that starts at this node; 0 at the last node.
    pub u: Vec<f64>,
    /// Cost-to-go at the planned state; NaN for plans not produced by the sweep.
    pub cost_to_go: Vec<f64>,
    pub energy_kwh: f64,
    pub trip_time_s: f64,
    pub gamma: Option<f64>,
}

/// `{energy_kwh, trip_time_min, gamma}` summary record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub energy_kwh: f64,
    pub trip_time_min: f64,
    pub gamma: Option<f64>,
}

impl VelocityPlan {
    /// Assembles a plan, computing energy from the positive inputs and trip time from the
    /// trapezoidal cell times `2 ds / (v + v')`.
    pub fn from_profile(
        arc: Vec<f64>,
        v_ref: Vec<f64>,
        u: Vec<f64>,
        cost_to_go: Vec<f64>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let n = arc.len();
        if n < 2 || v_ref.len() != n || u.len() != n || cost_to_go.len() != n {
            return Err(Error::invalid("plan columns need equal length >= 2"));
        }
        if arc.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("plan positions must increase strictly"));
        }
        if v_ref.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("plan speeds must be finite and >= 0"));
        }
        let mut energy = 0.0;
        let mut time = 0.0;
        for k in 0..n - 1 {
            let ds = arc[k + 1] - arc[k];
            energy += u[k].max(0.0) * ds;
            let vsum = v_ref[k] + v_ref[k + 1];
            if vsum <= 0.0 {
                return Err(Error::invalid(format!("plan stands still across cell {k}")));
            }
            time += 2.0 * ds / vsum;
        }
        Ok(Self {
            arc,
            v_ref,
            u,
            cost_to_go,
            energy_kwh: energy / J_PER_KWH,
            trip_time_s: time,
            gamma,
        })
    }

    pub fn length(&self) -> f64 {
        self.arc[self.arc.len() - 1]
    }

    /// Reference speed at `s`; 0 past the end of the route.
    pub fn v_ref_at(&self, s: f64) -> f64 {
        if s >= self.length() {
            return 0.0;
        }
        interp_clamped(&self.arc, &self.v_ref, s)
    }

    pub fn mean_speed(&self) -> f64 {
        self.length() / self.trip_time_s
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            energy_kwh: self.energy_kwh,
            trip_time_min: self.trip_time_s / 60.0,
            gamma: self.gamma,
        }
    }

    /// Writes `arc_m,v_ref_mps,u_N,cost_to_go`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["arc_m", "v_ref_mps", "u_N", "cost_to_go"])?;
        for k in 0..self.arc.len() {
            w.write_record(&[
                self.arc[k].to_string(),
                self.v_ref[k].to_string(),
                self.u[k].to_string(),
                self.cost_to_go[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            arc_m: f64,
            v_ref_mps: f64,
            #[serde(rename = "u_N")]
            u_n: f64,
            cost_to_go: f64,
        }
        let rows: Vec<Row> = read_csv_rows(path.as_ref())?;
        Self::from_profile(
            rows.iter().map(|r| r.arc_m).collect(),
            rows.iter().map(|r| r.v_ref_mps).collect(),
            rows.iter().map(|r| r.u_n).collect(),
            rows.iter().map(|r| r.cost_to_go).collect(),
            None,
        )
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Rolls the tables forward from rest at the origin. At every node the input is chosen
/// afresh against `J*(k + 1, .)` at the actual (off-grid) speed.
pub fn forward_rollout(
    tables: &DpTables,
    route: &RouteProfile,
    params: &VehicleParams,
) -> Result<VelocityPlan> {
    let n = route.cells();
    let mut v = 0.0;
    let (mut arc, mut v_ref, mut u, mut ctg) = (vec![], vec![], vec![], vec![]);
    for k in 0..n {
        let Some((uk, vn, _)) = tables.best_input(route, params, k, v) else {
            return Err(Error::Infeasible(format!(
                "rollout reached a dead end in cell {k} at {v:.3} m/s"
            )));
        };
        arc.push(route.node_arc(k));
        v_ref.push(v);
        u.push(uk);
        ctg.push(tables.cost_at(k, v));
        v = vn;
    }
    arc.push(route.length());
    v_ref.push(v);
    u.push(0.0);
    ctg.push(0.0);
    VelocityPlan::from_profile(arc, v_ref, u, ctg, Some(tables.gamma))
}

/// Sum of stage costs actually incurred by `plan` on `route`.
pub fn plan_cost(plan: &VelocityPlan, route: &RouteProfile, gamma: f64) -> f64 {
    (0..route.cells())
        .map(|k| stage_cost(plan.v_ref[k], plan.u[k], route.v_max[k], gamma, route.ds))
        .sum()
}

/// Convenience: grid, sweep and rollout with `cfg`.
pub fn plan_route(
    route: &RouteProfile,
    params: &VehicleParams,
    cfg: &PlannerConfig,
) -> Result<VelocityPlan> {
    cfg.validate()?;
    let grid = DpGrid::from_config(route, cfg)?;
    let tables = backward_sweep(route, &grid, params, cfg.gamma, Successor::Interpolated)?;
    forward_rollout(&tables, route, params)
}

/// Reference plan that drives at the upper bound wherever braking distance allows: a
/// backward pass finds the fastest speed at each node from which full braking still
/// honours the downstream bounds, and a forward pass picks the input hitting that target.
pub fn max_speed_plan(
    route: &RouteProfile,
    params: &VehicleParams,
    u_min: f64,
    u_max: f64,
) -> Result<VelocityPlan> {
    let n = route.cells();
    let ds = route.ds;
    let mut envelope = vec![0.0; n + 1];
    for k in (1..n).rev() {
        let theta = route.theta(k);
        let reaches = |v: f64| step_spatial(v, theta, u_min, params, ds).v <= envelope[k + 1];
        let hi = route.v_max[k];
        envelope[k] = if reaches(hi) {
            hi
        } else {
            let (mut lo, mut hi) = (0.0, hi);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if reaches(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
    }
    let mut v = 0.0;
    let (mut arc, mut v_ref, mut u) = (vec![], vec![], vec![]);
    for k in 0..n {
        let last = k + 1 == n;
        let theta = route.theta(k);
        let target = if last { 0.0 } else { envelope[k + 1] };
        let f = forces(v, theta, 0.0, params);
        let needed = (target * target - v * v) * params.m / (2.0 * ds) - f.total;
        let uk = needed.clamp(u_min, u_max);
        let step = step_spatial(v, theta, uk, params, ds);
        arc.push(route.node_arc(k));
        v_ref.push(v);
        u.push(uk);
        if last {
            if step.v > 1e-6 {
                return Err(Error::Infeasible(format!(
                    "cannot stop by the end of the route ({:.3} m/s left)",
                    step.v
                )));
            }
            v = 0.0;
        } else {
            if step.clamped || step.v <= 0.0 {
                return Err(Error::Infeasible(format!(
                    "vehicle stalls in cell {k} even at full traction"
                )));
            }
            v = step.v;
        }
    }
    arc.push(route.length());
    v_ref.push(0.0);
    u.push(0.0);
    let nan = vec![f64::NAN; n + 1];
    VelocityPlan::from_profile(arc, v_ref, u, nan, None)
}
