//! Receding-horizon speed tracking with grade preview.
//!
//! Over `N` steps of length `dt` the controller minimises
//! `sum_{k=1..N} (v_k - r_k)^2 + gamma sum_{k=0..N-1} u_k^2 + p (v_N - r_N)^2`
//! subject to `v_{k+1} = step_time(v_k, theta_k, u_k)` and box bounds on `u` and `v`,
//! and applies the first input.
//!
//! The solver linearises the dynamics around the current input sequence, solves the
//! resulting box-constrained quadratic program by projected gradient with exact line
//! search, polishes it on the active set, and repeats. Speed bounds enter as a stiff
//! quadratic penalty.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dp::VelocityPlan;
use crate::ekf::{predict, update, EkfConfig, EkfEstimate, ThetaSource};
use crate::error::{Error, Result};
use crate::grade_map::GradeMap;
use crate::sensor_sim::{NoiseSpec, SensorSampler};
use crate::vehicle::{forces, step_time, trip_energy_from_power, wheel_power, VehicleParams};

/// Weight of squared speed-bound violations in the solver's merit function.
pub const BOUND_PENALTY: f64 = 1e6;

/// Samples ignored by the tracking metric while the vehicle launches (s).
pub const TRACKING_TRANSIENT_S: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Input-effort weight (1/N^2 relative to (m/s)^2 tracking error).
    pub gamma: f64,
    /// Weight on the terminal tracking error.
    pub terminal_weight: f64,
    pub dt: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Lowest speed used to project the preview ahead, so a vehicle at rest still
    /// sees the road in front of it (m/s).
    pub launch_speed: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            gamma: 1e-5,
            terminal_weight: 1e3,
            dt: 0.2,
            u_min: -3000.0,
            u_max: 3000.0,
            v_min: 0.0,
            v_max: 40.0,
            launch_speed: 2.0,
            max_iterations: 50,
            tolerance: 1e-8,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("mpc.horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("mpc.dt must be > 0".into()));
        }
        if !(self.u_min < self.u_max) || !(self.v_min < self.v_max) {
            return Err(Error::Config("mpc bounds need min < max".into()));
        }
        if !(self.gamma >= 0.0 && self.terminal_weight >= 0.0) {
            return Err(Error::Config("mpc weights must be >= 0".into()));
        }
        if !(self.launch_speed >= 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("mpc.launch_speed >= 0 and max_iterations >= 1".into()));
        }
        Ok(())
    }
}

/// Reference speed and inclination at the `N + 1` predicted positions.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonPreview {
    pub position: Vec<f64>,
    pub v_ref: Vec<f64>,
    pub theta: Vec<f64>,
}

impl HorizonPreview {
    pub fn horizon(&self) -> usize {
        self.v_ref.len() - 1
    }

    /// Same reference and inclination at every step.
    pub fn constant(horizon: usize, v_ref: f64, theta: f64) -> Self {
        Self {
            position: vec![0.0; horizon + 1],
            v_ref: vec![v_ref; horizon + 1],
            theta: vec![theta; horizon + 1],
        }
    }
}

/// Samples the plan and map at `s_hat + k dt v_now`, `k = 0..=N`. Past the end of the
/// plan the reference is 0 and the inclination is that of the last point.
pub fn build_preview(
    s_hat: f64,
    v_now: f64,
    plan: &VelocityPlan,
    map: &GradeMap,
    cfg: &MpcConfig,
) -> HorizonPreview {
    let v = v_now.max(0.0);
    let end = plan.length();
    let position: Vec<f64> = (0..=cfg.horizon)
        .map(|k| s_hat + k as f64 * cfg.dt * v)
        .collect();
    HorizonPreview {
        v_ref: position.iter().map(|&s| plan.v_ref_at(s)).collect(),
        theta: position.iter().map(|&s| map.inclination_at(s.min(end))).collect(),
        position,
    }
}

/// Speeds `v_0..v_N` reached from `v0` under `inputs`.
pub fn predict_speeds(
    v0: f64,
    preview: &HorizonPreview,
    inputs: &[f64],
    params: &VehicleParams,
    dt: f64,
) -> Vec<f64> {
    let mut v = vec![v0];
    for (k, &u) in inputs.iter().enumerate() {
        v.push(step_time(v[k], preview.theta[k], u, params, dt));
    }
    v
}

/// The tracking objective for a given input sequence.
pub fn objective(
    v0: f64,
    preview: &HorizonPreview,
    inputs: &[f64],
    params: &VehicleParams,
    cfg: &MpcConfig,
) -> f64 {
    let v = predict_speeds(v0, preview, inputs, params, cfg.dt);
    let n = inputs.len();
    let tracking: f64 = (1..=n).map(|k| (v[k] - preview.v_ref[k]).powi(2)).sum();
    let effort: f64 = inputs.iter().map(|u| u * u).sum();
    tracking + cfg.gamma * effort + cfg.terminal_weight * (v[n] - preview.v_ref[n]).powi(2)
}

fn bound_violation(v: f64, cfg: &MpcConfig) -> f64 {
    if v > cfg.v_max {
        v - cfg.v_max
    } else if v < cfg.v_min {
        v - cfg.v_min
    } else {
        0.0
    }
}

fn merit(v0: f64, preview: &HorizonPreview, inputs: &[f64], params: &VehicleParams, cfg: &MpcConfig) -> f64 {
    let v = predict_speeds(v0, preview, inputs, params, cfg.dt);
    let penalty: f64 = v[1..].iter().map(|&x| bound_violation(x, cfg).powi(2)).sum();
    objective(v0, preview, inputs, params, cfg) + BOUND_PENALTY * penalty
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// First input, the one applied.
    pub u0: f64,
    pub inputs: Vec<f64>,
    /// Predicted speeds `v_0..v_N`.
    pub speeds: Vec<f64>,
    pub cost: f64,
    /// Speed bounds could not be met; `inputs` is the best effort.
    pub infeasible: bool,
    /// The initial speed was outside the speed bounds and was clamped.
    pub state_clamped: bool,
    pub iterations: usize,
}

/// Box-constrained QP `min 1/2 x'Hx + g'x, lo <= x <= hi`.
fn solve_box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, x0: DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let project = |x: DVector<f64>| x.zip_zip_map(lo, hi, |v, l, u| v.clamp(l, u));
    let diag: Vec<f64> = (0..n).map(|i| h[(i, i)].max(f64::MIN_POSITIVE)).collect();
    let mut x = project(x0);
    for _ in 0..500 {
        let grad = h * &x + g;
        let trial = project(DVector::from_iterator(n, (0..n).map(|i| x[i] - grad[i] / diag[i])));
        let d = trial - &x;
        let scale = lo.iter().zip(hi.iter()).map(|(l, u)| u - l).fold(0.0, f64::max);
        if d.amax() <= 1e-13 * scale {
            break;
        }
        let curvature = d.dot(&(h * &d));
        let slope = grad.dot(&d);
        let step = if curvature > 0.0 { (-slope / curvature).clamp(0.0, 1.0) } else { 1.0 };
        if step == 0.0 {
            break;
        }
        x += d * step;
    }
    // polish: Newton step on the inactive set, repeated while the active set changes
    for _ in 0..=n {
        let grad = h * &x + g;
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = x[i] <= lo[i] && grad[i] > 0.0;
                let at_hi = x[i] >= hi[i] && grad[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
        let Some(chol) = hff.cholesky() else { break };
        let step = chol.solve(&rhs);
        let mut candidate = x.clone();
        for (a, &i) in free.iter().enumerate() {
            candidate[i] += step[a];
        }
        let candidate = project(candidate);
        let value = |y: &DVector<f64>| 0.5 * y.dot(&(h * y)) + g.dot(y);
        if value(&candidate) <= value(&x) {
            let moved = (&candidate - &x).amax();
            x = candidate;
            if moved == 0.0 {
                break;
            }
        } else {
            break;
        }
    }
    x
}

/// Solves the horizon problem from speed `v_now`. `warm_start`, if given, seeds the
/// input sequence.
pub fn solve(
    v_now: f64,
    preview: &HorizonPreview,
    params: &VehicleParams,
    cfg: &MpcConfig,
    warm_start: Option<&[f64]>,
) -> Result<MpcSolution> {
    let n = cfg.horizon;
    if preview.v_ref.len() != n + 1 || preview.theta.len() != n + 1 {
        return Err(Error::invalid("preview length must be horizon + 1"));
    }
    if !v_now.is_finite() || preview.v_ref.iter().chain(&preview.theta).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite controller input".into()));
    }
    let state_clamped = v_now < cfg.v_min || v_now > cfg.v_max;
    let v0 = v_now.clamp(cfg.v_min, cfg.v_max);
    let dt = cfg.dt;
    let mut u: Vec<f64> = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        _ => {
            let f = forces(v0, preview.theta[0], 0.0, params);
            vec![-f.total; n]
        }
    };
    for x in &mut u {
        *x = x.clamp(cfg.u_min, cfg.u_max);
    }
    let lo_u = DVector::from_element(n, cfg.u_min);
    let hi_u = DVector::from_element(n, cfg.u_max);
    let mut current = merit(v0, preview, &u, params, cfg);
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let v = predict_speeds(v0, preview, &u, params, dt);
        // sensitivities dv_k/du_j of the input sequence
        let mut sens = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            // smooth model: the standstill clamp is ignored so a vehicle at rest still
            // sees the effect of traction; the line search uses the true dynamics
            let b = dt / params.m;
            let a = 1.0 - 2.0 * dt * params.drag_factor() * v[k] / params.m;
            for j in 0..k {
                sens[(k, j)] = a * sens[(k - 1, j)];
            }
            sens[(k, k)] = b;
        }
        let mut weight = DVector::<f64>::zeros(n);
        let mut residual = DVector::<f64>::zeros(n);
        let mut pen_weight = DVector::<f64>::zeros(n);
        let mut pen_residual = DVector::<f64>::zeros(n);
        for k in 0..n {
            weight[k] = if k + 1 == n { 1.0 + cfg.terminal_weight } else { 1.0 };
            residual[k] = v[k + 1] - preview.v_ref[k + 1];
            let viol = bound_violation(v[k + 1], cfg);
            if viol != 0.0 {
                pen_weight[k] = BOUND_PENALTY;
                pen_residual[k] = viol;
            }
        }
        let w = DMatrix::from_diagonal(&(weight.clone() + &pen_weight));
        let h = (sens.transpose() * &w * &sens + DMatrix::identity(n, n) * cfg.gamma) * 2.0;
        let uv = DVector::from_column_slice(&u);
        let weighted_res = weight.component_mul(&residual) + pen_weight.component_mul(&pen_residual);
        let g = (sens.transpose() * weighted_res + &uv * cfg.gamma) * 2.0;
        let delta = solve_box_qp(
            &h,
            &g,
            &(&lo_u - &uv),
            &(&hi_u - &uv),
            DVector::zeros(n),
        );
        // backtrack on the nonlinear merit
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-6 {
            let trial: Vec<f64> = (0..n)
                .map(|i| (u[i] + step * delta[i]).clamp(cfg.u_min, cfg.u_max))
                .collect();
            let m = merit(v0, preview, &trial, params, cfg);
            if m <= current {
                accepted = Some((trial, m));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, m)) = accepted else { break };
        let moved = (0..n).map(|i| (trial[i] - u[i]).abs()).fold(0.0, f64::max);
        u = trial;
        current = m;
        if moved <= cfg.tolerance * (cfg.u_max - cfg.u_min) {
            break;
        }
    }
    let speeds = predict_speeds(v0, preview, &u, params, dt);
    if speeds.iter().any(|x| !x.is_finite()) || !current.is_finite() {
        return Err(Error::Numerical("controller produced a non-finite prediction".into()));
    }
    let infeasible = speeds[1..].iter().any(|&x| bound_violation(x, cfg).abs() > 1e-6);
    Ok(MpcSolution {
        u0: u[0],
        cost: objective(v0, preview, &u, params, cfg),
        inputs: u,
        speeds,
        infeasible,
        state_clamped,
        iterations,
    })
}

/// Where the controller believes the vehicle is.
#[derive(Clone, Debug, PartialEq)]
pub enum Localizer {
    Truth,
    /// True position plus a fixed offset (m).
    Offset(f64),
    /// Online filter fed by simulated wheel-speed, inclination and accelerometer readings.
    Ekf { noise: NoiseSpec, ekf: EkfConfig },
}

impl Localizer {
    /// Parses `truth`, `ekf` or `offset:<m>`; `ekf` uses the given noise and filter settings.
    pub fn parse(text: &str, noise: &NoiseSpec, ekf: &EkfConfig) -> Result<Self> {
        match text.trim() {
            "truth" => Ok(Localizer::Truth),
            "ekf" => Ok(Localizer::Ekf {
                noise: noise.clone(),
                ekf: ekf.clone(),
            }),
            other => other
                .strip_prefix("offset:")
                .and_then(|m| m.trim().parse::<f64>().ok())
                .filter(|m| m.is_finite())
                .map(Localizer::Offset)
                .ok_or_else(|| {
                    Error::Config(format!("localizer must be truth, ekf or offset:<m>, got {other:?}"))
                }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSample {
    pub t_s: f64,
    pub s_true_m: f64,
    pub s_hat_m: f64,
    pub v_mps: f64,
    pub v_ref_mps: f64,
    #[serde(rename = "u_N")]
    pub u_n: f64,
    #[serde(rename = "power_W")]
    pub power_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub energy_kwh: f64,
    pub tracking_rmse_mps: f64,
    pub duration_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopLog {
    pub dt: f64,
    pub samples: Vec<ClosedLoopSample>,
    /// Steps at which the speed bounds could not be met.
    pub infeasible_steps: usize,
}

impl ClosedLoopLog {
    /// Positive wheel work over the whole run (kWh).
    pub fn energy_kwh(&self) -> f64 {
        let power: Vec<f64> = self.samples.iter().map(|x| x.power_w).collect();
        trip_energy_from_power(&power, self.dt)
    }

    /// Positive wheel work accumulated while the true position lies in `[a, b)` (kWh).
    pub fn energy_between_kwh(&self, a: f64, b: f64) -> f64 {
        let power: Vec<f64> = self
            .samples
            .iter()
            .filter(|x| x.s_true_m >= a && x.s_true_m < b)
            .map(|x| x.power_w)
            .collect();
        trip_energy_from_power(&power, self.dt)
    }

    /// RMS of `v - v_ref(s_true)` over samples at or after `skip_s` seconds.
    pub fn tracking_rmse(&self, skip_s: f64) -> f64 {
        let errs: Vec<f64> = self
            .samples
            .iter()
            .filter(|x| x.t_s >= skip_s)
            .map(|x| x.v_mps - x.v_ref_mps)
            .collect();
        if errs.is_empty() {
            return 0.0;
        }
        (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
    }

    /// Mean reference speed over the samples the tracking metric uses.
    pub fn mean_reference(&self, skip_s: f64) -> f64 {
        let refs: Vec<f64> = self.samples.iter().filter(|x| x.t_s >= skip_s).map(|x| x.v_ref_mps).collect();
        refs.iter().sum::<f64>() / refs.len().max(1) as f64
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    pub fn summary(&self) -> ClosedLoopSummary {
        ClosedLoopSummary {
            energy_kwh: self.energy_kwh(),
            tracking_rmse_mps: self.tracking_rmse(TRACKING_TRANSIENT_S),
            duration_s: self.duration_s(),
        }
    }

    /// Writes `t_s,s_true_m,s_hat_m,v_mps,v_ref_mps,u_N,power_W`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for x in &self.samples {
            w.serialize(x)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Number of consecutive samples at standstill after which the run is ended.
const HALT_SAMPLES: usize = 25;

/// Drives the plant along `plan` from rest at its origin. Each step the localizer
/// supplies the position the controller believes, the preview is built there, and the
/// first optimal input is applied to the plant. Ends at the route end, when the vehicle
/// has come to a halt, or after `duration` seconds.
pub fn closed_loop(
    plant: &VehicleParams,
    cfg: &MpcConfig,
    plan: &VelocityPlan,
    map: &GradeMap,
    localizer: &Localizer,
    duration: f64,
) -> Result<ClosedLoopLog> {
    cfg.validate()?;
    plant.validate()?;
    if (plant.sample_time - cfg.dt).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "plant sample time {} s differs from controller dt {} s",
            plant.sample_time, cfg.dt
        )));
    }
    let mut filter = match localizer {
        Localizer::Ekf { noise, ekf } => {
            noise.validate()?;
            ekf.validate()?;
            if ekf.theta_source != ThetaSource::Measured {
                return Err(Error::Config(
                    "closed-loop filtering needs the measured inclination channel".into(),
                ));
            }
            Some((SensorSampler::new(noise), ekf.clone(), EkfEstimate::new(0.0, 0.0, ekf.p0)))
        }
        _ => None,
    };
    let dt = cfg.dt;
    let steps = (duration / dt).ceil() as usize;
    let (mut s, mut v) = (0.0, 0.0);
    let mut warm: Option<Vec<f64>> = None;
    let mut samples = Vec::new();
    let mut infeasible_steps = 0;
    let mut halted = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let s_hat = match (localizer, &mut filter) {
            (Localizer::Truth, _) => s,
            (Localizer::Offset(m), _) => s + m,
            (Localizer::Ekf { .. }, Some((sampler, ekf, prior))) => {
                let reading = sampler.chassis(s, v, map);
                let post = update(prior, reading.wheel_speed, reading.inclination, map, ekf)?;
                *prior = post.estimate;
                post.estimate.position()
            }
            (Localizer::Ekf { .. }, None) => unreachable!("filter state is created with the localizer"),
        };
        let preview = build_preview(s_hat, v.max(cfg.launch_speed), plan, map, cfg);
        let sol = solve(v, &preview, plant, cfg, warm.as_deref())?;
        if sol.infeasible {
            infeasible_steps += 1;
        }
        let u = sol.u0;
        let theta = map.inclination_at(s);
        let v_next = step_time(v, theta, u, plant, dt);
        samples.push(ClosedLoopSample {
            t_s: t,
            s_true_m: s,
            s_hat_m: s_hat,
            v_mps: v,
            v_ref_mps: plan.v_ref_at(s),
            u_n: u,
            power_w: wheel_power(v, u),
        });
        if let Some((sampler, ekf, estimate)) = &mut filter {
            let accel = sampler.accelerometer(t, s, (v_next - v) / dt, map);
            *estimate = predict(estimate, accel, dt, map, ekf);
        }
        let mut next = sol.inputs[1..].to_vec();
        next.push(sol.inputs[cfg.horizon - 1]);
        warm = Some(next);
        s += v * dt;
        v = v_next;
        halted = if v == 0.0 && s > 0.0 { halted + 1 } else { 0 };
        if s >= plan.length() || halted >= HALT_SAMPLES {
            break;
        }
    }
    Ok(ClosedLoopLog {
        dt,
        samples,
        infeasible_steps,
    })
}
