//! Longitudinal force balance shared by the planner, the controller and the plant.
//!
//! `m dv/dt = u - F_airdrag - F_rolling - F_gravity` with
//! `F_airdrag = rho C_d A_f v^2 / 2`, `F_rolling = m g C_r cos(theta)` and
//! `F_gravity = m g sin(theta)`, where `u` is traction minus brake force.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor_sim::GRAVITY;

/// Joules per kilowatt-hour.
pub const J_PER_KWH: f64 = 3.6e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub m: f64,
    /// Frontal area (m^2).
    #[serde(rename = "A_f")]
    pub frontal_area: f64,
    /// Air density (kg/m^3).
    pub rho: f64,
    #[serde(rename = "C_d")]
    pub drag_coefficient: f64,
    #[serde(rename = "C_r")]
    pub rolling_coefficient: f64,
    pub g: f64,
    /// Controller / plant sampling time (s).
    #[serde(rename = "T_s")]
    pub sample_time: f64,
}

impl Default for VehicleParams {
    /// Mid-size passenger car.
    fn default() -> Self {
        Self {
            m: 1360.0,
            frontal_area: 2.30,
            rho: 1.225,
            drag_coefficient: 0.24,
            rolling_coefficient: 0.01,
            g: GRAVITY,
            sample_time: 0.2,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m,
            self.frontal_area,
            self.rho,
            self.drag_coefficient,
            self.rolling_coefficient,
            self.g,
            self.sample_time,
        ];
        if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("vehicle parameters must all be > 0".into()));
        }
        Ok(())
    }

    /// `rho C_d A_f / 2`, the coefficient of `v^2` in the drag force.
    pub fn drag_factor(&self) -> f64 {
        0.5 * self.rho * self.drag_coefficient * self.frontal_area
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceBreakdown {
    /// Traction minus brake force.
    pub input: f64,
    pub airdrag: f64,
    pub rolling: f64,
    pub gravity: f64,
    pub total: f64,
}

pub fn forces(v: f64, theta: f64, u: f64, p: &VehicleParams) -> ForceBreakdown {
    let airdrag = p.drag_factor() * v * v;
    let rolling = p.m * p.g * p.rolling_coefficient * theta.cos();
    let gravity = p.m * p.g * theta.sin();
    ForceBreakdown {
        input: u,
        airdrag,
        rolling,
        gravity,
        total: u - airdrag - rolling - gravity,
    }
}

/// Forward-Euler time step. A vehicle at rest stays at rest unless `u` overcomes
/// rolling resistance plus gravity; speed never goes negative.
pub fn step_time(v: f64, theta: f64, u: f64, p: &VehicleParams, dt: f64) -> f64 {
    let f = forces(v, theta, u, p);
    if v <= 0.0 && u <= f.rolling + f.gravity {
        return 0.0;
    }
    (v + dt * f.total / p.m).max(0.0)
}

/// Outcome of a spatial step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialStep {
    pub v: f64,
    /// The radicand went negative: the vehicle stops inside the cell.
    pub clamped: bool,
}

/// Constant-acceleration spatial step `v' = sqrt(v^2 + 2 ds F_total / m)`, which stays
/// regular at `v = 0`.
pub fn step_spatial(v: f64, theta: f64, u: f64, p: &VehicleParams, ds: f64) -> SpatialStep {
    let f = forces(v, theta, u, p);
    let radicand = v * v + 2.0 * ds * f.total / p.m;
    if radicand < 0.0 {
        SpatialStep {
            v: 0.0,
            clamped: true,
        }
    } else {
        SpatialStep {
            v: radicand.sqrt(),
            clamped: false,
        }
    }
}

/// Wheel power counting traction only (W).
pub fn wheel_power(v: f64, u: f64) -> f64 {
    v * u.max(0.0)
}

/// Positive wheel work over spatial segments `(u, ds)` in kWh.
pub fn trip_energy<I>(segments: I) -> f64
where
    I: IntoIterator<Item = (f64, f64)>,
{
    segments.into_iter().map(|(u, ds)| u.max(0.0) * ds).sum::<f64>() / J_PER_KWH
}

/// Positive wheel work from sampled power, `sum(power * dt)`, in kWh.
pub fn trip_energy_from_power(power: &[f64], dt: f64) -> f64 {
    power.iter().map(|p| p.max(0.0) * dt).sum::<f64>() / J_PER_KWH
}
