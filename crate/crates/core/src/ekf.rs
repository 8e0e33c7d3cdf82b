//! Extended Kalman filter over the longitudinal state `[s, v]`.
//!
//! Process model (forward Euler, accelerometer as input, gravity removed through the map):
//!
//! ```text
//! s' = s + v dt
//! v' = v + (a_sensor - g p(s)) dt + w dt,      w ~ N(0, q)
//! ```
//!
//! Measurements are wheel speed and road inclination:
//!
//! ```text
//! v_m     = v          + eta_v,                 eta_v     ~ N(0, r_v)
//! theta_m = asin(p(s)) + eta_theta,             eta_theta ~ N(0, r_theta)
//! ```
//!
//! Position becomes observable only through the inclination channel, with a gain
//! proportional to the local grade slope `p'(s)`; on a flat road the filter degrades to
//! velocity integration.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade_map::{GradeMap, MIN_COS_SQUARED};
use crate::sensor_sim::{inclination_from_sensors, DiffMode, SensorTrace, GRAVITY};

/// Eigenvalue tolerance used when checking covariance positive semi-definiteness.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Where the filter gets its inclination measurement from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaSource {
    /// Use the trace's own inclination channel.
    Measured,
    /// Reconstruct inclination from accelerometer and differentiated wheel speed.
    Derived { alpha: f64, diff_mode: DiffMode },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfConfig {
    /// Variance of the acceleration process noise `w`.
    pub q: f64,
    pub r_v: f64,
    pub r_theta: f64,
    pub p0: Matrix2<f64>,
    pub g: f64,
    pub theta_source: ThetaSource,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            q: 0.0025,
            r_v: 0.01,
            r_theta: 1e-4,
            p0: Matrix2::from_diagonal(&Vector2::new(1.0, 0.25)),
            g: GRAVITY,
            theta_source: ThetaSource::Measured,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.r_v > 0.0 && self.r_theta > 0.0) {
            return Err(Error::Config("q, r_v and r_theta must be > 0".into()));
        }
        if !(self.g > 0.0) {
            return Err(Error::Config("g must be > 0".into()));
        }
        if !is_psd(&self.p0) {
            return Err(Error::Config("p0 must be symmetric PSD".into()));
        }
        if let ThetaSource::Derived { alpha, .. } = self.theta_source {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::Config("filter alpha must be in (0, 1]".into()));
            }
        }
        Ok(())
    }

    fn measurement_noise(&self) -> Matrix2<f64> {
        Matrix2::new(self.r_v, 0.0, 0.0, self.r_theta)
    }
}

/// Gaussian estimate of `[position, velocity]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EkfEstimate {
    pub mean: Vector2<f64>,
    pub covariance: Matrix2<f64>,
}

impl EkfEstimate {
    pub fn new(position: f64, velocity: f64, covariance: Matrix2<f64>) -> Self {
        Self {
            mean: Vector2::new(position, velocity),
            covariance,
        }
    }

    pub fn position(&self) -> f64 {
        self.mean[0]
    }

    pub fn velocity(&self) -> f64 {
        self.mean[1]
    }

    pub fn is_consistent(&self) -> bool {
        is_psd(&self.covariance)
    }
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn symmetric_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let r = half_diff.hypot(m[(0, 1)]);
    (mean - r, mean + r)
}

/// Symmetric (to 1e-9 relative) with both eigenvalues above `-PSD_TOLERANCE`.
pub fn is_psd(m: &Matrix2<f64>) -> bool {
    let scale = m.abs().max().max(1.0);
    if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-9 * scale || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    symmetric_eigenvalues(m).0 >= -PSD_TOLERANCE
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Noise-free process model.
pub fn process_mean(x: &Vector2<f64>, a_sensor: f64, dt: f64, map: &GradeMap, g: f64) -> Vector2<f64> {
    let (s, v) = (x[0], x[1]);
    Vector2::new(s + v * dt, v + (a_sensor - g * map.grade_at(s)) * dt)
}

/// Jacobian of [`process_mean`] with respect to the state.
pub fn process_jacobian(s: f64, dt: f64, map: &GradeMap, g: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, -g * map.grade_slope_at(s) * dt, 1.0)
}

/// Noise-free measurement model `[v, asin(p(s))]`.
pub fn measurement_mean(x: &Vector2<f64>, map: &GradeMap) -> Vector2<f64> {
    Vector2::new(x[1], map.grade_at(x[0]).asin())
}

/// Jacobian of [`measurement_mean`]. The `1/sqrt(1-p^2)` factor is capped at
/// `1 - p^2 = MIN_COS_SQUARED`.
pub fn measurement_jacobian(s: f64, map: &GradeMap) -> Matrix2<f64> {
    let p = map.grade_at(s);
    let cos2 = (1.0 - p * p).max(MIN_COS_SQUARED);
    Matrix2::new(0.0, 1.0, map.grade_slope_at(s) / cos2.sqrt(), 0.0)
}

/// Time update: propagate mean through the process model and
/// `P <- F P F' + G q G'` with `G = [0, dt]'`.
pub fn predict(
    est: &EkfEstimate,
    a_sensor: f64,
    dt: f64,
    map: &GradeMap,
    cfg: &EkfConfig,
) -> EkfEstimate {
    let f = process_jacobian(est.position(), dt, map, cfg.g);
    let noise_input = Vector2::new(0.0, dt);
    let covariance = f * est.covariance * f.transpose()
        + noise_input * noise_input.transpose() * cfg.q;
    EkfEstimate {
        mean: process_mean(&est.mean, a_sensor, dt, map, cfg.g),
        covariance: symmetrize(covariance),
    }
}

/// Result of a measurement update, with the quantities needed for consistency tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub estimate: EkfEstimate,
    pub innovation: Vector2<f64>,
    pub innovation_covariance: Matrix2<f64>,
    /// Normalized innovation squared `y' S^-1 y`.
    pub nis: f64,
}

/// Measurement update with Joseph-form covariance.
pub fn update(
    est: &EkfEstimate,
    v_m: f64,
    theta_m: f64,
    map: &GradeMap,
    cfg: &EkfConfig,
) -> Result<UpdateOutcome> {
    let h = measurement_jacobian(est.position(), map);
    let r = cfg.measurement_noise();
    let p = est.covariance;
    let s = h * p * h.transpose() + r;
    let scale = s.abs().max();
    if !(s.determinant() > 1e-14 * scale * scale) {
        return Err(Error::Numerical(format!(
            "innovation covariance is singular (det = {:e})",
            s.determinant()
        )));
    }
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("innovation covariance not invertible".into()))?;
    let innovation = Vector2::new(v_m, theta_m) - measurement_mean(&est.mean, map);
    let gain = p * h.transpose() * s_inv;
    let i_kh = Matrix2::identity() - gain * h;
    let covariance = symmetrize(i_kh * p * i_kh.transpose() + gain * r * gain.transpose());
    let nis = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    Ok(UpdateOutcome {
        estimate: EkfEstimate {
            mean: est.mean + gain * innovation,
            covariance,
        },
        innovation,
        innovation_covariance: s,
        nis,
    })
}

/// Per-sample filter output: the posterior after sample `k`'s measurements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterStep {
    pub t: f64,
    pub estimate: EkfEstimate,
    pub nis: f64,
}

/// Runs update-then-predict over every sample of the trace.
pub fn run_filter(
    trace: &SensorTrace,
    map: &GradeMap,
    cfg: &EkfConfig,
    init: EkfEstimate,
) -> Result<Vec<FilterStep>> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot filter an empty trace"));
    }
    let theta = inclination_channel(trace, cfg.theta_source)?;
    let mut est = init;
    let mut out = Vec::with_capacity(trace.len());
    for k in 0..trace.len() {
        let upd = update(&est, trace.wheel_speed[k], theta[k], map, cfg)?;
        out.push(FilterStep {
            t: trace.time(k),
            estimate: upd.estimate,
            nis: upd.nis,
        });
        est = predict(&upd.estimate, trace.accel[k], trace.dt, map, cfg);
    }
    Ok(out)
}

/// The inclination samples the filter consumes for the given source.
pub fn inclination_channel(trace: &SensorTrace, source: ThetaSource) -> Result<Vec<f64>> {
    match source {
        ThetaSource::Measured => trace
            .inclination
            .clone()
            .ok_or_else(|| Error::invalid("trace has no inclination channel; use a derived source")),
        ThetaSource::Derived { alpha, diff_mode } => {
            if trace.len() < 2 {
                // a single sample carries no derivative information
                return Ok(vec![0.0; trace.len()]);
            }
            Ok(inclination_from_sensors(trace, alpha, diff_mode)?.theta)
        }
    }
}

/// Dead-reckoning baseline: left Riemann sum of wheel speed.
pub fn integrate_velocity(trace: &SensorTrace, s0: f64) -> Vec<f64> {
    let mut s = s0;
    trace
        .wheel_speed
        .iter()
        .map(|v| {
            let current = s;
            s += v * trace.dt;
            current
        })
        .collect()
}

/// Writes `t_s,s_hat_m,v_hat_mps,p11,p12,p22,nis`.
pub fn write_estimates_csv(steps: &[FilterStep], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_s", "s_hat_m", "v_hat_mps", "p11", "p12", "p22", "nis"])?;
    for st in steps {
        let p = st.estimate.covariance;
        w.write_record(&[
            st.t.to_string(),
            st.estimate.position().to_string(),
            st.estimate.velocity().to_string(),
            p[(0, 0)].to_string(),
            p[(0, 1)].to_string(),
            p[(1, 1)].to_string(),
            st.nis.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
