//! Synthetic wheel-speed / accelerometer / inclination traces and the signal
//! processing that turns them back into road inclination.
//!
//! The accelerometer sees gravity along the road: `a_sensor = a + g * sin(theta)`.
//! A linearly drifting bias is injected at the acceleration level as `g * b * t`, where
//! `b` is the drift rate of the inclination it induces (rad/s). Fitting `b` against a
//! reference slope profile and subtracting `g * b * t` again therefore cancels exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade_map::{read_csv_rows, GradeMap};

/// Gravitational acceleration (m/s^2).
pub const GRAVITY: f64 = 9.81;

/// Default smoothing factor of the exponential low-pass filter.
pub const DEFAULT_FILTER_ALPHA: f64 = 0.2;

/// Fraction of clamped samples above which an inclination estimate is flagged.
pub const CLAMP_WARNING_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Wheel-speed noise standard deviation (m/s).
    pub sigma_v: f64,
    /// Noise of the directly measured inclination channel (rad).
    pub sigma_theta: f64,
    /// Accelerometer white noise (m/s^2).
    pub accel_noise_std: f64,
    /// Inclination drift rate `b` (rad/s); injected on the accelerometer as `g*b*t`.
    pub bias_rate: f64,
    /// Variance of the process noise `w` the filter should assume ((m/s^2)^2).
    pub process_noise_q: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_v: 0.1,
            sigma_theta: 0.01,
            accel_noise_std: 0.05,
            bias_rate: 0.0,
            process_noise_q: 0.0025,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    /// No noise, no bias.
    pub fn noiseless() -> Self {
        Self {
            sigma_v: 0.0,
            sigma_theta: 0.0,
            accel_noise_std: 0.0,
            bias_rate: 0.0,
            process_noise_q: 1e-9,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.sigma_v, self.sigma_theta, self.accel_noise_std];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise standard deviations must be >= 0".into()));
        }
        if !(self.process_noise_q.is_finite() && self.process_noise_q >= 0.0) {
            return Err(Error::Config("process_noise_q must be >= 0".into()));
        }
        if !self.bias_rate.is_finite() {
            return Err(Error::Config("bias_rate must be finite".into()));
        }
        Ok(())
    }
}

/// True longitudinal trajectory, uniformly sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub dt: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// True longitudinal acceleration applied from sample `k` to `k + 1`.
    pub accel: Vec<f64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Largest residual of the forward-Euler recursion; zero up to rounding.
    pub fn consistency_residual(&self) -> f64 {
        (1..self.len())
            .map(|k| {
                let ds = self.position[k] - self.position[k - 1] - self.velocity[k - 1] * self.dt;
                let dv = self.velocity[k] - self.velocity[k - 1] - self.accel[k - 1] * self.dt;
                ds.abs().max(dv.abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Integrates `s' = v`, `v' = a` with forward Euler, the same discretization the
/// filter's process model uses.
pub fn simulate_truth(accel_program: &[f64], dt: f64, v0: f64, s0: f64) -> Result<GroundTruth> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt must be positive"));
    }
    if accel_program.is_empty() {
        return Err(Error::invalid("acceleration program is empty"));
    }
    if !(v0 >= 0.0 && v0.is_finite() && s0.is_finite()) {
        return Err(Error::invalid("initial state must be finite with v0 >= 0"));
    }
    let n = accel_program.len();
    let mut position = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    let (mut s, mut v) = (s0, v0);
    for k in 0..n {
        position.push(s);
        velocity.push(v);
        s += v * dt;
        v += accel_program[k] * dt;
        if k + 1 < n && v < 0.0 {
            return Err(Error::invalid(format!(
                "velocity goes negative at sample {}",
                k + 1
            )));
        }
    }
    Ok(GroundTruth {
        dt,
        position,
        velocity,
        accel: accel_program.to_vec(),
    })
}

/// Uniformly sampled sensor record. `inclination` is present when the source
/// provides a direct inclination channel (synthetic data always does).
#[derive(Clone, Debug, PartialEq)]
pub struct SensorTrace {
    pub dt: f64,
    pub t0: f64,
    pub wheel_speed: Vec<f64>,
    pub accel: Vec<f64>,
    pub inclination: Option<Vec<f64>>,
}

impl SensorTrace {
    pub fn new(dt: f64, t0: f64, wheel_speed: Vec<f64>, accel: Vec<f64>) -> Result<Self> {
        let trace = Self {
            dt,
            t0,
            wheel_speed,
            accel,
            inclination: None,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t0.is_finite()) {
            return Err(Error::invalid("trace needs dt > 0 and finite t0"));
        }
        if self.wheel_speed.len() != self.accel.len() {
            return Err(Error::invalid("wheel speed and accel lengths differ"));
        }
        if let Some(inc) = &self.inclination {
            if inc.len() != self.accel.len() {
                return Err(Error::invalid("inclination length differs"));
            }
        }
        let channels = self
            .wheel_speed
            .iter()
            .chain(&self.accel)
            .chain(self.inclination.iter().flatten());
        if channels.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("trace contains non-finite samples"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Writes `t_s,wheel_speed_mps,accel_mps2[,inclination_rad]`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t_s", "wheel_speed_mps", "accel_mps2"];
        if self.inclination.is_some() {
            header.push("inclination_rad");
        }
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![
                self.time(k).to_string(),
                self.wheel_speed[k].to_string(),
                self.accel[k].to_string(),
            ];
            if let Some(inc) = &self.inclination {
                rec.push(inc[k].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a synthetic or logged trace. Sampling must be uniform to 1e-6 s.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t_s: f64,
            wheel_speed_mps: f64,
            accel_mps2: f64,
            #[serde(default)]
            inclination_rad: Option<f64>,
        }
        let path = path.as_ref();
        let rows: Vec<Row> = read_csv_rows(path)?;
        if rows.len() < 2 {
            return Err(Error::Record {
                path: path.to_path_buf(),
                record: rows.len(),
                message: "need >= 2 samples".into(),
            });
        }
        let dt = rows[1].t_s - rows[0].t_s;
        for (k, r) in rows.iter().enumerate() {
            let expected = rows[0].t_s + k as f64 * dt;
            if (r.t_s - expected).abs() > 1e-6 {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    record: k + 1,
                    message: format!("non-uniform sampling: t_s={} expected {expected}", r.t_s),
                });
            }
        }
        let inclination = if rows.iter().all(|r| r.inclination_rad.is_some()) {
            Some(rows.iter().map(|r| r.inclination_rad.unwrap()).collect())
        } else {
            None
        };
        let trace = SensorTrace {
            dt,
            t0: rows[0].t_s,
            wheel_speed: rows.iter().map(|r| r.wheel_speed_mps).collect(),
            accel: rows.iter().map(|r| r.accel_mps2).collect(),
            inclination,
        };
        trace.validate()?;
        Ok(trace)
    }
}

/// One wheel-speed / inclination reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChassisReading {
    pub wheel_speed: f64,
    pub inclination: f64,
}

/// Online noise source for the three sensor channels.
///
/// Each sample draws three standard normals in a fixed order (wheel speed, inclination,
/// accelerometer), so a seed reproduces a trace exactly. The chassis reading is taken
/// before the accelerometer so a controller can act on it within the same sample.
#[derive(Clone, Debug)]
pub struct SensorSampler {
    rng: ChaCha8Rng,
    noise: NoiseSpec,
}

impl SensorSampler {
    pub fn new(noise: &NoiseSpec) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            noise: noise.clone(),
        }
    }

    pub fn chassis(&mut self, s: f64, v: f64, map: &GradeMap) -> ChassisReading {
        let zv: f64 = StandardNormal.sample(&mut self.rng);
        let zt: f64 = StandardNormal.sample(&mut self.rng);
        ChassisReading {
            wheel_speed: v + self.noise.sigma_v * zv,
            inclination: map.inclination_at(s) + self.noise.sigma_theta * zt,
        }
    }

    /// Accelerometer reading at time `t` for true acceleration `a` at position `s`.
    pub fn accelerometer(&mut self, t: f64, s: f64, a: f64, map: &GradeMap) -> f64 {
        let za: f64 = StandardNormal.sample(&mut self.rng);
        a + GRAVITY * map.grade_at(s)
            + GRAVITY * self.noise.bias_rate * t
            + self.noise.accel_noise_std * za
    }
}

/// Generates the sensor record a vehicle following `truth` over `map` would log.
pub fn synthesize_sensors(truth: &GroundTruth, map: &GradeMap, noise: &NoiseSpec) -> SensorTrace {
    let mut sampler = SensorSampler::new(noise);
    let n = truth.len();
    let mut wheel_speed = Vec::with_capacity(n);
    let mut accel = Vec::with_capacity(n);
    let mut inclination = Vec::with_capacity(n);
    for k in 0..n {
        let s = truth.position[k];
        let reading = sampler.chassis(s, truth.velocity[k], map);
        wheel_speed.push(reading.wheel_speed);
        inclination.push(reading.inclination);
        accel.push(sampler.accelerometer(truth.time(k), s, truth.accel[k], map));
    }
    SensorTrace {
        dt: truth.dt,
        t0: 0.0,
        wheel_speed,
        accel,
        inclination: Some(inclination),
    }
}

/// First-order exponential filter `y[k] = alpha*x[k] + (1-alpha)*y[k-1]`, `y[0] = x[0]`.
pub fn low_pass(signal: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1]")));
    }
    let Some(&first) = signal.first() else {
        return Err(Error::invalid("cannot filter an empty signal"));
    };
    let mut y = first;
    Ok(signal
        .iter()
        .map(|&x| {
            y = alpha * x + (1.0 - alpha) * y;
            y
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// Centred differences inside, one-sided at both ends.
    #[default]
    Central,
    Backward,
}

/// Numerical derivative of a uniformly sampled signal.
pub fn differentiate(signal: &[f64], dt: f64, mode: DiffMode) -> Vec<f64> {
    let n = signal.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| match mode {
            DiffMode::Central if k == 0 => (signal[1] - signal[0]) / dt,
            DiffMode::Central if k == n - 1 => (signal[n - 1] - signal[n - 2]) / dt,
            DiffMode::Central => (signal[k + 1] - signal[k - 1]) / (2.0 * dt),
            DiffMode::Backward if k == 0 => (signal[1] - signal[0]) / dt,
            DiffMode::Backward => (signal[k] - signal[k - 1]) / dt,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InclinationEstimate {
    pub theta: Vec<f64>,
    /// Samples whose `asin` argument fell outside `[-1, 1]` and was clamped.
    pub clamp_count: usize,
    /// Set when more than [`CLAMP_WARNING_FRACTION`] of the samples were clamped.
    pub warning: bool,
}

/// Indirect inclination `asin((a_sensor - dv/dt) / g)`.
///
/// Both the accelerometer and the wheel speed pass through the same low-pass filter
/// before the subtraction, so the two signals carry the same phase lag; `dv/dt`
/// comes from differentiating the filtered wheel speed.
pub fn inclination_from_sensors(
    trace: &SensorTrace,
    filter_alpha: f64,
    diff_mode: DiffMode,
) -> Result<InclinationEstimate> {
    if trace.len() < 2 {
        return Err(Error::invalid("inclination needs at least 2 samples"));
    }
    let speed = low_pass(&trace.wheel_speed, filter_alpha)?;
    let accel = low_pass(&trace.accel, filter_alpha)?;
    let vdot = differentiate(&speed, trace.dt, diff_mode);
    let mut clamp_count = 0;
    let theta: Vec<f64> = accel
        .iter()
        .zip(&vdot)
        .map(|(a, vd)| {
            let ratio = (a - vd) / GRAVITY;
            if ratio.abs() > 1.0 {
                clamp_count += 1;
            }
            ratio.clamp(-1.0, 1.0).asin()
        })
        .collect();
    let warning = clamp_count as f64 > CLAMP_WARNING_FRACTION * theta.len() as f64;
    Ok(InclinationEstimate {
        theta,
        clamp_count,
        warning,
    })
}

/// Through-origin least-squares rate of the slope error `theta_measured - theta_reference`,
/// with time measured from the first sample.
pub fn fit_bias(theta_measured: &[f64], theta_reference: &[f64], dt: f64) -> Result<f64> {
    if theta_measured.len() != theta_reference.len() {
        return Err(Error::invalid("slope profiles differ in length"));
    }
    if theta_measured.len() < 2 {
        return Err(Error::invalid("bias fit needs at least 2 samples"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (k, (m, r)) in theta_measured.iter().zip(theta_reference).enumerate() {
        let t = k as f64 * dt;
        num += t * (m - r);
        den += t * t;
    }
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::invalid("all sample times are zero; cannot fit a rate"));
    }
    Ok(num / den)
}

/// Subtracts the accelerometer drift `g * b * t` (small-angle form of the slope bias).
pub fn remove_bias(trace: &SensorTrace, bias_rate: f64) -> SensorTrace {
    let mut out = trace.clone();
    for (k, a) in out.accel.iter_mut().enumerate() {
        *a -= GRAVITY * bias_rate * (trace.t0 + k as f64 * trace.dt);
    }
    out
}
