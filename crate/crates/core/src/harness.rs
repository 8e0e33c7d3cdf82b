//! Experiment drivers: synthetic roads, Monte-Carlo localization, planning and the
//! energy cost of a localization offset, with text and JSON reports.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{max_speed_plan, plan_route, PlanSummary, PlannerConfig, RouteProfile, SpeedBounds, VelocityPlan};
use crate::ekf::{integrate_velocity, run_filter, EkfConfig, EkfEstimate, FilterStep};
use crate::error::{Error, Result};
use crate::grade_map::GradeMap;
use crate::mpc::{closed_loop, ClosedLoopLog, ClosedLoopSummary, Localizer, MpcConfig};
use crate::sensor_sim::{simulate_truth, synthesize_sensors, GroundTruth, NoiseSpec, SensorTrace};
use crate::vehicle::VehicleParams;

/// Mixed into the run seed for the initial-position draw, so it does not share a
/// stream with the sensor noise.
const INIT_STREAM: u64 = 0x5EED_0F_1A17;

pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::invalid(format!(
            "rmse needs equal lengths, got {} and {}",
            estimates.len(),
            truth.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::invalid("rmse of an empty series"));
    }
    let sum: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn check_length(length: f64, ds: f64) -> Result<()> {
    if !(length > 0.0 && ds > 0.0 && ds <= length) {
        return Err(Error::invalid("need 0 < ds <= length"));
    }
    Ok(())
}

/// Road whose altitude is the polynomial `z(s) = sum c_i s^i` of arc length `s`
/// (coefficients in meters), so the stored grade is `z'(s)`.
pub fn polynomial_road(coeffs: &[f64], length: f64, ds: f64) -> Result<GradeMap> {
    check_length(length, ds)?;
    let slope = |s: f64| {
        coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * s + i as f64 * c)
    };
    let n = (length / ds).ceil() as usize;
    for k in 0..=n {
        let s = (k as f64 * ds).min(length);
        if !(slope(s).abs() < 1.0) {
            return Err(Error::invalid(format!("road slope |z'({s})| >= 1")));
        }
    }
    GradeMap::from_fn(length, ds, slope)
}

/// Chebyshev polynomial of the first kind `T_n(x)`.
pub fn chebyshev_t(n: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if n == 0 {
        return a;
    }
    for _ in 1..n {
        (a, b) = (b, 2.0 * x * b - a);
    }
    b
}

/// Rolling road with grade `amplitude * T_n(2 s / L - 1)`: the altitude is a polynomial
/// of degree `n + 1` whose hills are spread evenly in angle over the route.
pub fn chebyshev_road(degree: usize, amplitude: f64, length: f64, ds: f64) -> Result<GradeMap> {
    check_length(length, ds)?;
    if !(amplitude.abs() < 1.0) {
        return Err(Error::invalid("grade amplitude must be < 1"));
    }
    GradeMap::from_fn(length, ds, |s| amplitude * chebyshev_t(degree, 2.0 * s / length - 1.0))
}

/// One sinusoidal component of a harmonic road.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub wavelength_m: f64,
    pub phase_rad: f64,
}

/// Sum-of-sines grade profile.
pub fn harmonic_road(components: &[Harmonic], length: f64, ds: f64) -> Result<GradeMap> {
    check_length(length, ds)?;
    let peak: f64 = components.iter().map(|h| h.amplitude.abs()).sum();
    if !(peak < 1.0) || components.iter().any(|h| !(h.wavelength_m > 0.0)) {
        return Err(Error::invalid("harmonic road needs total amplitude < 1 and wavelengths > 0"));
    }
    GradeMap::from_fn(length, ds, |s| {
        components
            .iter()
            .map(|h| h.amplitude * (2.0 * PI * s / h.wavelength_m + h.phase_rad).sin())
            .sum()
    })
}

/// Flat road with the harmonic `components` switched on over `[start, end)`, phases
/// measured from `start`.
pub fn hill_segment_road(
    components: &[Harmonic],
    length: f64,
    start: f64,
    end: f64,
    ds: f64,
) -> Result<GradeMap> {
    if !(0.0 <= start && start < end && end <= length) {
        return Err(Error::invalid("hill segment must satisfy 0 <= start < end <= length"));
    }
    let hills = harmonic_road(components, end - start, ds)?;
    GradeMap::from_fn(length, ds, |s| {
        if (start..end).contains(&s) {
            hills.grade_at(s - start)
        } else {
            0.0
        }
    })
}

/// Incommensurate hills of 100-400 m wavelength, peak grade 0.12.
pub fn rolling_hills() -> Vec<Harmonic> {
    vec![
        Harmonic { amplitude: 0.06, wavelength_m: 230.0, phase_rad: 0.0 },
        Harmonic { amplitude: 0.04, wavelength_m: 370.0, phase_rad: 1.0 },
        Harmonic { amplitude: 0.02, wavelength_m: 97.0, phase_rad: 2.0 },
    ]
}

/// Speed limits of an urban arterial: a 17 m/s base with slow stretches.
pub fn traffic_bounds(length: f64) -> Result<SpeedBounds> {
    let ds = 50.0;
    let n = (length / ds).ceil() as usize;
    let arc: Vec<f64> = (0..=n).map(|k| (k as f64 * ds).min(length)).collect();
    let mut arc_unique = arc.clone();
    arc_unique.dedup();
    let v_max = arc_unique
        .iter()
        .map(|&s| 17.0 - 3.0 * (2.0 * PI * s / 1700.0).sin().max(0.0) - 2.0 * (2.0 * PI * s / 900.0 + 0.5).cos().max(0.0))
        .collect();
    SpeedBounds::new(arc_unique, v_max, None)
}

/// Longitudinal acceleration `amplitude * cos(2 pi t / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelProgram {
    pub amplitude: f64,
    pub period: f64,
}

impl AccelProgram {
    pub fn samples(&self, n: usize, dt: f64) -> Vec<f64> {
        (0..n)
            .map(|k| self.amplitude * (2.0 * PI * k as f64 * dt / self.period).cos())
            .collect()
    }
}

/// Everything one localization run needs besides the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationScenario {
    pub map: GradeMap,
    pub duration: f64,
    pub dt: f64,
    pub v0: f64,
    pub accel: AccelProgram,
    pub noise: NoiseSpec,
    pub ekf: EkfConfig,
    /// Standard deviation of the initial position error shared by both estimators (m).
    pub init_sigma: f64,
}

impl LocalizationScenario {
    pub fn samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Position error series of one run, `estimate - truth`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTrace {
    pub t: Vec<f64>,
    pub integration: Vec<f64>,
    pub ekf: Vec<f64>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRun {
    pub seed: u64,
    pub rmse_integration_m: f64,
    pub rmse_ekf_m: f64,
    pub final_error_integration_m: f64,
    pub final_error_ekf_m: f64,
    pub final_error_integration_pct: f64,
    pub final_error_ekf_pct: f64,
    pub max_error_ekf_m: f64,
    pub distance_m: f64,
}

impl LocalizationRun {
    fn from_trace(seed: u64, trace: &ErrorTrace) -> Self {
        let zeros = vec![0.0; trace.t.len()];
        let last = trace.t.len() - 1;
        let fi = trace.integration[last].abs();
        let fe = trace.ekf[last].abs();
        Self {
            seed,
            rmse_integration_m: rmse(&trace.integration, &zeros).unwrap(),
            rmse_ekf_m: rmse(&trace.ekf, &zeros).unwrap(),
            final_error_integration_m: fi,
            final_error_ekf_m: fe,
            final_error_integration_pct: 100.0 * fi / trace.distance,
            final_error_ekf_pct: 100.0 * fe / trace.distance,
            max_error_ekf_m: trace.ekf.iter().fold(0.0, |m, e| e.abs().max(m)),
            distance_m: trace.distance,
        }
    }
}

/// Everything produced by one simulated localization run.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationDetail {
    pub truth: GroundTruth,
    pub trace: SensorTrace,
    /// Initial position handed to both estimators.
    pub s0: f64,
    pub integrated: Vec<f64>,
    pub steps: Vec<FilterStep>,
}

pub fn simulate_localization(scn: &LocalizationScenario, seed: u64) -> Result<LocalizationDetail> {
    let n = scn.samples();
    if n < 2 {
        return Err(Error::Config("localization run needs at least 2 samples".into()));
    }
    let truth = simulate_truth(&scn.accel.samples(n, scn.dt), scn.dt, scn.v0, 0.0)?;
    let distance = truth.position[n - 1];
    if distance > scn.map.end() {
        return Err(Error::Config(format!(
            "the run covers {distance:.0} m but the map ends at {:.0} m",
            scn.map.end()
        )));
    }
    let trace = synthesize_sensors(&truth, &scn.map, &scn.noise.clone().with_seed(seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM);
    let z: f64 = StandardNormal.sample(&mut rng);
    let s0 = scn.init_sigma * z;
    let integrated = integrate_velocity(&trace, s0);
    let init = EkfEstimate::new(s0, trace.wheel_speed[0], scn.ekf.p0);
    let steps = run_filter(&trace, &scn.map, &scn.ekf, init)?;
    Ok(LocalizationDetail {
        truth,
        trace,
        s0,
        integrated,
        steps,
    })
}

/// Simulates one seed and returns the error series of both estimators.
pub fn localization_errors(scn: &LocalizationScenario, seed: u64) -> Result<ErrorTrace> {
    let d = simulate_localization(scn, seed)?;
    let truth = &d.truth;
    Ok(ErrorTrace {
        t: (0..truth.len()).map(|k| truth.time(k)).collect(),
        integration: d.integrated.iter().zip(&truth.position).map(|(e, s)| e - s).collect(),
        ekf: d.steps.iter().zip(&truth.position).map(|(st, s)| st.estimate.position() - s).collect(),
        distance: truth.position[truth.len() - 1],
    })
}

pub fn run_localization(scn: &LocalizationScenario, seed: u64) -> Result<LocalizationRun> {
    Ok(LocalizationRun::from_trace(seed, &localization_errors(scn, seed)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationAverages {
    pub rmse_integration_m: f64,
    pub rmse_ekf_m: f64,
    pub final_error_integration_m: f64,
    pub final_error_ekf_m: f64,
    pub final_error_integration_pct: f64,
    pub final_error_ekf_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub runs: Vec<LocalizationRun>,
    pub average: LocalizationAverages,
}

impl LocalizationReport {
    pub fn from_runs(runs: Vec<LocalizationRun>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("report needs at least one run"));
        }
        let n = runs.len() as f64;
        let mean = |f: fn(&LocalizationRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let average = LocalizationAverages {
            rmse_integration_m: mean(|r| r.rmse_integration_m),
            rmse_ekf_m: mean(|r| r.rmse_ekf_m),
            final_error_integration_m: mean(|r| r.final_error_integration_m),
            final_error_ekf_m: mean(|r| r.final_error_ekf_m),
            final_error_integration_pct: mean(|r| r.final_error_integration_pct),
            final_error_ekf_pct: mean(|r| r.final_error_ekf_pct),
        };
        Ok(Self { runs, average })
    }

    /// Integration RMSE over EKF RMSE, both averaged over runs.
    pub fn rmse_ratio(&self) -> f64 {
        self.average.rmse_integration_m / self.average.rmse_ekf_m
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>16} {:>10} {:>14} {:>12}", "run", "integration[m]", "ekf[m]", "final int[m]", "final ekf[m]");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{:>6} {:>16.3} {:>10.3} {:>14.3} {:>12.3}",
                r.seed, r.rmse_integration_m, r.rmse_ekf_m, r.final_error_integration_m, r.final_error_ekf_m
            );
        }
        let a = &self.average;
        let _ = writeln!(
            out,
            "{:>6} {:>16.3} {:>10.3} {:>14.3} {:>12.3}",
            "avg", a.rmse_integration_m, a.rmse_ekf_m, a.final_error_integration_m, a.final_error_ekf_m
        );
        let _ = writeln!(
            out,
            "final error: integration {:.3} %, ekf {:.3} % of distance; rmse ratio {:.2}",
            a.final_error_integration_pct,
            a.final_error_ekf_pct,
            self.rmse_ratio()
        );
        out
    }
}

/// Runs every seed concurrently; rows come back in seed order.
pub fn run_localization_mc(scn: &LocalizationScenario, seeds: &[u64]) -> Result<LocalizationReport> {
    let runs = seeds
        .par_iter()
        .map(|&seed| run_localization(scn, seed))
        .collect::<Result<Vec<_>>>()?;
    LocalizationReport::from_runs(runs)
}

/// Route, planner and controller settings shared by the planning experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveScenario {
    pub map: GradeMap,
    pub bounds: SpeedBounds,
    pub length: f64,
    pub vehicle: VehicleParams,
    pub planner: PlannerConfig,
    pub mpc: MpcConfig,
}

impl DriveScenario {
    pub fn route(&self) -> Result<RouteProfile> {
        Ok(RouteProfile::from_map(&self.map, self.length, self.planner.ds, &self.bounds)?
            .with_endpoint_ramp(self.planner.ramp_accel))
    }

    pub fn plan(&self, gamma: f64) -> Result<VelocityPlan> {
        let cfg = PlannerConfig {
            gamma,
            ..self.planner.clone()
        };
        plan_route(&self.route()?, &self.vehicle, &cfg)
    }

    /// Time budget for a closed-loop run over the whole plan.
    pub fn duration_cap(&self, plan: &VelocityPlan) -> f64 {
        2.0 * plan.trip_time_s + 60.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub profile: String,
    pub energy_kwh: f64,
    pub trip_time_min: f64,
    /// Energy saved against the max-speed profile (%).
    pub energy_improvement_pct: f64,
    /// Trip time saved against the max-speed profile (%), negative when slower.
    pub time_improvement_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanComparison {
    pub rows: Vec<PlanRow>,
}

impl PlanComparison {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>12} {:>14} {:>14} {:>12}", "profile", "energy[kWh]", "trip time[min]", "energy impr[%]", "time impr[%]");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} {:>12.4} {:>14.2} {:>14.1} {:>12.1}",
                r.profile, r.energy_kwh, r.trip_time_min, r.energy_improvement_pct, r.time_improvement_pct
            );
        }
        out
    }
}

/// Plans at each `gamma` and compares with driving at the upper speed bound.
pub fn compare_plans(scn: &DriveScenario, gammas: &[f64]) -> Result<(PlanComparison, Vec<VelocityPlan>)> {
    let route = scn.route()?;
    let reference = max_speed_plan(&route, &scn.vehicle, scn.planner.u_min, scn.planner.u_max)?;
    let plans = gammas
        .par_iter()
        .map(|&g| scn.plan(g))
        .collect::<Result<Vec<_>>>()?;
    let row = |name: String, p: &VelocityPlan| PlanRow {
        profile: name,
        energy_kwh: p.energy_kwh,
        trip_time_min: p.trip_time_s / 60.0,
        energy_improvement_pct: 100.0 * (reference.energy_kwh - p.energy_kwh) / reference.energy_kwh,
        time_improvement_pct: 100.0 * (reference.trip_time_s - p.trip_time_s) / reference.trip_time_s,
    };
    let mut rows = vec![row("max speed".into(), &reference)];
    for (g, p) in gammas.iter().zip(&plans) {
        rows.push(row(format!("optimal (gamma={g})"), p));
    }
    let mut all = vec![reference];
    all.extend(plans);
    Ok((PlanComparison { rows }, all))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyOffsetReport {
    pub segment_start_m: f64,
    pub segment_end_m: f64,
    pub offset_m: f64,
    pub energy_truth_kwh: f64,
    pub energy_offset_kwh: f64,
    /// `(offset - truth) / truth`.
    pub relative_increase: f64,
}

impl EnergyOffsetReport {
    pub fn render_text(&self) -> String {
        format!(
            "segment {:.0}-{:.0} m\n{:<22} {:>10.4} kWh\n{:<22} {:>10.4} kWh\nincrease {:+.2} %\n",
            self.segment_start_m,
            self.segment_end_m,
            "true position",
            self.energy_truth_kwh,
            format!("{} m offset", self.offset_m),
            self.energy_offset_kwh,
            100.0 * self.relative_increase
        )
    }
}

/// Drives the whole plan twice, with true and with offset position, and compares the
/// wheel energy spent while the vehicle is inside `[a, b)`.
pub fn run_energy_vs_offset(
    scn: &DriveScenario,
    plan: &VelocityPlan,
    segment: (f64, f64),
    offset_m: f64,
) -> Result<(EnergyOffsetReport, ClosedLoopLog, ClosedLoopLog)> {
    let (a, b) = segment;
    if !(a < b && a >= 0.0 && b <= plan.length()) {
        return Err(Error::Config(format!(
            "segment {a}:{b} must lie inside the route [0, {}]",
            plan.length()
        )));
    }
    let cap = scn.duration_cap(plan);
    let run = |loc: Localizer| closed_loop(&scn.vehicle, &scn.mpc, plan, &scn.map, &loc, cap);
    let (truth, offset) = rayon::join(|| run(Localizer::Truth), || run(Localizer::Offset(offset_m)));
    let (truth, offset) = (truth?, offset?);
    let e_truth = truth.energy_between_kwh(a, b);
    let e_offset = offset.energy_between_kwh(a, b);
    let report = EnergyOffsetReport {
        segment_start_m: a,
        segment_end_m: b,
        offset_m,
        energy_truth_kwh: e_truth,
        energy_offset_kwh: e_offset,
        relative_increase: (e_offset - e_truth) / e_truth,
    };
    Ok((report, truth, offset))
}

/// Writes any report as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

/// Renders a JSON report written by any experiment back into its text table.
pub fn render_report(json: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(json)?;
        if let Ok(r) = serde_json::from_value::<LocalizationReport>(value.clone()) {
        return Ok(r.render_text());
    }
    if let Ok(r) = serde_json::from_value::<PlanComparison>(value.clone()) {
        return Ok(r.render_text());
    }
    if let Ok(r) = serde_json::from_value::<EnergyOffsetReport>(value.clone()) {
        return Ok(r.render_text());
    }
    if let Ok(r) = serde_json::from_value::<ClosedLoopSummary>(value.clone()) {
        return Ok(format!(
            "energy {:.4} kWh\ntracking rmse {:.3} m/s\nduration {:.1} s\n",
            r.energy_kwh, r.tracking_rmse_mps, r.duration_s
        ));
    }
    if let Ok(r) = serde_json::from_value::<PlanSummary>(value) {
        let gamma = r.gamma.map_or("max speed".to_string(), |g| format!("gamma {g}"));
        return Ok(format!(
            "{gamma}\nenergy {:.4} kWh\ntrip time {:.2} min\n",
            r.energy_kwh, r.trip_time_min
        ));
    }
    Err(Error::invalid("not a recognised report"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_cases() {
        let truth = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[3.0, 4.0, 5.0], &truth).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-15);
        assert!(rmse(&[1.0], &truth).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn slope_of_a_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        assert_abs_diff_eq!(ls_slope(&x, &y), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn polynomial_roads() {
        let linear = polynomial_road(&[5.0, 0.02], 500.0, 10.0).unwrap();
        assert!(linear.grade().iter().all(|p| (p - 0.02).abs() < 1e-15));
        let flat = polynomial_road(&[0.0], 500.0, 10.0).unwrap();
        assert!(flat.grade().iter().all(|p| *p == 0.0));
        assert!(polynomial_road(&[0.0, 1.5], 100.0, 10.0).is_err());
        // z = s^3/3e6 - s^2/2e3 * 0.3 + ... slope z' = (s - 200)(s - 700) * 1e-6
        let c = [0.0, 0.14, -0.00045, 1e-6 / 3.0];
        let map = polynomial_road(&c, 1000.0, 1.0).unwrap();
        for root in [200.0, 700.0] {
            let before = map.grade_at(root - 1.0);
            let after = map.grade_at(root + 1.0);
            assert!(before * after < 0.0, "no sign change at {root}");
        }
    }

    #[test]
    fn chebyshev_values() {
        for x in [-1.0, -0.3, 0.0, 0.45, 1.0] {
            let theta: f64 = f64::acos(x);
            for n in 0..12 {
                assert_abs_diff_eq!(chebyshev_t(n, x), (n as f64 * theta).cos(), epsilon = 1e-12);
            }
        }
        let road = chebyshev_road(10, 0.1, 1000.0, 1.0).unwrap();
        assert_abs_diff_eq!(road.grade_at(0.0), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(road.grade_at(1000.0), 0.1, epsilon = 1e-12);
        assert!(road.grade().iter().all(|p| p.abs() <= 0.1 + 1e-12));
    }

    #[test]
    fn harmonic_and_bounds_presets() {
        let road = harmonic_road(&rolling_hills(), 2000.0, 1.0).unwrap();
        assert!(road.grade().iter().all(|p| p.abs() < 0.12));
        let b = traffic_bounds(5000.0).unwrap();
        assert_eq!(*b.arc.last().unwrap(), 5000.0);
        assert!(b.v_max.iter().all(|&v| (12.0..=17.0).contains(&v)));
        assert!(b.v_min.iter().zip(&b.v_max).all(|(lo, hi)| *lo == 0.5 * hi));
    }

    fn quiet_scenario() -> LocalizationScenario {
        LocalizationScenario {
            map: chebyshev_road(10, 0.1, 1100.0, 1.0).unwrap(),
            duration: 100.0,
            dt: 0.1,
            v0: 10.0,
            accel: AccelProgram { amplitude: 0.3, period: 40.0 },
            noise: NoiseSpec::noiseless(),
            ekf: EkfConfig {
                q: 1e-9,
                r_v: 1e-6,
                r_theta: 1e-6,
                ..EkfConfig::default()
            },
            init_sigma: 0.0,
        }
    }

    #[test]
    fn noiseless_runs_are_exact() {
        let report = run_localization_mc(&quiet_scenario(), &[0, 1]).unwrap();
        for r in &report.runs {
            assert!(r.rmse_integration_m < 1e-6, "{}", r.rmse_integration_m);
            assert!(r.rmse_ekf_m < 1e-6, "{}", r.rmse_ekf_m);
        }
    }

    #[test]
    fn report_arithmetic_and_determinism() {
        let scn = LocalizationScenario {
            noise: NoiseSpec::default(),
            ekf: EkfConfig::default(),
            init_sigma: 0.2,
            ..quiet_scenario()
        };
        let a = run_localization_mc(&scn, &[3, 4, 5]).unwrap();
        let b = run_localization_mc(&scn, &[3, 4, 5]).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let mean = a.runs.iter().map(|r| r.rmse_ekf_m).sum::<f64>() / 3.0;
        assert!((a.average.rmse_ekf_m - mean).abs() < 1e-12);
        for r in &a.runs {
            assert!((r.final_error_ekf_pct - 100.0 * r.final_error_ekf_m / r.distance_m).abs() < 1e-12);
        }
        assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(a.render_text().contains("avg"));
    }

    #[test]
    fn short_map_is_a_config_error() {
        let scn = LocalizationScenario {
            map: chebyshev_road(4, 0.05, 300.0, 1.0).unwrap(),
            ..quiet_scenario()
        };
        assert_eq!(run_localization(&scn, 0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn reports_render_back_from_json() {
        let offset = EnergyOffsetReport {
            segment_start_m: 100.0,
            segment_end_m: 200.0,
            offset_m: 60.0,
            energy_truth_kwh: 0.1,
            energy_offset_kwh: 0.115,
            relative_increase: 0.15,
        };
        let text = render_report(&serde_json::to_string(&offset).unwrap()).unwrap();
        assert_eq!(text, offset.render_text());
        let summary = PlanSummary { energy_kwh: 0.4, trip_time_min: 31.4, gamma: None };
        let text = render_report(&serde_json::to_string(&summary).unwrap()).unwrap();
        assert!(text.starts_with("max speed"), "{text}");
        let cl = ClosedLoopSummary { energy_kwh: 0.2, tracking_rmse_mps: 0.1, duration_s: 60.0 };
        assert!(render_report(&serde_json::to_string(&cl).unwrap()).unwrap().contains("tracking"));
        assert_eq!(render_report("{\"x\": 1}").unwrap_err().exit_code(), 2);
        assert_eq!(render_report("not json").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn energy_rises_and_time_falls_with_gamma() {
        let scn = DriveScenario {
            map: harmonic_road(&rolling_hills(), 2000.0, 1.0).unwrap(),
            bounds: traffic_bounds(2000.0).unwrap(),
            length: 2000.0,
            vehicle: VehicleParams::default(),
            planner: PlannerConfig::default(),
            mpc: MpcConfig::default(),
        };
        let (cmp, _) = compare_plans(&scn, &[0.1, 1.0, 10.0]).unwrap();
        let rows = &cmp.rows[1..];
        for w in rows.windows(2) {
            assert!(w[0].energy_kwh <= w[1].energy_kwh + 1e-9, "{}", cmp.render_text());
            assert!(w[0].trip_time_min >= w[1].trip_time_min - 1e-9, "{}", cmp.render_text());
        }
        assert!(rows.iter().all(|r| r.energy_improvement_pct > 0.0), "{}", cmp.render_text());
    }
}
