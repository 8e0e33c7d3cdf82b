//! Experiment configuration: one TOML file with `[map] [noise] [ekf] [vehicle]
//! [planner] [mpc] [experiment]` sections, plus named presets.
//!
//! Every key has a default, so a file only lists what it changes.
//!
//! ```
//! use gradeloc::config::Config;
//!
//! let cfg = Config::from_toml_str(
//!     r#"
//!     [map]
//!     kind = "polynomial"
//!     coeffs = [0.0, 0.02]
//!     length_m = 500.0
//!     ds_m = 5.0
//!
//!     [planner]
//!     gamma = 2.5
//!     "#,
//! )
//! .unwrap();
//! assert_eq!(cfg.planner.gamma, 2.5);
//! assert_eq!(cfg.map().unwrap().grade_at(250.0), 0.02);
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dp::{PlannerConfig, SpeedBounds};
use crate::ekf::{EkfConfig, ThetaSource};
use crate::error::{Error, Result};
use crate::grade_map::{load_elevation_json, load_profile_csv, ElevationProfile, GradeMap};
use crate::harness::{
    chebyshev_road, harmonic_road, hill_segment_road, polynomial_road, rolling_hills,
    traffic_bounds, AccelProgram, DriveScenario, Harmonic, LocalizationScenario,
};
use crate::mpc::{Localizer, MpcConfig};
use crate::sensor_sim::NoiseSpec;
use crate::vehicle::VehicleParams;

/// Names accepted by [`Config::preset`].
pub const PRESETS: [&str; 6] = [
    "calibrated_100s",
    "drift_500s",
    "long_drift",
    "route_5km",
    "offset_hills",
    "offset_flat",
];

/// Source of the road grade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// `grade = amplitude * T_degree(2 s / length - 1)`.
    Chebyshev {
        degree: usize,
        amplitude: f64,
        length_m: f64,
        ds_m: f64,
    },
    /// Altitude polynomial in arc length, coefficients in ascending order.
    Polynomial {
        coeffs: Vec<f64>,
        length_m: f64,
        ds_m: f64,
    },
    Harmonic {
        components: Vec<Harmonic>,
        length_m: f64,
        ds_m: f64,
    },
    /// Flat road with harmonic hills on `[start_m, end_m)`.
    HillSegment {
        components: Vec<Harmonic>,
        length_m: f64,
        start_m: f64,
        end_m: f64,
        ds_m: f64,
    },
    Flat {
        length_m: f64,
        ds_m: f64,
    },
    /// `arc_m,grade` file.
    GradeCsv { path: PathBuf },
    /// `arc_m,elevation_m` file, grade smoothed over `window` knots.
    ProfileCsv { path: PathBuf, window: usize },
    /// Elevation-API style JSON array.
    ElevationJson { path: PathBuf, window: usize },
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec::Chebyshev {
            degree: 10,
            amplitude: 0.1,
            length_m: 1100.0,
            ds_m: 1.0,
        }
    }
}

impl MapSpec {
    pub fn build(&self) -> Result<GradeMap> {
        match self {
            MapSpec::Chebyshev {
                degree,
                amplitude,
                length_m,
                ds_m,
            } => chebyshev_road(*degree, *amplitude, *length_m, *ds_m),
            MapSpec::Polynomial {
                coeffs,
                length_m,
                ds_m,
            } => polynomial_road(coeffs, *length_m, *ds_m),
            MapSpec::Harmonic {
                components,
                length_m,
                ds_m,
            } => harmonic_road(components, *length_m, *ds_m),
            MapSpec::HillSegment {
                components,
                length_m,
                start_m,
                end_m,
                ds_m,
            } => hill_segment_road(components, *length_m, *start_m, *end_m, *ds_m),
            MapSpec::Flat { length_m, ds_m } => GradeMap::from_fn(*length_m, *ds_m, |_| 0.0),
            MapSpec::GradeCsv { path } => GradeMap::read_csv(path),
            MapSpec::ProfileCsv { path, window } => {
                GradeMap::from_elevation(&load_profile_csv(path)?, *window)
            }
            MapSpec::ElevationJson { path, window } => {
                let points = load_elevation_json(path)?;
                GradeMap::from_elevation(&ElevationProfile::from_geo_samples(&points)?, *window)
            }
        }
        .map_err(|e| match e {
            Error::InvalidInput(m) => Error::Config(format!("[map]: {m}")),
            other => other,
        })
    }

    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            MapSpec::GradeCsv { path }
            | MapSpec::ProfileCsv { path, .. }
            | MapSpec::ElevationJson { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// Filter settings as written in the file; the prior covariance is diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfSection {
    pub q: f64,
    pub r_v: f64,
    pub r_theta: f64,
    pub p0_s: f64,
    pub p0_v: f64,
    pub theta_source: ThetaSource,
}

impl Default for EkfSection {
    fn default() -> Self {
        let d = EkfConfig::default();
        Self {
            q: d.q,
            r_v: d.r_v,
            r_theta: d.r_theta,
            p0_s: d.p0[(0, 0)],
            p0_v: d.p0[(1, 1)],
            theta_source: d.theta_source,
        }
    }
}

impl EkfSection {
    pub fn to_config(&self) -> EkfConfig {
        EkfConfig {
            q: self.q,
            r_v: self.r_v,
            r_theta: self.r_theta,
            p0: Matrix2::from_diagonal(&Vector2::new(self.p0_s, self.p0_v)),
            theta_source: self.theta_source,
            ..EkfConfig::default()
        }
    }
}

/// Speed limits along the route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundsSpec {
    /// Urban arterial profile from [`traffic_bounds`].
    Traffic,
    Constant { v_max: f64, v_min: f64 },
    /// `arc_m,v_max_mps[,v_min_mps]` file.
    Csv { path: PathBuf },
}

impl Default for BoundsSpec {
    fn default() -> Self {
        BoundsSpec::Traffic
    }
}

impl BoundsSpec {
    pub fn build(&self, length: f64) -> Result<SpeedBounds> {
        match self {
            BoundsSpec::Traffic => traffic_bounds(length),
            BoundsSpec::Constant { v_max, v_min } => SpeedBounds::constant(length, *v_max, *v_min),
            BoundsSpec::Csv { path } => SpeedBounds::read_csv(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    /// Monte-Carlo runs; seeds are `seed, seed + 1, ...`.
    pub n_runs: usize,
    pub seed: u64,
    pub duration_s: f64,
    /// Sensor sampling interval of localization runs (s).
    pub dt: f64,
    pub v0: f64,
    /// Longitudinal acceleration `accel_amplitude * cos(2 pi t / accel_period)`.
    pub accel_amplitude: f64,
    pub accel_period: f64,
    /// Initial position error standard deviation (m).
    pub init_sigma: f64,
    /// Planned route length; the map length when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub route_length_m: Option<f64>,
    pub bounds: BoundsSpec,
    /// Trade-off weights compared by `plan`.
    pub gammas: Vec<f64>,
    /// Stretch over which `energy-offset` compares energy (m).
    pub segment: [f64; 2],
    pub offset_m: f64,
    /// `truth`, `ekf` or `offset:<m>`.
    pub localizer: String,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            n_runs: 10,
            seed: 0,
            duration_s: 100.0,
            dt: 0.1,
            v0: 10.0,
            accel_amplitude: 0.3,
            accel_period: 40.0,
            init_sigma: 0.2,
            route_length_m: None,
            bounds: BoundsSpec::Traffic,
            gammas: vec![0.1, 10.0],
            segment: [1500.0, 2500.0],
            offset_m: 60.0,
            localizer: "truth".into(),
        }
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("experiment.n_runs must be >= 1".into()));
        }
        if !(self.duration_s > 0.0 && self.dt > 0.0 && self.dt <= self.duration_s) {
            return Err(Error::Config("experiment needs 0 < dt <= duration_s".into()));
        }
        if !(self.v0 >= 0.0 && self.accel_period > 0.0 && self.init_sigma >= 0.0) {
            return Err(Error::Config(
                "experiment needs v0 >= 0, accel_period > 0 and init_sigma >= 0".into(),
            ));
        }
        if self.accel_amplitude.is_nan() || self.offset_m.is_nan() {
            return Err(Error::Config("experiment values must be numbers".into()));
        }
        if self.route_length_m.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::Config("experiment.route_length_m must be > 0".into()));
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config("experiment.gammas must be >= 0".into()));
        }
        if !(self.segment[0] < self.segment[1]) {
            return Err(Error::Config("experiment.segment needs start < end".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub map: MapSpec,
    pub noise: NoiseSpec,
    pub ekf: EkfSection,
    pub vehicle: VehicleParams,
    pub planner: PlannerConfig,
    pub mpc: MpcConfig,
    pub experiment: Experiment,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let bounds = match &mut self.experiment.bounds {
            BoundsSpec::Csv { path } => Some(path),
            _ => None,
        };
        for p in [self.map.path_mut(), bounds].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.ekf.to_config().validate()?;
        self.vehicle.validate()?;
        self.planner.validate()?;
        self.mpc.validate()?;
        self.experiment.validate()?;
        if (self.vehicle.sample_time - self.mpc.dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "vehicle.T_s ({}) and mpc.dt ({}) must agree",
                self.vehicle.sample_time, self.mpc.dt
            )));
        }
        Ok(())
    }

    /// A named preset; see [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let base = Config::default();
        let cfg = match name {
            "calibrated_100s" => Config {
                noise: NoiseSpec {
                    sigma_v: 0.5,
                    sigma_theta: 0.003,
                    accel_noise_std: 0.01,
                    bias_rate: 0.0,
                    process_noise_q: 1e-4,
                    seed: 0,
                },
                ekf: EkfSection {
                    q: 1e-4,
                    r_v: 0.25,
                    r_theta: 9e-6,
                    p0_s: 0.04,
                    p0_v: 0.25,
                    theta_source: ThetaSource::Measured,
                },
                ..base
            },
            "drift_500s" => {
                let mut c = Config::preset("calibrated_100s")?;
                c.map = MapSpec::Harmonic {
                    components: rolling_hills(),
                    length_m: 6000.0,
                    ds_m: 1.0,
                };
                c.experiment.n_runs = 20;
                c.experiment.duration_s = 500.0;
                c
            }
            "long_drift" => {
                let mut c = Config::preset("drift_500s")?;
                c.map = MapSpec::Harmonic {
                    components: rolling_hills(),
                    length_m: 7000.0,
                    ds_m: 1.0,
                };
                c.experiment.n_runs = 10;
                c.experiment.duration_s = 600.0;
                c
            }
            "route_5km" => Config {
                map: MapSpec::Harmonic {
                    components: rolling_hills(),
                    length_m: 5000.0,
                    ds_m: 1.0,
                },
                ..base
            },
            "offset_hills" | "offset_flat" => {
                let map = if name == "offset_hills" {
                    MapSpec::HillSegment {
                        components: vec![Harmonic {
                            amplitude: 0.03,
                            wavelength_m: 300.0,
                            phase_rad: 0.0,
                        }],
                        length_m: 4000.0,
                        start_m: 1500.0,
                        end_m: 2400.0,
                        ds_m: 1.0,
                    }
                } else {
                    MapSpec::Flat {
                        length_m: 4000.0,
                        ds_m: 1.0,
                    }
                };
                Config {
                    map,
                    planner: PlannerConfig {
                        gamma: 1000.0,
                        ..PlannerConfig::default()
                    },
                    experiment: Experiment {
                        bounds: BoundsSpec::Constant {
                            v_max: 15.0,
                            v_min: 7.5,
                        },
                        segment: [1500.0, 2500.0],
                        offset_m: 60.0,
                        ..Experiment::default()
                    },
                    ..base
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn map(&self) -> Result<GradeMap> {
        self.map.build()
    }

    pub fn ekf_config(&self) -> EkfConfig {
        self.ekf.to_config()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let e = &self.experiment;
        (0..e.n_runs as u64).map(|i| e.seed.wrapping_add(i)).collect()
    }

    pub fn localization_scenario(&self) -> Result<LocalizationScenario> {
        let e = &self.experiment;
        Ok(LocalizationScenario {
            map: self.map()?,
            duration: e.duration_s,
            dt: e.dt,
            v0: e.v0,
            accel: AccelProgram {
                amplitude: e.accel_amplitude,
                period: e.accel_period,
            },
            noise: self.noise.clone(),
            ekf: self.ekf_config(),
            init_sigma: e.init_sigma,
        })
    }

    pub fn drive_scenario(&self) -> Result<DriveScenario> {
        let map = self.map()?;
        let length = self.experiment.route_length_m.unwrap_or(map.end());
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Config(
                "set experiment.route_length_m for a map without a finite end".into(),
            ));
        }
        Ok(DriveScenario {
            bounds: self.experiment.bounds.build(length)?,
            map,
            length,
            vehicle: self.vehicle.clone(),
            planner: self.planner.clone(),
            mpc: self.mpc.clone(),
        })
    }

    pub fn localizer(&self) -> Result<Localizer> {
        Localizer::parse(&self.experiment.localizer, &self.noise, &self.ekf_config())
    }
}
