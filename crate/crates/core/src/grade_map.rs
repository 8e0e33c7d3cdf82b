//! Road elevation profiles and the position-indexed grade map.
//!
//! The grade stored at every knot is `sin(theta)`: rise over *arc length*, not over
//! horizontal run. Queries interpolate linearly between knots and clamp to the
//! boundary value outside the knot range.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for great-circle arc length (m).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default moving-average window (knots) applied when deriving grade from elevation.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

/// Cap on `1 - p^2` inside the inclination derivative. Keeps `1/sqrt(1-p^2)` finite
/// near vertical grades, which no road has.
pub const MIN_COS_SQUARED: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoSample {
    #[serde(rename = "lat")]
    pub latitude: f64,
    #[serde(rename = "lng")]
    pub longitude: f64,
    pub elevation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

impl GeoSample {
    pub fn new(latitude: f64, longitude: f64, elevation: f64) -> Self {
        Self {
            latitude,
            longitude,
            elevation,
            resolution: None,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.latitude.is_finite() && self.latitude.abs() <= 90.0) {
            return Err(format!("latitude {} outside [-90, 90]", self.latitude));
        }
        if !(self.longitude.is_finite() && self.longitude.abs() <= 180.0) {
            return Err(format!("longitude {} outside [-180, 180]", self.longitude));
        }
        if !self.elevation.is_finite() {
            return Err("elevation is not finite".into());
        }
        if let Some(r) = self.resolution {
            if !(r.is_finite() && r >= 0.0) {
                return Err(format!("resolution {r} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Great-circle distance between two samples (haversine formula).
pub fn haversine_m(a: &GeoSample, b: &GeoSample) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Elevation sampled along the route, indexed by arc position.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationProfile {
    arc: Vec<f64>,
    elevation: Vec<f64>,
    source_resolution: f64,
}

impl ElevationProfile {
    pub fn new(arc: Vec<f64>, elevation: Vec<f64>, source_resolution: f64) -> Result<Self> {
        if arc.len() != elevation.len() {
            return Err(Error::invalid(format!(
                "arc ({}) and elevation ({}) lengths differ",
                arc.len(),
                elevation.len()
            )));
        }
        if arc.len() < 2 {
            return Err(Error::invalid("need >= 2 samples"));
        }
        if arc.iter().chain(&elevation).any(|x| !x.is_finite()) {
            return Err(Error::invalid("profile contains non-finite values"));
        }
        if let Some(i) = arc.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "arc position not strictly increasing at sample {}",
                i + 1
            )));
        }
        if !(source_resolution.is_finite() && source_resolution >= 0.0) {
            return Err(Error::invalid("source resolution must be finite and >= 0"));
        }
        Ok(Self {
            arc,
            elevation,
            source_resolution,
        })
    }

    /// Builds a profile from `(arc_m, elevation_m)` pairs; resolution is the mean spacing.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (arc, elevation): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let resolution = if arc.len() >= 2 {
            (arc[arc.len() - 1] - arc[0]) / (arc.len() - 1) as f64
        } else {
            0.0
        };
        Self::new(arc, elevation, resolution)
    }

    /// Arc positions are cumulative haversine distances, starting at zero.
    pub fn from_geo_samples(points: &[GeoSample]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("need >= 2 samples"));
        }
        for (i, p) in points.iter().enumerate() {
            p.validate()
                .map_err(|m| Error::invalid(format!("sample {i}: {m}")))?;
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let d = haversine_m(&w[0], &w[1]);
            if d <= 0.0 {
                return Err(Error::invalid(format!(
                    "samples {} and {} have zero spacing",
                    i,
                    i + 1
                )));
            }
            arc.push(arc[i] + d);
        }
        let elevation = points.iter().map(|p| p.elevation).collect();
        let reported: Vec<f64> = points.iter().filter_map(|p| p.resolution).collect();
        let resolution = if reported.is_empty() {
            arc[arc.len() - 1] / (arc.len() - 1) as f64
        } else {
            reported.iter().cloned().fold(0.0, f64::max)
        };
        Self::new(arc, elevation, resolution)
    }

    pub fn arc(&self) -> &[f64] {
        &self.arc
    }

    pub fn elevation(&self) -> &[f64] {
        &self.elevation
    }

    pub fn source_resolution(&self) -> f64 {
        self.source_resolution
    }

    pub fn len(&self) -> usize {
        self.arc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arc.is_empty()
    }
}

/// Position-indexed road grade `p(s) = sin(theta(s))`, piecewise linear between knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradeMap {
    arc: Vec<f64>,
    grade: Vec<f64>,
}

impl GradeMap {
    pub fn new(arc: Vec<f64>, grade: Vec<f64>) -> Result<Self> {
        if arc.len() != grade.len() {
            return Err(Error::invalid("arc and grade lengths differ"));
        }
        if arc.is_empty() {
            return Err(Error::invalid("grade map needs at least one knot"));
        }
        if arc.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite arc position"));
        }
        if let Some(i) = grade.iter().position(|p| !(p.abs() < 1.0)) {
            return Err(Error::invalid(format!(
                "grade {} at knot {i} is not traversable (|grade| must be < 1)",
                grade[i]
            )));
        }
        if let Some(i) = arc.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "arc position not strictly increasing at knot {}",
                i + 1
            )));
        }
        Ok(Self { arc, grade })
    }

    /// A map with the same grade everywhere.
    pub fn constant(grade: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![grade])
    }

    /// Samples `grade(s)` on a uniform grid over `[0, length]`.
    pub fn from_fn(length: f64, ds: f64, grade: impl Fn(f64) -> f64) -> Result<Self> {
        if !(length > 0.0 && ds > 0.0) {
            return Err(Error::invalid("length and spacing must be positive"));
        }
        let n = (length / ds).round() as usize;
        let arc: Vec<f64> = (0..=n).map(|i| (i as f64 * ds).min(length)).collect();
        let grade = arc.iter().map(|&s| grade(s)).collect();
        Self::new(arc, grade)
    }

    /// Derives grade from elevation: centred differences (one-sided at the ends) of
    /// elevation over arc length, then a centred moving average of `window` knots.
    pub fn from_elevation(profile: &ElevationProfile, window: usize) -> Result<Self> {
        let n = profile.len();
        if window == 0 || window % 2 == 0 || window > n {
            return Err(Error::invalid(format!(
                "smoothing window must be odd and in [1, {n}], got {window}"
            )));
        }
        let (s, z) = (profile.arc(), profile.elevation());
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (z[hi] - z[lo]) / (s[hi] - s[lo])
            })
            .collect();
        let half = window / 2;
        let smoothed = (0..n)
            .map(|i| {
                // shrink symmetrically near the ends so linear trends pass unbiased
                let h = half.min(i).min(n - 1 - i);
                raw[i - h..=i + h].iter().sum::<f64>() / (2 * h + 1) as f64
            })
            .collect();
        Self::new(s.to_vec(), smoothed)
    }

    pub fn arc(&self) -> &[f64] {
        &self.arc
    }

    pub fn grade(&self) -> &[f64] {
        &self.grade
    }

    pub fn start(&self) -> f64 {
        self.arc[0]
    }

    pub fn end(&self) -> f64 {
        self.arc[self.arc.len() - 1]
    }

    /// Index of the segment whose half-open interval `[arc[i], arc[i+1])` holds `s`,
    /// or `None` outside the knot range.
    fn segment(&self, s: f64) -> Option<usize> {
        if self.arc.len() < 2 || s < self.start() || s >= self.end() {
            return None;
        }
        Some(self.arc.partition_point(|&a| a <= s) - 1)
    }

    pub fn grade_at(&self, s: f64) -> f64 {
        if s <= self.start() {
            return self.grade[0];
        }
        if s >= self.end() {
            return self.grade[self.grade.len() - 1];
        }
        let i = self.segment(s).expect("interior point");
        let t = (s - self.arc[i]) / (self.arc[i + 1] - self.arc[i]);
        self.grade[i] + t * (self.grade[i + 1] - self.grade[i])
    }

    /// `dp/ds` of the interpolant. At a knot this is the slope of the segment to the
    /// right; outside the knot range the map is flat.
    pub fn grade_slope_at(&self, s: f64) -> f64 {
        match self.segment(s) {
            Some(i) => (self.grade[i + 1] - self.grade[i]) / (self.arc[i + 1] - self.arc[i]),
            None => 0.0,
        }
    }

    /// Road inclination `asin(p(s))` in radians.
    pub fn inclination_at(&self, s: f64) -> f64 {
        self.grade_at(s).asin()
    }

    /// Largest absolute segment slope, the Lipschitz constant of `grade_at`.
    pub fn max_slope(&self) -> f64 {
        self.arc
            .windows(2)
            .zip(self.grade.windows(2))
            .map(|(a, p)| ((p[1] - p[0]) / (a[1] - a[0])).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the `arc_m,grade` interchange CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["arc_m", "grade"])?;
        for (s, p) in self.arc.iter().zip(&self.grade) {
            w.write_record(&[s.to_string(), p.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            arc_m: f64,
            grade: f64,
        }
        let rows: Vec<Row> = read_csv_rows(path.as_ref())?;
        let (arc, grade) = rows.into_iter().map(|r| (r.arc_m, r.grade)).unzip();
        Self::new(arc, grade)
    }
}

/// Reads every record of a headed CSV file, reporting the 1-based data row on failure.
pub(crate) fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Record {
                path: path.to_path_buf(),
                record: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loads a survey profile CSV with header `arc_m,elevation_m`.
pub fn load_profile_csv(path: impl AsRef<Path>) -> Result<ElevationProfile> {
    #[derive(Deserialize)]
    struct Row {
        arc_m: f64,
        elevation_m: f64,
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
    for (i, r) in rows.iter().enumerate() {
        if !(r.arc_m.is_finite() && r.elevation_m.is_finite()) {
            return Err(Error::Record {
                path: path.to_path_buf(),
                record: i + 1,
                message: "non-finite value".into(),
            });
        }
        if i > 0 && r.arc_m <= rows[i - 1].arc_m {
            return Err(Error::Record {
                path: path.to_path_buf(),
                record: i + 1,
                message: "arc_m not strictly increasing".into(),
            });
        }
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.arc_m, r.elevation_m)).collect();
    ElevationProfile::from_pairs(&pairs)
}

/// Loads a pre-fetched elevation-service response: a JSON array of
/// `{lat, lng, elevation, resolution?}` objects.
pub fn load_elevation_json(path: impl AsRef<Path>) -> Result<Vec<GeoSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<serde_json::Value> = if file.metadata().map(|m| m.len()).unwrap_or(0) == 0 {
        Vec::new()
    } else {
        serde_json::from_reader(BufReader::new(file))?
    };
    let mut samples = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let record = |message: String| Error::Record {
            path: path.to_path_buf(),
            record: i + 1,
            message,
        };
        let sample: GeoSample = serde_json::from_value(v).map_err(|e| record(e.to_string()))?;
        sample.validate().map_err(record)?;
        samples.push(sample);
    }
    if samples.len() < 2 {
        return Err(Error::Record {
            path: path.to_path_buf(),
            record: samples.len(),
            message: "need >= 2 samples".into(),
        });
    }
    Ok(samples)
}

/// Writes `(arc_m, elevation_m)` samples as a profile CSV.
pub fn write_profile_csv(profile: &ElevationProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("arc_m,elevation_m\n");
    for (s, z) in profile.arc().iter().zip(profile.elevation()) {
        out.push_str(&format!("{s},{z}\n"));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}
