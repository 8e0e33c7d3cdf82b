// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dp;
pub mod ekf;
pub mod error;
pub mod grade_map;
pub mod harness;
pub mod mpc;
pub mod sensor_sim;
pub mod vehicle;

pub use error::{Error, Result};

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/grade_maps.md")]
    pub struct GradeMaps;
    #[doc = include_str!("../../../book/src/sensors.md")]
    pub struct Sensors;
    #[doc = include_str!("../../../book/src/localization.md")]
    pub struct Localization;
    #[doc = include_str!("../../../book/src/vehicle.md")]
    pub struct Vehicle;
    #[doc = include_str!("../../../book/src/planning.md")]
    pub struct Planning;
    #[doc = include_str!("../../../book/src/tracking.md")]
    pub struct Tracking;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
