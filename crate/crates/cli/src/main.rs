//! `gradeloc`: grade-map localization, eco-driving planning and tracking experiments.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 infeasible problem,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradeloc::config::Config;
use gradeloc::dp::{SpeedBounds, VelocityPlan};
use gradeloc::ekf::write_estimates_csv;
use gradeloc::grade_map::{load_elevation_json, load_profile_csv, ElevationProfile, GradeMap};
use gradeloc::harness::{
    compare_plans, polynomial_road, render_report, run_energy_vs_offset, run_localization_mc,
    simulate_localization, write_json, DriveScenario,
};
use gradeloc::mpc::{closed_loop, Localizer};
use gradeloc::{Error, Result};

#[derive(Parser)]
#[command(name = "gradeloc", version, about)]
struct Cli {
    #[command(flatten)]
    source: ConfigSource,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// TOML config file.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset, e.g. calibrated_100s or route_5km.
    #[arg(long, global = true)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<Config> {
        match (&self.config, &self.preset) {
            (Some(path), _) => Config::load(path),
            (None, Some(name)) => Config::preset(name),
            (None, None) => Ok(Config::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a grade map (`arc_m,grade`) from the config, a polynomial or an elevation file.
    GenMap {
        #[arg(long)]
        out: PathBuf,
        /// Altitude polynomial coefficients, lowest order first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with_all = ["elevation", "profile"])]
        coeffs: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1000.0, requires = "coeffs")]
        length: f64,
        #[arg(long, default_value_t = 1.0)]
        ds: f64,
        /// Elevation JSON (`lat`, `lng`, `elevation`).
        #[arg(long, conflicts_with = "profile")]
        elevation: Option<PathBuf>,
        /// Elevation CSV (`arc_m,elevation_m`).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Grade smoothing window in knots (odd).
        #[arg(long, default_value_t = 5)]
        window: usize,
    },
    /// Monte-Carlo comparison of EKF and velocity integration.
    Localize {
        #[arg(long)]
        runs: Option<usize>,
        /// First seed; runs use consecutive seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// EKF estimates of the first run.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Simulated sensor trace of the first run.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Plan reference speeds by dynamic programming and compare with driving at the limit.
    Plan {
        /// Trade-off weight; repeat to compare several.
        #[arg(long)]
        gamma: Vec<f64>,
        /// Speed-bounds CSV (`arc_m,v_max_mps[,v_min_mps]`).
        #[arg(long)]
        route: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Closed-loop MPC tracking of a plan.
    Track {
        /// truth, ekf or offset:<m>.
        #[arg(long)]
        localizer: Option<String>,
        /// Plan CSV; planned from the config when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        route: Option<PathBuf>,
        #[arg(long, default_value = "closed_loop.csv")]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Energy spent on a stretch with true versus offset position.
    EnergyOffset {
        #[arg(long, allow_hyphen_values = true)]
        offset_m: Option<f64>,
        /// Stretch as `<a>:<b>` in meters.
        #[arg(long, value_parser = parse_segment)]
        segment: Option<(f64, f64)>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        route: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render JSON reports as text.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn parse_segment(text: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| format!("expected <a>:<b>, got {text:?}"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad segment start {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad segment end {b:?}"))?;
    if !(a < b) {
        return Err(format!("segment start {a} must be below end {b}"));
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.source.load()?;
    match cli.command {
        Command::GenMap {
            out,
            coeffs,
            length,
            ds,
            elevation,
            profile,
            window,
        } => {
            let map = if let Some(c) = coeffs {
                polynomial_road(&c, length, ds)?
            } else if let Some(path) = elevation {
                let points = load_elevation_json(&path)?;
                GradeMap::from_elevation(&ElevationProfile::from_geo_samples(&points)?, window)?
            } else if let Some(path) = profile {
                GradeMap::from_elevation(&load_profile_csv(&path)?, window)?
            } else {
                cfg.map()?
            };
            map.write_csv(&out)?;
            let peak = map.grade().iter().fold(0.0f64, |m, p| m.max(p.abs()));
            println!(
                "wrote {} knots over {:.1} m (max |grade| {:.4}) to {}",
                map.arc().len(),
                map.end() - map.start(),
                peak,
                out.display()
            );
        }
        Command::Localize {
            runs,
            seed,
            out,
            estimates,
            trace,
        } => {
            let mut cfg = cfg;
            if let Some(n) = runs {
                cfg.experiment.n_runs = n;
            }
            if let Some(s) = seed {
                cfg.experiment.seed = s;
            }
            cfg.experiment.validate()?;
            let scn = cfg.localization_scenario()?;
            let seeds = cfg.seeds();
            let report = run_localization_mc(&scn, &seeds)?;
            print!("{}", report.render_text());
            if let Some(path) = out {
                write_json(&report, path)?;
            }
            if estimates.is_some() || trace.is_some() {
                let detail = simulate_localization(&scn, seeds[0])?;
                if let Some(path) = estimates {
                    write_estimates_csv(&detail.steps, path)?;
                }
                if let Some(path) = trace {
                    detail.trace.write_csv(path)?;
                }
            }
        }
        Command::Plan {
            gamma,
            route,
            out_dir,
        } => {
            let scn = drive_scenario(&cfg, route.as_deref())?;
            let gammas = if gamma.is_empty() {
                vec![cfg.planner.gamma]
            } else {
                gamma
            };
            std::fs::create_dir_all(&out_dir).map_err(|e| {
                Error::Config(format!("cannot create {}: {e}", out_dir.display()))
            })?;
            let (comparison, plans) = compare_plans(&scn, &gammas)?;
            for (g, plan) in gammas.iter().zip(&plans[1..]) {
                plan.write_csv(out_dir.join(format!("plan_gamma_{g}.csv")))?;
                plan.write_summary_json(out_dir.join(format!("plan_gamma_{g}.json")))?;
            }
            plans[0].write_csv(out_dir.join("plan_max_speed.csv"))?;
            write_json(&comparison, out_dir.join("plan_comparison.json"))?;
            print!("{}", comparison.render_text());
        }
        Command::Track {
            localizer,
            plan,
            route,
            out,
            summary,
        } => {
            let scn = drive_scenario(&cfg, route.as_deref())?;
            let plan = load_or_plan(&scn, plan.as_deref())?;
            let loc = match localizer {
                Some(text) => Localizer::parse(&text, &cfg.noise, &cfg.ekf_config())?,
                None => cfg.localizer()?,
            };
            let log = closed_loop(&scn.vehicle, &scn.mpc, &plan, &scn.map, &loc, scn.duration_cap(&plan))?;
            log.write_csv(&out)?;
            if let Some(path) = summary {
                log.write_summary_json(path)?;
            }
            let s = log.summary();
            println!(
                "energy {:.4} kWh, tracking rmse {:.3} m/s ({:.2} % of mean reference), {:.1} s, {} infeasible steps",
                s.energy_kwh,
                s.tracking_rmse_mps,
                100.0 * s.tracking_rmse_mps / log.mean_reference(gradeloc::mpc::TRACKING_TRANSIENT_S),
                s.duration_s,
                log.infeasible_steps
            );
        }
        Command::EnergyOffset {
            offset_m,
            segment,
            plan,
            route,
            out,
        } => {
            let scn = drive_scenario(&cfg, route.as_deref())?;
            let plan = load_or_plan(&scn, plan.as_deref())?;
            let [a, b] = cfg.experiment.segment;
            let segment = segment.unwrap_or((a, b));
            let offset = offset_m.unwrap_or(cfg.experiment.offset_m);
            let (report, _, _) = run_energy_vs_offset(&scn, &plan, segment, offset)?;
            print!("{}", report.render_text());
            if let Some(path) = out {
                write_json(&report, path)?;
            }
        }
        Command::Report { files } => {
            for path in files {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                println!("== {}", path.display());
                print!("{}", render_report(&text)?);
            }
        }
    }
    Ok(())
}

fn drive_scenario(cfg: &Config, route: Option<&Path>) -> Result<DriveScenario> {
    let mut scn = cfg.drive_scenario()?;
    if let Some(path) = route {
        scn.bounds = SpeedBounds::read_csv(path)?;
    }
    Ok(scn)
}

fn load_or_plan(scn: &DriveScenario, path: Option<&Path>) -> Result<VelocityPlan> {
    match path {
        Some(p) => VelocityPlan::read_csv(p),
        None => scn.plan(scn.planner.gamma),
    }
}
