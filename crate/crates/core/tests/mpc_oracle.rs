mod common;

use gradeloc::mpc::{objective, solve, MpcConfig};
use gradeloc::vehicle::VehicleParams;

#[test]
fn objective_matches_its_definition() {
    let params = VehicleParams::default();
    let cfg = MpcConfig::default();
    let mut r = common::rng(8);
    for n in 1..=5 {
        let (v0, preview) = common::random_mpc_instance(&mut r, n);
        let inputs: Vec<f64> = (0..n).map(|k| 400.0 * k as f64 - 300.0).collect();
        let a = objective(v0, &preview, &inputs, &params, &cfg);
        let b = common::oracle_objective(v0, &preview, &inputs, &params, &cfg);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn solver_is_within_a_tenth_of_a_percent_of_enumeration() {
    let params = VehicleParams::default();
    let mut r = common::rng(77);
    for (n, count) in [(1, 20), (2, 12), (3, 4)] {
        for _ in 0..count {
            let cfg = MpcConfig { horizon: n, ..MpcConfig::default() };
            let (v0, preview) = common::random_mpc_instance(&mut r, n);
            let sol = solve(v0, &preview, &params, &cfg, None).unwrap();
            let got = common::oracle_objective(v0, &preview, &sol.inputs, &params, &cfg);
            let (best, u) = common::mpc_enumeration(v0, &preview, &params, &cfg);
            assert!(
                got <= best * 1.001 + 1e-9,
                "N={n} v0={v0} {preview:?}: solver {got} ({:?}) vs enumeration {best} ({u:?})",
                sol.inputs
            );
        }
    }
}
