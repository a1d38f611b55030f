//! Browser demo: weight window, isothermal relaxation and a small
//! two-temperature steady state, each on a coarse lattice so a call
//! returns within a few seconds.
//!
//! The `*_json` functions are plain Rust and are what the tests call; the
//! `#[wasm_bindgen]` exports wrap them for the page in `www/`.

use std::sync::Arc;

use ness_kinetic::boundary::{IotaProfile, ThetaProfile, WallModel};
use ness_kinetic::collision::{AngularRule, CollisionQ, LinearizedOperator};
use ness_kinetic::geometry::Domain;
use ness_kinetic::sampling::{random_field, remove_mass, SampleKind};
use ness_kinetic::steady::{energy_profile, solve_ness, SteadyConfig};
use ness_kinetic::transport::{SlabStepper, SolverConfig};
use ness_kinetic::velocity_space::{build_grid, WeightSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

const N_VEL: usize = 8;
const V_MAX: f64 = 5.0;
const CELLS: usize = 8;
const DT: f64 = 0.1;

fn operator() -> Result<Arc<LinearizedOperator>, String> {
    let grid = Arc::new(build_grid(N_VEL, V_MAX).map_err(|e| e.to_string())?);
    Ok(Arc::new(LinearizedOperator::new(grid)))
}

fn stepper(op: &Arc<LinearizedOperator>, wall: &WallModel) -> Result<SlabStepper, String> {
    let dom = Domain::slab(1.0).map_err(|e| e.to_string())?;
    let mut cfg = SolverConfig::new(DT);
    cfg.weight = WeightSpec::new(WeightSpec::DEFAULT_ZETA, wall.theta0).map_err(|e| e.to_string())?;
    SlabStepper::new(&cfg, &dom, wall, op.clone(), CELLS).map_err(|e| e.to_string())
}

/// Admissible open interval of the weight exponent for `theta0`.
pub fn zeta_window_pair(theta0: f64) -> Result<(f64, f64), String> {
    if !(0.0..=WeightSpec::THETA0_MAX).contains(&theta0) {
        return Err(format!("theta0 = {theta0} must lie in [0, 1/8]"));
    }
    Ok(WeightSpec::window(theta0))
}

/// Linear relaxation of a seeded zero-mass perturbation between walls at
/// `1 -+ theta0`, as `{t, norm_h, norm_linf, fitted_rate}`.
pub fn relax_json(theta0: f64, t_end: f64, seed: u64) -> Result<String, String> {
    let op = operator()?;
    let wall = WallModel::two_temperature(1.0, theta0).map_err(|e| e.to_string())?;
    let st = stepper(&op, &wall)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meas = st.zeros().cell_measure().to_vec();
    let mode: Vec<f64> = st.centers().iter().map(|x| (0.5 * std::f64::consts::PI * x).cos() + 0.5).collect();
    let mut f0 = random_field(op.grid(), op.projector(), &meas, &[mode], SampleKind::Mixed, &mut rng).map_err(|e| e.to_string())?;
    remove_mass(&mut f0);
    let size = f0.norm_linf_omega(&st.config().weight);
    f0.scale(1e-2 / size);
    let t_end = (t_end / DT).round() * DT;
    let (_, s) = st.evolve_linear(&f0, None, t_end, 1).map_err(|e| e.to_string())?;
    Ok(json!({
        "t": s.times,
        "norm_h": s.norms_h,
        "norm_linf": s.norms_linf,
        "fitted_rate": s.fitted_rate,
    })
    .to_string())
}

/// Steady state between bases at `1 + theta_left` and `1 + theta_right`,
/// as `{x, energy, residual, distance, iterations}`.
pub fn ness_json(theta_left: f64, theta_right: f64) -> Result<String, String> {
    let theta0 = theta_left.abs().max(theta_right.abs());
    let wall = WallModel::direct(theta0, ThetaProfile::Bases { left: theta_left, right: theta_right }, IotaProfile::Bases)
        .map_err(|e| e.to_string())?;
    let op = operator()?;
    let st = stepper(&op, &wall)?;
    let q = CollisionQ::new(op.grid().clone(), AngularRule::product(4, 8).map_err(|e| e.to_string())?, op.projector().clone())
        .map_err(|e| e.to_string())?;
    let cfg = SteadyConfig {
        budget_samples: 0,
        ..SteadyConfig::default()
    };
    let r = solve_ness(&st, &q, &cfg, None).map_err(|e| e.to_string())?;
    let energy = energy_profile(&r.field).map_err(|e| e.to_string())?;
    Ok(json!({
        "x": st.centers(),
        "energy": energy,
        "residual": r.residual,
        "distance": r.distance_to_maxwellian,
        "iterations": r.iterations,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn zeta_window(theta0: f64) -> Result<Vec<f64>, JsError> {
    let (lo, hi) = zeta_window_pair(theta0).map_err(|e| JsError::new(&e))?;
    Ok(vec![lo, hi])
}

#[wasm_bindgen]
pub fn relax(theta0: f64, t_end: f64, seed: u32) -> Result<String, JsError> {
    relax_json(theta0, t_end, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ness_profile(theta_left: f64, theta_right: f64) -> Result<String, JsError> {
    ness_json(theta_left, theta_right).map_err(|e| JsError::new(&e))
}
