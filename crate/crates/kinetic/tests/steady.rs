use std::sync::Arc;

use ness_kinetic::boundary::{IotaProfile, WallModel};
use ness_kinetic::collision::{AngularRule, CollisionQ, LinearizedOperator};
use ness_kinetic::geometry::Domain;
use ness_kinetic::steady::*;
use ness_kinetic::transport::{SlabStepper, SolverConfig};
use ness_kinetic::velocity_space::{build_grid, DistributionField};

const CELLS: usize = 8;

struct Setup {
    op: Arc<LinearizedOperator>,
    q: CollisionQ,
    cfg: SolverConfig,
    dom: Domain,
}

fn setup() -> Setup {
    let g = Arc::new(build_grid(8, 5.0).unwrap());
    let op = Arc::new(LinearizedOperator::new(g.clone()));
    let q = CollisionQ::new(g, AngularRule::default(), op.projector().clone()).unwrap();
    Setup {
        op,
        q,
        cfg: SolverConfig::new(0.1),
        dom: Domain::slab(1.0).unwrap(),
    }
}

fn stepper(s: &Setup, wall: &WallModel) -> SlabStepper {
    SlabStepper::new(&s.cfg, &s.dom, wall, s.op.clone(), CELLS).unwrap()
}

fn quick() -> SteadyConfig {
    SteadyConfig {
        budget_samples: 0,
        ..SteadyConfig::default()
    }
}

/// `f(-x, R v)` with `R` the mirror in `v_1`.
fn reflected(f: &DistributionField) -> DistributionField {
    let g = f.grid().clone();
    let n = f.n_cells();
    let mut out = f.zeros_like();
    for c in 0..n {
        for k in 0..g.len() {
            out.values_mut()[[c, k]] = f.values()[[n - 1 - c, g.mirror_index(k, 0)]];
        }
    }
    out
}

#[test]
fn isothermal_walls_give_the_maxwellian() {
    let s = setup();
    let st = stepper(&s, &WallModel::isothermal(IotaProfile::Bases));
    let r = solve_ness(&st, &s.q, &quick(), None).unwrap();
    assert!(r.distance_to_maxwellian < 1e-12);
    assert!(r.residual < 1e-10);
}

#[test]
fn two_temperature_ness_converges() {
    let s = setup();
    let wall = WallModel::two_temperature(1.0, 0.05).unwrap();
    let st = stepper(&s, &wall);
    let cfg = SteadyConfig {
        budget_samples: 1,
        ..SteadyConfig::default()
    };
    let r = solve_ness(&st, &s.q, &cfg, None).unwrap();
    assert!(r.residual <= 10.0 * cfg.tol, "residual {:e}", r.residual);
    assert!(r.contraction_factors.iter().skip(1).all(|f| *f < 1.0), "{:?}", r.contraction_factors);
    assert!(r.mass.abs() < 1e-12);
    assert!(r.distance_to_maxwellian > 0.0);
    assert!(is_monotone(&energy_profile(&r.field).unwrap()));

    let mut full = r.field.clone();
    let m = full.grid().maxwellian().to_vec();
    for mut row in full.values_mut().rows_mut() {
        row.iter_mut().zip(&m).for_each(|(x, mi)| *x += mi);
    }
    let again = ness_residual(&st, &s.q, &full).unwrap();
    assert!((again - r.residual).abs() <= 1e-3 * r.residual.max(1e-12) + 1e-12);

    let b = r.budget.expect("budget requested");
    assert!(b.lambda.is_finite() && b.lambda > 0.0);
    assert!(b.inside_ball);
}

#[test]
fn linear_response_is_odd_to_first_order() {
    // even part comes from the O(theta0^2) part of the inflow
    let s = setup();
    let cfg = quick();
    let ratio = |t: f64| {
        let st = stepper(&s, &WallModel::two_temperature(1.0, t).unwrap());
        let f = solve_linear_steady(&st, None, true, &cfg, None).unwrap().field;
        let rf = reflected(&f);
        let mut even = f.clone();
        even.axpy(1.0, &rf).unwrap();
        let mut odd = f.clone();
        odd.axpy(-1.0, &rf).unwrap();
        even.norm_h() / odd.norm_h()
    };
    let (a, b) = (ratio(0.02), ratio(0.04));
    assert!(a < 0.1, "even part too large: {a}");
    assert!((b / a - 2.0).abs() < 0.2, "{a} {b}");
}

#[test]
fn distance_scales_linearly_with_theta0() {
    let s = setup();
    let template = WallModel::two_temperature(1.0, 0.01).unwrap();
    let table = verify_ness_scaling(|w| Ok(stepper(&s, w)), &template, &s.q, &quick(), &[0.01, 0.02, 0.04]).unwrap();
    let e = table.exponent.unwrap();
    assert!((e - 1.0).abs() < 0.05, "exponent {e}");
    assert!(table.rows.iter().all(|r| r.residual <= 1e-7));
    assert!(verify_ness_scaling(|w| Ok(stepper(&s, w)), &template, &s.q, &quick(), &[0.01]).is_err());
}

#[test]
fn invalid_settings_are_rejected() {
    let bad = SteadyConfig {
        tol: 0.0,
        ..SteadyConfig::default()
    };
    assert!(bad.validate().is_err());
    let s = setup();
    let st = stepper(&s, &WallModel::two_temperature(1.0, 0.05).unwrap());
    let mut src = st.zeros().into_values();
    src[[0, 0]] = 1.0;
    assert!(solve_linear_steady(&st, Some(&src), false, &quick(), None).is_err());
}
