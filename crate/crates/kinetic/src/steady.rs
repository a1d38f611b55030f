//! Steady states of the slab problem.
//!
//! The linear steady problem is the fixed point of one time step,
//! `F = A F + b`, where `A` is the homogeneous step and `b` the step of the
//! zero state (wall inflow and source). It is solved by GMRES on the
//! zero-mass subspace, where `I - A` is invertible. The nonlinear steady
//! state is the Picard limit of `g -> linear steady solution with source
//! Q(g, g)`.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{measure_cq, moments, CollisionQ};
use crate::error::{check_len, KineticError, Result};
use crate::linalg::{gmres, GmresSettings};
use crate::numerics::linear_fit;
use crate::sampling::random_micro_velocity;
use crate::transport::SlabStepper;
use crate::velocity_space::{linf_omega_velocity, DistributionField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteadyMethod {
    /// Krylov solve of the stepper fixed point.
    Gmres,
    /// Running time average of the evolution from rest.
    Cesaro,
}

fn d_tol() -> f64 {
    1e-8
}
fn d_linear_tol() -> f64 {
    1e-11
}
fn d_max_picard() -> usize {
    30
}
fn d_restart() -> usize {
    300
}
fn d_max_linear() -> usize {
    3000
}
fn d_method() -> SteadyMethod {
    SteadyMethod::Gmres
}
fn d_cesaro_doublings() -> usize {
    10
}
fn d_budget_samples() -> usize {
    2
}

/// Tolerances of the steady solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    /// Picard stopping threshold in `L^inf_omega`.
    #[serde(default = "d_tol")]
    pub tol: f64,
    /// Relative residual of each linear solve.
    #[serde(default = "d_linear_tol")]
    pub linear_tol: f64,
    #[serde(default = "d_max_picard")]
    pub max_picard: usize,
    #[serde(default = "d_restart")]
    pub restart: usize,
    #[serde(default = "d_max_linear")]
    pub max_linear_iterations: usize,
    #[serde(default = "d_method")]
    pub method: SteadyMethod,
    #[serde(default = "d_cesaro_doublings")]
    pub cesaro_doublings: usize,
    /// Random sources used to measure the linear amplification; zero
    /// skips the budget.
    #[serde(default = "d_budget_samples")]
    pub budget_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            tol: d_tol(),
            linear_tol: d_linear_tol(),
            max_picard: d_max_picard(),
            restart: d_restart(),
            max_linear_iterations: d_max_linear(),
            method: d_method(),
            cesaro_doublings: d_cesaro_doublings(),
            budget_samples: d_budget_samples(),
            seed: 0,
        }
    }
}

impl SteadyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.linear_tol > 0.0) {
            return Err(KineticError::param("tol", "tolerances must be positive"));
        }
        if self.max_picard == 0 || self.restart == 0 || self.max_linear_iterations == 0 {
            return Err(KineticError::param("max_picard", "iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Smallness budget of the Picard map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Measured amplification `||F|| / ||G||_{omega / nu}` of the linear solve.
    pub varpi_hat: f64,
    pub c_q: f64,
    /// `||F_psi|| / theta0` of the inflow response.
    pub c0: f64,
    pub lambda: f64,
    /// `varpi C_Q lambda^2 + C_0 theta0 <= lambda`.
    pub ball_maps_into_itself: bool,
    /// `||F|| <= lambda` for the computed state.
    pub inside_ball: bool,
}

/// Result of a steady solve. `field` is the zero-mass correction.
#[derive(Clone, Debug)]
pub struct SteadyReport {
    pub field: DistributionField,
    pub residual: f64,
    pub iterations: usize,
    pub contraction_factors: Vec<f64>,
    pub increments: Vec<f64>,
    pub distance_to_maxwellian: f64,
    pub linear_iterations: Vec<usize>,
    pub mass: f64,
    pub budget: Option<Budget>,
}

/// Serializable summary of a [`SteadyReport`].
#[derive(Clone, Debug, Serialize)]
pub struct SteadySummary {
    pub residual: f64,
    pub iterations: usize,
    pub contraction_factors: Vec<f64>,
    pub increments: Vec<f64>,
    pub distance_to_maxwellian: f64,
    pub linear_iterations: Vec<usize>,
    pub mass: f64,
    pub budget: Option<Budget>,
    pub energy_profile: Vec<f64>,
    pub energy_monotone: bool,
}

impl SteadyReport {
    pub fn summary(&self) -> Result<SteadySummary> {
        let e = energy_profile(&self.field)?;
        Ok(SteadySummary {
            residual: self.residual,
            iterations: self.iterations,
            contraction_factors: self.contraction_factors.clone(),
            increments: self.increments.clone(),
            distance_to_maxwellian: self.distance_to_maxwellian,
            linear_iterations: self.linear_iterations.clone(),
            mass: self.mass,
            budget: self.budget.clone(),
            energy_monotone: is_monotone(&e),
            energy_profile: e,
        })
    }
}

/// Helper binding a stepper to flattened vectors.
struct Flat<'a> {
    st: &'a SlabStepper,
    hw: Vec<f64>,
    mw: Vec<f64>,
    m_norm2: f64,
}

impl<'a> Flat<'a> {
    fn new(st: &'a SlabStepper) -> Self {
        let g = st.grid();
        let n = g.len();
        let cells = st.n_cells();
        let dx = st.dx();
        let w = g.weights();
        let m = g.maxwellian();
        let mut hw = Vec::with_capacity(cells * n);
        let mut mw = Vec::with_capacity(cells * n);
        for _ in 0..cells {
            for i in 0..n {
                hw.push(dx * w[i] / m[i]);
                mw.push(m[i]);
            }
        }
        let m_norm2 = hw.iter().zip(&mw).map(|(h, m)| h * m * m).sum();
        Flat { st, hw, mw, m_norm2 }
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += self.hw[k] * a[k] * b[k];
        }
        s
    }

    /// Removes the uniform Maxwellian component, which is the mass.
    fn project(&self, x: &mut [f64]) {
        let c = self.inner(x, &self.mw) / self.m_norm2;
        for (xi, m) in x.iter_mut().zip(&self.mw) {
            *xi -= c * m;
        }
    }

    fn field(&self, x: Vec<f64>) -> Result<DistributionField> {
        let g = self.st.grid().clone();
        let a = Array2::from_shape_vec((self.st.n_cells(), g.len()), x)
            .map_err(|e| KineticError::Solver(e.to_string()))?;
        DistributionField::from_values(g, vec![self.st.dx(); self.st.n_cells()], a)
    }

    fn step(&self, x: &[f64], source: Option<&Array2<f64>>, with_psi: bool) -> Result<Vec<f64>> {
        let f = self.field(x.to_vec())?;
        Ok(flat_of(&self.st.step(&f, source, 1.0, with_psi)?.0))
    }
}

fn flat_of(f: &DistributionField) -> Vec<f64> {
    f.values().iter().copied().collect()
}

/// Steady defect `||(S(F) - F) / dt||_{L^inf_omega}` of a correction `F`
/// under one full step `S` with inflow and optional source.
pub fn steady_defect(st: &SlabStepper, f: &DistributionField, source: Option<&Array2<f64>>) -> Result<f64> {
    let (next, _) = st.step(f, source, 1.0, true)?;
    let d = next.difference(f)?;
    Ok(d.norm_linf_omega(&st.config().weight) / st.config().dt)
}

/// Linear steady solve with inflow `iota psi` (when `with_psi`) and a
/// zero-mass source.
pub fn solve_linear_steady(
    st: &SlabStepper,
    source: Option<&Array2<f64>>,
    with_psi: bool,
    cfg: &SteadyConfig,
    start: Option<&DistributionField>,
) -> Result<SteadyReport> {
    cfg.validate()?;
    if let Some(g) = source {
        check_len(st.n_cells(), g.nrows())?;
        let field = DistributionField::from_values(st.grid().clone(), vec![st.dx(); st.n_cells()], g.clone())?;
        let w = st.grid().weights();
        let scale: f64 = g.rows().into_iter().map(|r| st.dx() * r.iter().zip(w).map(|(x, wk)| wk * x.abs()).sum::<f64>()).sum();
        if field.mass().abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(KineticError::param("source", format!("mass {:.3e} is not zero", field.mass())));
        }
    }
    let (field, iters) = match cfg.method {
        SteadyMethod::Gmres => linear_gmres(st, source, with_psi, cfg, start)?,
        SteadyMethod::Cesaro => linear_cesaro(st, source, with_psi, cfg)?,
    };
    let residual = {
        let (next, _) = st.step(&field, source, 1.0, with_psi)?;
        next.difference(&field)?.norm_linf_omega(&st.config().weight) / st.config().dt
    };
    Ok(SteadyReport {
        distance_to_maxwellian: field.norm_linf_omega(&st.config().weight),
        mass: field.mass(),
        field,
        residual,
        iterations: 1,
        contraction_factors: vec![],
        increments: vec![],
        linear_iterations: vec![iters],
        budget: None,
    })
}

fn linear_gmres(
    st: &SlabStepper,
    source: Option<&Array2<f64>>,
    with_psi: bool,
    cfg: &SteadyConfig,
    start: Option<&DistributionField>,
) -> Result<(DistributionField, usize)> {
    let flat = Flat::new(st);
    let len = flat.hw.len();
    let mut b = flat.step(&vec![0.0; len], source, with_psi)?;
    flat.project(&mut b);
    let x0 = start.map(flat_of);
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let ax = flat.step(x, None, false)?;
        let mut y: Vec<f64> = x.iter().zip(&ax).map(|(a, b)| a - b).collect();
        flat.project(&mut y);
        Ok(y)
    };
    let out = gmres(
        apply,
        |a, b| flat.inner(a, b),
        &b,
        x0.as_deref(),
        GmresSettings {
            restart: cfg.restart,
            max_iterations: cfg.max_linear_iterations,
            rel_tol: cfg.linear_tol,
        },
    )?;
    if !out.converged {
        return Err(KineticError::Solver(format!(
            "linear steady solve stalled at relative residual {:.3e} after {} iterations",
            out.relative_residual, out.iterations
        )));
    }
    let mut x = out.solution;
    flat.project(&mut x);
    Ok((flat.field(x)?, out.iterations))
}

fn linear_cesaro(
    st: &SlabStepper,
    source: Option<&Array2<f64>>,
    with_psi: bool,
    cfg: &SteadyConfig,
) -> Result<(DistributionField, usize)> {
    let dt = st.config().dt;
    let (nu_min, _) = st.operator().nu_bounds();
    let t0 = 5.0 / nu_min;
    let w = st.config().weight;
    let mut f = st.zeros();
    let mut sum = st.zeros();
    let mut steps = 0usize;
    let mut prev: Option<DistributionField> = None;
    for k in 0..=cfg.cesaro_doublings {
        let target = ((t0 * 2f64.powi(k as i32)) / dt).ceil() as usize;
        while steps < target {
            f = st.step(&f, source, 1.0, with_psi)?.0;
            sum.axpy(1.0, &f)?;
            steps += 1;
        }
        let mut mean = sum.clone();
        mean.scale(1.0 / steps as f64);
        if let Some(p) = &prev {
            if mean.difference(p)?.norm_linf_omega(&w) < cfg.tol {
                return Ok((mean, steps));
            }
        }
        prev = Some(mean);
    }
    Err(KineticError::Solver(format!(
        "time averages still moving after {steps} steps"
    )))
}

/// Steady defect of a full state `F = M + correction` including the
/// collision term `Q(correction, correction)`.
pub fn ness_residual(st: &SlabStepper, q: &CollisionQ, full: &DistributionField) -> Result<f64> {
    let g = st.grid();
    let mut corr = full.clone();
    for mut row in corr.values_mut().axis_iter_mut(Axis(0)) {
        for (x, m) in row.iter_mut().zip(g.maxwellian()) {
            *x -= m;
        }
    }
    let src = q.apply_rows(corr.values(), corr.values())?;
    steady_defect(st, &corr, Some(&src))
}

/// Picard iteration for the nonlinear steady correction.
pub fn solve_ness(
    st: &SlabStepper,
    q: &CollisionQ,
    cfg: &SteadyConfig,
    initial: Option<&DistributionField>,
) -> Result<SteadyReport> {
    cfg.validate()?;
    let w = st.config().weight;
    let base = solve_linear_steady(st, None, true, cfg, None)?;
    let f_psi = base.field;
    let mut linear_iterations = base.linear_iterations.clone();
    let mut g = match initial {
        Some(f) => f.clone(),
        None => st.zeros(),
    };
    let mut correction: Option<DistributionField> = None;
    let mut increments = Vec::new();
    let mut factors = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for m in 0..cfg.max_picard {
        iterations = m + 1;
        let src = q.apply_rows(g.values(), g.values())?;
        let next = if src.iter().all(|x| *x == 0.0) {
            f_psi.clone()
        } else {
            let c = solve_linear_steady(st, Some(&src), false, cfg, correction.as_ref())?;
            linear_iterations.extend(c.linear_iterations);
            let mut n = f_psi.clone();
            n.axpy(1.0, &c.field)?;
            correction = Some(c.field);
            n
        };
        let inc = next.difference(&g)?.norm_linf_omega(&w);
        if let Some(prev) = increments.last() {
            let f: f64 = if *prev > 0.0 { inc / prev } else { 0.0 };
            factors.push(f);
            if m >= 2 && f >= 1.0 && inc > cfg.tol {
                return Err(KineticError::Solver(format!(
                    "Picard map expands at iteration {iterations}: factor {f:.3}"
                )));
            }
        }
        increments.push(inc);
        g = next;
        if inc < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(KineticError::Solver(format!(
            "Picard iteration not converged after {iterations} iterations"
        )));
    }
    let src = q.apply_rows(g.values(), g.values())?;
    let residual = steady_defect(st, &g, Some(&src))?;
    let budget = if cfg.budget_samples > 0 {
        Some(measure_budget(st, q, cfg, &f_psi, &g)?)
    } else {
        None
    };
    Ok(SteadyReport {
        distance_to_maxwellian: g.norm_linf_omega(&w),
        mass: g.mass(),
        field: g,
        residual,
        iterations,
        contraction_factors: factors,
        increments,
        linear_iterations,
        budget,
    })
}

/// Measures the amplification of the linear steady solver, the collision
/// bound and the inflow response, and evaluates the ball radius
/// `lambda = min(1 / (varpi C_Q + C_0), 1 / (4 varpi C_Q))`.
pub fn measure_budget(
    st: &SlabStepper,
    q: &CollisionQ,
    cfg: &SteadyConfig,
    f_psi: &DistributionField,
    state: &DistributionField,
) -> Result<Budget> {
    let grid = st.grid().clone();
    let w = st.config().weight;
    let nu = st.operator().nu().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proj = st.operator().projector();
    let mut varpi: f64 = 0.0;
    let sub = SteadyConfig {
        budget_samples: 0,
        ..cfg.clone()
    };
    for _ in 0..cfg.budget_samples {
        let mut src = Array2::zeros((st.n_cells(), grid.len()));
        for mut row in src.axis_iter_mut(Axis(0)) {
            let r = random_micro_velocity(&grid, proj, &mut rng)?;
            row.assign(&ndarray::ArrayView1::from(&r[..]));
        }
        let gnorm = src
            .axis_iter(Axis(0))
            .map(|row| {
                let s: Vec<f64> = row.iter().zip(&nu).map(|(a, n)| a / n).collect();
                linf_omega_velocity(&grid, &w, &s)
            })
            .fold(0.0f64, f64::max);
        let r = solve_linear_steady(st, Some(&src), false, &sub, None)?;
        varpi = varpi.max(r.field.norm_linf_omega(&w) / gnorm);
    }
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
        .map(|_| {
            Ok((
                random_micro_velocity(&grid, proj, &mut rng)?,
                random_micro_velocity(&grid, proj, &mut rng)?,
            ))
        })
        .collect::<Result<_>>()?;
    let c_q = measure_cq(q, &nu, &w, &samples)?;
    let theta0 = st.walls().iter().map(|p| (p.theta - 1.0).abs()).fold(0.0f64, f64::max);
    let psi_norm = f_psi.norm_linf_omega(&w);
    let c0 = if theta0 > 0.0 { psi_norm / theta0 } else { 0.0 };
    let lambda = (1.0 / (varpi * c_q + c0)).min(1.0 / (4.0 * varpi * c_q));
    let maps = varpi * c_q * lambda * lambda + psi_norm <= lambda;
    Ok(Budget {
        varpi_hat: varpi,
        c_q,
        c0,
        lambda,
        ball_maps_into_itself: maps,
        inside_ball: state.norm_linf_omega(&w) <= lambda,
    })
}

/// Energy moment of each cell.
pub fn energy_profile(f: &DistributionField) -> Result<Vec<f64>> {
    Ok(moments(f.grid(), f.values())?.into_iter().map(|m| m.energy).collect())
}

/// Non-strict monotonicity in either direction.
pub fn is_monotone(x: &[f64]) -> bool {
    x.windows(2).all(|p| p[1] >= p[0]) || x.windows(2).all(|p| p[1] <= p[0])
}

/// One row of the scaling study.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub theta0: f64,
    pub distance: f64,
    pub iterations: usize,
    pub residual: f64,
    pub contraction_factors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Slope of `log distance` against `log theta0` over the nonzero rows.
    pub exponent: Option<f64>,
    pub r2: Option<f64>,
}

impl ScalingRow {
    pub fn from_report(theta0: f64, r: SteadyReport) -> Self {
        ScalingRow {
            theta0,
            distance: r.distance_to_maxwellian,
            iterations: r.iterations,
            residual: r.residual,
            contraction_factors: r.contraction_factors,
        }
    }
}

impl ScalingTable {
    /// Fits the power law over the rows with positive `theta0` and
    /// distance.
    pub fn from_rows(rows: Vec<ScalingRow>) -> Self {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.theta0 > 0.0 && r.distance > 0.0)
            .map(|r| (r.theta0.ln(), r.distance.ln()))
            .collect();
        let (exponent, r2) = if pts.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let (_, b, r2) = linear_fit(&x, &y);
            (Some(b), Some(r2))
        } else {
            (None, None)
        };
        ScalingTable { rows, exponent, r2 }
    }
}

/// Solves the steady problem for each `theta0` with the wall profile
/// rescaled accordingly and fits the power law of `||F - M||`.
pub fn verify_ness_scaling<B>(
    mut build: B,
    template: &crate::boundary::WallModel,
    q: &CollisionQ,
    cfg: &SteadyConfig,
    theta0_list: &[f64],
) -> Result<ScalingTable>
where
    B: FnMut(&crate::boundary::WallModel) -> Result<SlabStepper>,
{
    if theta0_list.len() < 2 {
        return Err(KineticError::param("theta0_list", "need at least two values"));
    }
    let mut rows = Vec::new();
    for &t in theta0_list {
        let wall = template.with_theta0(t)?;
        let st = build(&wall)?;
        let r = solve_ness(&st, q, cfg, None)?;
        rows.push(ScalingRow::from_report(t, r));
    }
    Ok(ScalingTable::from_rows(rows))
}
