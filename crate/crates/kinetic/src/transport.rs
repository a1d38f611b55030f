//! Time stepping of the perturbed linear and nonlinear equations on a slab.
//!
//! One step is split into free streaming along characteristics and a
//! collision update. Streaming is an exact remap of the cell averages by the
//! distance `|v_1| dt / eps`: mass leaves through a wall as the average of
//! the exiting strip, which is the outgoing trace, and enters as a constant
//! ghost value equal to the incoming trace produced by the wall operator.
//! The collision update integrates `d f = (C f + G) / eps^2` exactly for
//! the loss part and with the gain frozen at the streamed state.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::boundary::{half_fluxes, WallModel, WallPoint};
use crate::collision::{CollisionQ, LinearizedOperator};
use crate::error::{check_len, KineticError, Result};
use crate::geometry::Domain;
use crate::numerics::linear_fit;
use crate::velocity_space::{DistributionField, VelocityGrid, WeightSpec};

/// Time frame of the step size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// `dt` is physical time: streaming `dt / eps`, collisions `dt / eps^2`.
    Physical,
    /// `dt` is stretched time `tau = t / eps^2` on the stretched slab.
    Rescaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionMode {
    /// Complete linearized operator.
    Full,
    /// Only the relaxation `-nu f`.
    LossOnly,
    /// Free streaming.
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Maxwell,
    Periodic,
}

fn default_alpha_schedule() -> Vec<f64> {
    (1..=8).map(|k| 1.0 - 0.5f64.powi(k)).collect()
}

fn default_picard_tol() -> f64 {
    1e-13
}

fn default_max_inner() -> usize {
    50
}

fn default_collisions() -> CollisionMode {
    CollisionMode::Full
}

fn default_boundary() -> BoundaryMode {
    BoundaryMode::Maxwell
}

fn default_frame() -> Frame {
    Frame::Physical
}

/// Stepping parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "default_frame")]
    pub frame: Frame,
    #[serde(default = "default_alpha_schedule")]
    pub alpha_schedule: Vec<f64>,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default = "default_collisions")]
    pub collisions: CollisionMode,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryMode,
    #[serde(default)]
    pub weight: WeightSpec,
}

fn one() -> f64 {
    1.0
}

impl SolverConfig {
    pub fn new(dt: f64) -> Self {
        SolverConfig {
            dt,
            epsilon: 1.0,
            frame: Frame::Physical,
            alpha_schedule: default_alpha_schedule(),
            picard_tol: default_picard_tol(),
            max_inner: default_max_inner(),
            collisions: CollisionMode::Full,
            boundary: BoundaryMode::Maxwell,
            weight: WeightSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(KineticError::param("dt", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(KineticError::param("epsilon", "must lie in (0, 1]"));
        }
        if self.alpha_schedule.iter().any(|a| !(*a > 0.0 && *a < 1.0))
            || self.alpha_schedule.windows(2).any(|p| p[1] <= p[0])
        {
            return Err(KineticError::param(
                "alpha_schedule",
                "entries must be strictly increasing inside (0, 1)",
            ));
        }
        if !(self.picard_tol > 0.0) {
            return Err(KineticError::param("picard_tol", "must be positive"));
        }
        if self.max_inner == 0 {
            return Err(KineticError::param("max_inner", "must be positive"));
        }
        self.weight.validate()
    }

    /// `(streaming distance per unit speed, collision time)` of one step.
    pub fn step_scales(&self) -> (f64, f64) {
        let e = self.epsilon;
        match self.frame {
            Frame::Physical => (self.dt / e, self.dt / (e * e)),
            Frame::Rescaled => (self.dt * e, self.dt),
        }
    }
}

/// Norm history of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub norms_h: Vec<f64>,
    pub norms_linf: Vec<f64>,
    pub masses: Vec<f64>,
    pub fitted_rate: Option<f64>,
    pub fit_r2: Option<f64>,
    /// Largest measured reduction factor of the boundary iteration.
    pub boundary_contraction: f64,
}

impl DecaySeries {
    fn push(&mut self, t: f64, f: &DistributionField, w: &WeightSpec) {
        self.times.push(t);
        self.norms_h.push(f.norm_h());
        self.norms_linf.push(f.norm_linf_omega(w));
        self.masses.push(f.mass());
    }

    fn finish(&mut self) {
        if let Ok((r, r2)) = fit_decay_rate(self) {
            self.fitted_rate = Some(r);
            self.fit_r2 = Some(r2);
        }
    }

    /// Writes `t,norm_H,norm_Linf` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "norm_H", "norm_Linf"])?;
        for k in 0..self.times.len() {
            w.write_record(&[
                format!("{:.17e}", self.times[k]),
                format!("{:.17e}", self.norms_h[k]),
                format!("{:.17e}", self.norms_linf[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares decay rate of `log ||f_t||_H` after dropping the first
/// fifth of the samples.
pub fn fit_decay_rate(series: &DecaySeries) -> Result<(f64, f64)> {
    fit_decay_window(&series.times, &series.norms_h)
}

/// Same fit for an arbitrary `(t, norm)` series.
pub fn fit_decay_window(times: &[f64], norms: &[f64]) -> Result<(f64, f64)> {
    check_len(times.len(), norms.len())?;
    let skip = times.len() / 5;
    let t = &times[skip..];
    let y = &norms[skip..];
    if t.len() < 10 {
        return Err(KineticError::param(
            "series",
            format!("{} samples after the transient window, need 10", t.len()),
        ));
    }
    if y.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(KineticError::param("series", "non-positive norm in the fit window"));
    }
    let ly: Vec<f64> = y.iter().map(|x| x.ln()).collect();
    let (_, b, r2) = linear_fit(t, &ly);
    Ok((-b, r2))
}

/// Callback `(step, t, field)` run after each step of an evolution.
pub type Observer<'a> = dyn FnMut(usize, f64, &DistributionField) -> Result<()> + 'a;

/// Diagnostics of one step.
#[derive(Clone, Debug)]
pub struct StepInfo {
    /// Full traces (outgoing and incoming values) at the left and right wall.
    pub traces: [Vec<f64>; 2],
    pub boundary_iterations: usize,
    pub boundary_contraction: f64,
}

/// Slab stepper with its walls and per-node streaming distances.
pub struct SlabStepper {
    cfg: SolverConfig,
    op: Arc<LinearizedOperator>,
    grid: Arc<VelocityGrid>,
    l: f64,
    n_cells: usize,
    dx: f64,
    walls: [WallPoint; 2],
    shift: Vec<f64>,
    decay: Array1<f64>,
    phi: Array1<f64>,
    tau: f64,
}

impl SlabStepper {
    pub fn new(
        cfg: &SolverConfig,
        dom: &Domain,
        wall: &WallModel,
        op: Arc<LinearizedOperator>,
        n_cells: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        wall.validate()?;
        let Domain::Slab { l } = dom else {
            return Err(KineticError::Geometry(format!(
                "the stepper runs on a slab, got {dom:?}"
            )));
        };
        if n_cells < 2 {
            return Err(KineticError::param("n_cells", "need at least two cells"));
        }
        let l = *l;
        let grid = op.grid().clone();
        let dx = 2.0 * l / n_cells as f64;
        let (stream, tau) = cfg.step_scales();
        let shift: Vec<f64> = grid.nodes().iter().map(|v| v[0].abs() * stream / dx).collect();
        let smax = shift.iter().fold(0.0f64, |m, s| m.max(*s));
        if cfg.boundary == BoundaryMode::Maxwell && smax >= n_cells as f64 {
            return Err(KineticError::param(
                "dt",
                format!(
                    "characteristics cross {smax:.2} cells per step; more than one wall would be hit"
                ),
            ));
        }
        let walls = [
            WallPoint::new(&grid, wall, dom, [-l, 0.0, 0.0])?,
            WallPoint::new(&grid, wall, dom, [l, 0.0, 0.0])?,
        ];
        let (decay, phi) = match cfg.collisions {
            CollisionMode::Off => (Array1::ones(grid.len()), Array1::from_elem(grid.len(), tau)),
            _ => {
                let d = op.nu().iter().map(|n| (-n * tau).exp()).collect::<Vec<_>>();
                let p = op
                    .nu()
                    .iter()
                    .map(|n| {
                        let z = n * tau;
                        if z < 1e-8 {
                            tau * (1.0 - 0.5 * z)
                        } else {
                            -(-z).exp_m1() / n
                        }
                    })
                    .collect::<Vec<_>>();
                (Array1::from(d), Array1::from(p))
            }
        };
        Ok(SlabStepper {
            cfg: cfg.clone(),
            op,
            grid,
            l,
            n_cells,
            dx,
            walls,
            shift,
            decay,
            phi,
            tau,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn operator(&self) -> &Arc<LinearizedOperator> {
        &self.op
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn half_length(&self) -> f64 {
        self.l
    }

    pub fn walls(&self) -> &[WallPoint; 2] {
        &self.walls
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells)
            .map(|c| -self.l + (c as f64 + 0.5) * self.dx)
            .collect()
    }

    /// A zero field on this mesh.
    pub fn zeros(&self) -> DistributionField {
        DistributionField::zeros(self.grid.clone(), vec![self.dx; self.n_cells])
    }

    fn check_field(&self, f: &DistributionField) -> Result<()> {
        check_len(self.n_cells, f.n_cells())?;
        check_len(self.grid.len(), f.values().ncols())?;
        if f.cell_measure().iter().any(|m| (m - self.dx).abs() > 1e-12 * self.dx) {
            return Err(KineticError::param("field", "cell measures do not match the slab mesh"));
        }
        Ok(())
    }

    /// Outgoing traces from the exiting strips of the pre-step state.
    fn exit_traces(&self, f: &Array2<f64>) -> [Vec<f64>; 2] {
        let n = self.n_cells;
        let mut left = vec![0.0; self.grid.len()];
        let mut right = vec![0.0; self.grid.len()];
        for (i, v) in self.grid.nodes().iter().enumerate() {
            let s = self.shift[i];
            if v[0] == 0.0 || s == 0.0 {
                continue;
            }
            let k = s.floor() as usize;
            let th = s - k as f64;
            let col = f.column(i);
            // cell index counted from the exit wall
            let at = |j: usize| if v[0] > 0.0 { col[n - 1 - j] } else { col[j] };
            let mut acc = th * at(k);
            for j in 0..k {
                acc += at(j);
            }
            let avg = acc / s;
            if v[0] > 0.0 {
                right[i] = avg;
            } else {
                left[i] = avg;
            }
        }
        [left, right]
    }

    /// Boundary fixed point for one `alpha`. Returns the incoming traces,
    /// the number of sweeps and the measured reduction factor.
    fn boundary_fixed_point(
        &self,
        f: &Array2<f64>,
        alpha: f64,
        with_psi: bool,
        start: &[Vec<f64>; 2],
    ) -> Result<([Vec<f64>; 2], usize, f64)> {
        let mut prev = start.clone();
        let mut prev_diff = f64::INFINITY;
        let mut factor: f64 = 0.0;
        for sweep in 1..=self.cfg.max_inner {
            // the exiting strip never reaches the ghost region inside the
            // step-size guard, so the outgoing trace is read from `f` alone
            let out = self.exit_traces(f);
            let next = [
                self.walls[0].reflect(&self.grid, &out[0], alpha, with_psi),
                self.walls[1].reflect(&self.grid, &out[1], alpha, with_psi),
            ];
            let diff = next
                .iter()
                .zip(&prev)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0f64, f64::max);
            if prev_diff.is_finite() && prev_diff > 0.0 {
                factor = factor.max(diff / prev_diff);
            }
            prev = next;
            if diff < self.cfg.picard_tol {
                return Ok((prev, sweep, factor));
            }
            if sweep > 2 && factor >= 1.0 {
                return Err(KineticError::Solver(format!(
                    "boundary iteration does not contract, factor {factor:.3}"
                )));
            }
            prev_diff = diff;
        }
        Err(KineticError::Solver(format!(
            "boundary iteration not converged in {} sweeps (factor {factor:.3})",
            self.cfg.max_inner
        )))
    }

    fn incoming_traces(&self, f: &Array2<f64>, alpha: f64, with_psi: bool) -> Result<([Vec<f64>; 2], usize, f64)> {
        let zero = [vec![0.0; self.grid.len()], vec![0.0; self.grid.len()]];
        if alpha < 1.0 {
            return self.boundary_fixed_point(f, alpha, with_psi, &zero);
        }
        let mut start = zero;
        let mut sweeps = 0;
        let mut factor: f64 = 0.0;
        for a in self.cfg.alpha_schedule.iter().copied().chain(std::iter::once(1.0)) {
            let (t, s, q) = self.boundary_fixed_point(f, a, with_psi, &start)?;
            start = t;
            sweeps += s;
            factor = factor.max(q);
        }
        Ok((start, sweeps, factor))
    }

    fn stream(&self, f: &Array2<f64>, ghosts: Option<&[Vec<f64>; 2]>) -> Array2<f64> {
        let n = self.n_cells;
        let mut out = Array2::zeros(f.raw_dim());
        for (i, v) in self.grid.nodes().iter().enumerate() {
            let s = self.shift[i];
            let col = f.column(i);
            let mut dst = out.column_mut(i);
            if v[0] == 0.0 || s == 0.0 {
                dst.assign(&col);
                continue;
            }
            let k = s.floor() as isize;
            let th = s - k as f64;
            let right = v[0] > 0.0;
            // position counted along the direction of travel
            let idx = |j: usize| if right { j } else { n - 1 - j };
            let ghost = match ghosts {
                Some(g) => {
                    if right {
                        g[0][i]
                    } else {
                        g[1][i]
                    }
                }
                None => 0.0,
            };
            let val = |j: isize| -> f64 {
                if j >= 0 {
                    col[idx(j as usize)]
                } else if ghosts.is_some() {
                    ghost
                } else {
                    let m = j.rem_euclid(n as isize) as usize;
                    col[idx(m)]
                }
            };
            for c in 0..n {
                let c = c as isize;
                let x = (1.0 - th) * val(c - k) + th * val(c - k - 1);
                dst[idx(c as usize)] = x;
            }
        }
        out
    }

    fn collide(&self, fs: Array2<f64>, g: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        match self.cfg.collisions {
            CollisionMode::Off => Ok(match g {
                Some(g) => fs + &(g * self.tau),
                None => fs,
            }),
            CollisionMode::LossOnly => {
                let mut out = &fs * &self.decay;
                if let Some(g) = g {
                    out += &(g * &self.phi);
                }
                Ok(out)
            }
            CollisionMode::Full => {
                let mut gain = self.op.apply_k_eff_rows(&fs)?;
                if let Some(g) = g {
                    gain += g;
                }
                let mut out = &fs * &self.decay + &(gain * &self.phi);
                // local invariants move only through the source
                let mut target = fs;
                if let Some(g) = g {
                    target.scaled_add(self.tau, g);
                }
                let defect = &out - &target;
                let fix = self.op.projector().project_rows(&defect);
                out -= &fix;
                Ok(out)
            }
        }
    }

    /// One step with a given damping `alpha` of the wall operator. With
    /// `alpha = 1` the inner boundary iteration runs through the whole
    /// schedule and ends at the undamped problem.
    pub fn step(
        &self,
        f: &DistributionField,
        source: Option<&Array2<f64>>,
        alpha: f64,
        with_psi: bool,
    ) -> Result<(DistributionField, StepInfo)> {
        self.check_field(f)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(KineticError::param("alpha", "must lie in (0, 1]"));
        }
        if let Some(g) = source {
            check_len(self.n_cells, g.nrows())?;
            check_len(self.grid.len(), g.ncols())?;
        }
        let vals = f.values();
        let (streamed, info) = match self.cfg.boundary {
            BoundaryMode::Periodic => (
                self.stream(vals, None),
                StepInfo {
                    traces: [vec![], vec![]],
                    boundary_iterations: 0,
                    boundary_contraction: 0.0,
                },
            ),
            BoundaryMode::Maxwell => {
                let (inc, sweeps, factor) = self.incoming_traces(vals, alpha, with_psi)?;
                let s = self.stream(vals, Some(&inc));
                (
                    s,
                    StepInfo {
                        traces: inc,
                        boundary_iterations: sweeps,
                        boundary_contraction: factor,
                    },
                )
            }
        };
        let out = self.collide(streamed, source)?;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(KineticError::NonFinite("step output".into()));
        }
        let field = DistributionField::from_values(self.grid.clone(), f.cell_measure().to_vec(), out)?;
        Ok((field, info))
    }

    /// Wall traces of a field: outgoing values from the boundary cells,
    /// incoming values from the wall operator.
    pub fn wall_traces(&self, f: &DistributionField, with_psi: bool) -> Result<[Vec<f64>; 2]> {
        self.check_field(f)?;
        let n = self.n_cells;
        let vals = f.values();
        let mut out = [vals.row(0).to_vec(), vals.row(n - 1).to_vec()];
        for (k, w) in self.walls.iter().enumerate() {
            for (i, s) in w.sign.iter().enumerate() {
                if *s <= 0 {
                    out[k][i] = 0.0;
                }
            }
            out[k] = w.reflect(&self.grid, &out[k], 1.0, with_psi);
        }
        Ok(out)
    }

    /// `|outgoing - incoming|` mass flux at each wall of a step's traces.
    pub fn flux_balance(&self, f: &DistributionField, info: &StepInfo) -> Vec<f64> {
        let out = self.exit_traces(f.values());
        (0..2)
            .map(|k| {
                let w = &self.walls[k];
                let full: Vec<f64> = (0..self.grid.len())
                    .map(|i| if w.sign[i] > 0 { out[k][i] } else { info.traces[k][i] })
                    .collect();
                let (o, i) = half_fluxes(&self.grid, w.normal, &full);
                (o - i).abs()
            })
            .collect()
    }

    fn n_steps(&self, t_end: f64) -> Result<usize> {
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(KineticError::param("T", "must be non-negative"));
        }
        let k = (t_end / self.cfg.dt).round();
        if (k * self.cfg.dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
            return Err(KineticError::param("T", "must be a multiple of dt"));
        }
        Ok(k as usize)
    }

    /// Linear evolution with source `G` and the inflow `iota psi`.
    pub fn evolve_linear(
        &self,
        f0: &DistributionField,
        source: Option<&Array2<f64>>,
        t_end: f64,
        record_every: usize,
    ) -> Result<(DistributionField, DecaySeries)> {
        self.evolve_linear_observed(f0, source, t_end, record_every, &mut |_, _, _| Ok(()))
    }

    /// [`Self::evolve_linear`] calling `observe(step, t, f)` after every
    /// step.
    pub fn evolve_linear_observed(
        &self,
        f0: &DistributionField,
        source: Option<&Array2<f64>>,
        t_end: f64,
        record_every: usize,
        observe: &mut Observer<'_>,
    ) -> Result<(DistributionField, DecaySeries)> {
        let steps = self.n_steps(t_end)?;
        let every = record_every.max(1);
        let mut series = DecaySeries::default();
        let mut f = f0.clone();
        series.push(0.0, &f, &self.cfg.weight);
        for k in 1..=steps {
            let (next, info) = self.step(&f, source, 1.0, true)?;
            series.boundary_contraction = series.boundary_contraction.max(info.boundary_contraction);
            f = next;
            observe(k, k as f64 * self.cfg.dt, &f)?;
            if k % every == 0 || k == steps {
                series.push(k as f64 * self.cfg.dt, &f, &self.cfg.weight);
            }
        }
        series.finish();
        Ok((f, series))
    }

    /// Perturbation `h` around a steady correction `F` with the
    /// homogeneous wall condition and source `Q(h, 2F + h) / eps^2`.
    pub fn evolve_nonlinear(
        &self,
        q: &CollisionQ,
        h0: &DistributionField,
        ness: &DistributionField,
        t_end: f64,
        record_every: usize,
    ) -> Result<(DistributionField, DecaySeries)> {
        self.evolve_nonlinear_observed(q, h0, ness, t_end, record_every, &mut |_, _, _| Ok(()))
    }

    /// [`Self::evolve_nonlinear`] with a per-step observer.
    pub fn evolve_nonlinear_observed(
        &self,
        q: &CollisionQ,
        h0: &DistributionField,
        ness: &DistributionField,
        t_end: f64,
        record_every: usize,
        observe: &mut Observer<'_>,
    ) -> Result<(DistributionField, DecaySeries)> {
        self.check_field(ness)?;
        let steps = self.n_steps(t_end)?;
        let every = record_every.max(1);
        let mut series = DecaySeries::default();
        let mut h = h0.clone();
        let w = &self.cfg.weight;
        let start = h.norm_linf_omega(w);
        series.push(0.0, &h, w);
        let two_f = ness.values() * 2.0;
        for k in 1..=steps {
            let partner = &two_f + h.values();
            // the collision time of a step already carries the 1 / eps^2
            let g = q.apply_rows(h.values(), &partner)?;
            let (next, info) = self.step(&h, Some(&g), 1.0, false)?;
            series.boundary_contraction = series.boundary_contraction.max(info.boundary_contraction);
            h = next;
            observe(k, k as f64 * self.cfg.dt, &h)?;
            let now = h.norm_linf_omega(w);
            if start > 0.0 && now > 10.0 * start {
                return Err(KineticError::Solver(format!(
                    "perturbation grew from {start:.3e} to {now:.3e} at step {k}"
                )));
            }
            if k % every == 0 || k == steps {
                series.push(k as f64 * self.cfg.dt, &h, w);
            }
        }
        series.finish();
        Ok((h, series))
    }
}

/// One step of the linear equation with damping `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn step_mild(
    cfg: &SolverConfig,
    dom: &Domain,
    wall: &WallModel,
    op: Arc<LinearizedOperator>,
    f: &DistributionField,
    source: Option<&Array2<f64>>,
    alpha: f64,
) -> Result<DistributionField> {
    let s = SlabStepper::new(cfg, dom, wall, op, f.n_cells())?;
    Ok(s.step(f, source, alpha, true)?.0)
}

pub fn solve_linear_evolution(
    cfg: &SolverConfig,
    dom: &Domain,
    wall: &WallModel,
    op: Arc<LinearizedOperator>,
    f0: &DistributionField,
    source: Option<&Array2<f64>>,
    t_end: f64,
) -> Result<(DistributionField, DecaySeries)> {
    let s = SlabStepper::new(cfg, dom, wall, op, f0.n_cells())?;
    s.evolve_linear(f0, source, t_end, 1)
}

#[allow(clippy::too_many_arguments)]
pub fn solve_nonlinear_evolution(
    cfg: &SolverConfig,
    dom: &Domain,
    wall: &WallModel,
    op: Arc<LinearizedOperator>,
    q: &CollisionQ,
    h0: &DistributionField,
    ness: &DistributionField,
    t_end: f64,
) -> Result<(DistributionField, DecaySeries)> {
    let s = SlabStepper::new(cfg, dom, wall, op, h0.n_cells())?;
    s.evolve_nonlinear(q, h0, ness, t_end, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{IotaProfile, ThetaProfile};
    use crate::velocity_space::build_grid;

    fn small_op() -> Arc<LinearizedOperator> {
        Arc::new(LinearizedOperator::new(Arc::new(build_grid(8, 4.5).unwrap())))
    }

    fn maxwellian_field(st: &SlabStepper) -> DistributionField {
        let g = st.grid().clone();
        DistributionField::from_fn(g.clone(), vec![st.dx(); st.n_cells()], |_, i, _| g.maxwellian()[i])
    }

    #[test]
    fn equilibrium_is_stationary() {
        let op = small_op();
        let dom = Domain::slab(0.5).unwrap();
        let wall = WallModel::isothermal(IotaProfile::Bases);
        let st = SlabStepper::new(&SolverConfig::new(0.02), &dom, &wall, op, 8).unwrap();
        let m = maxwellian_field(&st);
        let mut f = m.clone();
        for _ in 0..20 {
            let (next, _) = st.step(&f, None, 1.0, true).unwrap();
            let d = next.difference(&f).unwrap().norm_linf_omega(&WeightSpec::default());
            assert!(d < 1e-12, "drift {d}");
            f = next;
        }
    }

    #[test]
    fn loss_only_relaxes_exponentially() {
        let op = small_op();
        let dom = Domain::slab(1.0).unwrap();
        let wall = WallModel::isothermal(IotaProfile::Bases);
        let mut cfg = SolverConfig::new(0.05);
        cfg.collisions = CollisionMode::LossOnly;
        cfg.boundary = BoundaryMode::Periodic;
        let st = SlabStepper::new(&cfg, &dom, &wall, op.clone(), 6).unwrap();
        let g = st.grid().clone();
        let f0 = DistributionField::from_fn(g.clone(), vec![st.dx(); 6], |_, i, v| g.maxwellian()[i] * (1.0 + v[1]));
        let (f, _) = st.evolve_linear(&f0, None, 0.5, 1).unwrap();
        for c in 0..6 {
            for i in 0..g.len() {
                let want = (-op.nu()[i] * 0.5).exp() * f0.values()[[c, i]];
                assert!((f.values()[[c, i]] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn specular_billiard_period() {
        let op = small_op();
        let g = op.grid().clone();
        let n = 8;
        let l = 1.0;
        let dx = 2.0 * l / n as f64;
        let speed = g.axis().iter().copied().filter(|a| *a > 0.0).fold(f64::MAX, f64::min);
        let mut cfg = SolverConfig::new(dx / speed);
        cfg.collisions = CollisionMode::Off;
        let wall = WallModel::isothermal(IotaProfile::Constant { value: 0.0 });
        let st = SlabStepper::new(&cfg, &Domain::slab(l).unwrap(), &wall, op, n).unwrap();
        let f0 = DistributionField::from_fn(g.clone(), vec![dx; n], |c, _, v| v[0] * (c as f64 + 1.0).powi(2));
        let mut f = f0.clone();
        for _ in 0..2 * n {
            f = st.step(&f, None, 1.0, false).unwrap().0;
        }
        for (i, v) in g.nodes().iter().enumerate() {
            if (v[0].abs() - speed).abs() < 1e-12 {
                for c in 0..n {
                    assert!((f.values()[[c, i]] - f0.values()[[c, i]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn frames_agree() {
        let op = small_op();
        let dom = Domain::slab(1.0).unwrap();
        let wall = WallModel::two_temperature(0.5, 0.1).unwrap();
        let mut a = SolverConfig::new(0.04);
        a.epsilon = 0.5;
        a.frame = Frame::Rescaled;
        let mut b = a.clone();
        b.frame = Frame::Physical;
        b.dt = 0.25 * 0.04;
        let sa = SlabStepper::new(&a, &dom, &wall, op.clone(), 8).unwrap();
        let sb = SlabStepper::new(&b, &dom, &wall, op, 8).unwrap();
        let g = sa.grid().clone();
        let f = DistributionField::from_fn(g.clone(), vec![sa.dx(); 8], |c, i, v| {
            g.maxwellian()[i] * (v[0] + c as f64 * 0.1)
        });
        let fa = sa.step(&f, None, 1.0, true).unwrap().0;
        let fb = sb.step(&f, None, 1.0, true).unwrap().0;
        let d = fa.difference(&fb).unwrap().values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(d < 1e-10);
    }

    #[test]
    fn walls_conserve_mass() {
        let op = small_op();
        let dom = Domain::slab(1.0).unwrap();
        let wall = WallModel::direct(
            0.1,
            ThetaProfile::Bases { left: -0.1, right: 0.1 },
            IotaProfile::Constant { value: 0.7 },
        )
        .unwrap();
        let st = SlabStepper::new(&SolverConfig::new(0.05), &dom, &wall, op, 8).unwrap();
        let g = st.grid().clone();
        let mut f = DistributionField::from_fn(g.clone(), vec![st.dx(); 8], |c, i, v| {
            g.maxwellian()[i] * (v[0] * v[1] + (c as f64).sin())
        });
        let m0 = f.mass();
        for _ in 0..10 {
            let (next, info) = st.step(&f, None, 1.0, true).unwrap();
            for r in st.flux_balance(&f, &info) {
                assert!(r < 1e-12, "flux residual {r}");
            }
            f = next;
        }
        assert!((f.mass() - m0).abs() < 1e-12);
    }

    #[test]
    fn step_guard_rejects_long_steps() {
        let op = small_op();
        let dom = Domain::slab(1.0).unwrap();
        let wall = WallModel::isothermal(IotaProfile::Bases);
        assert!(SlabStepper::new(&SolverConfig::new(1.0), &dom, &wall, op.clone(), 8).is_err());
        assert!(SlabStepper::new(&SolverConfig::new(0.05), &Domain::disk(1.0).unwrap(), &wall, op, 8).is_err());
    }

    #[test]
    fn decay_fit_on_synthetic_series() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.5).collect();
        let y: Vec<f64> = t.iter().map(|t| (-0.3 * t).exp()).collect();
        let (r, r2) = fit_decay_window(&t, &y).unwrap();
        assert!((r - 0.3).abs() < 1e-6 && (r2 - 1.0).abs() < 1e-12);
        let (r, _) = fit_decay_window(&t, &vec![2.0; 50]).unwrap();
        assert_eq!(r, 0.0);
        let y: Vec<f64> = t.iter().map(|t| (-0.3 * t).exp() * (1.0 + 0.01 * t.sin())).collect();
        assert!((fit_decay_window(&t, &y).unwrap().0 - 0.3).abs() < 0.01);
        assert!(fit_decay_window(&t[..5], &y[..5]).is_err());
    }

    #[test]
    fn zero_perturbation_stays_zero() {
        let op = small_op();
        let q = CollisionQ::new(op.grid().clone(), crate::collision::AngularRule::product(4, 8).unwrap(), op.projector().clone()).unwrap();
        let dom = Domain::slab(1.0).unwrap();
        let wall = WallModel::two_temperature(1.0, 0.05).unwrap();
        let st = SlabStepper::new(&SolverConfig::new(0.05), &dom, &wall, op, 4).unwrap();
        let h0 = st.zeros();
        let ness = maxwellian_field(&st);
        let (h, _) = st.evolve_nonlinear(&q, &h0, &ness, 0.2, 1).unwrap();
        assert!(h.values().iter().all(|x| *x == 0.0));
    }
}
