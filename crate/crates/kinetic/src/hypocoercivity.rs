//! Hypocoercive scalar product, norm equivalence and the dissipation audit.
//!
//! The audit runs on a rectangular section `(-lx, lx) x (-ly, ly)` of an
//! `x_3`-invariant channel. The `x_1` faces are the bases of the wall model
//! and the `x_2` faces are its lateral panel, so wall temperature and
//! accommodation are read through the cylinder parameterisation restricted
//! to the plane `x_3 = 0`. Kinetic unknowns are constant on the cells of the
//! same [`QuadMesh`] used by the elliptic solvers.
//!
//! The correction terms of the scalar product pair gradients of elliptic
//! correctors with velocity moments:
//!
//! ```text
//! <<g, h>> = <g, h>_H + eta_1 s [<grad u[E g], M_p h> + sym]
//!                     + eta_2 s [<grad^s U[mu g], M_q h> + sym]
//!                     + eta_3 s [<grad u_N[rho g], mu h> + sym]
//! ```
//!
//! with `s = +1` for [`Orientation::Dissipative`] and `s = -1` for
//! [`Orientation::Literal`].

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{half_fluxes, wall_maxwellian, wall_maxwellian_analytic, WallModel, WallPoint};
use crate::collision::{LinearizedOperator, MacroProjector};
use crate::elliptic::{solve_lame, solve_poisson_2d, PoissonBc, QuadMesh, Section};
use crate::error::{check_len, KineticError, Result};
use crate::geometry::Domain;
use crate::numerics::{dot3, gauss_legendre};
use crate::sampling::{random_field, remove_mass, SampleKind};
use crate::velocity_space::{bracket, maxwellian, DistributionField, VelocityGrid};

/// One boundary face of the audit box.
#[derive(Clone, Debug)]
pub struct Face {
    pub cell: usize,
    /// Normal axis, 0 for the bases and 1 for the lateral faces.
    pub axis: usize,
    pub length: f64,
    pub point: WallPoint,
}

/// Rectangular section with its wall data and face bookkeeping.
#[derive(Clone, Debug)]
pub struct AuditBox {
    grid: Arc<VelocityGrid>,
    mesh: QuadMesh,
    wall: WallModel,
    lx: f64,
    ly: f64,
    faces: Vec<Face>,
    /// Face index by `[left, right]` per row and `[bottom, top]` per column.
    x_faces: Vec<[usize; 2]>,
    y_faces: Vec<[usize; 2]>,
    areas: Vec<f64>,
}

impl AuditBox {
    pub fn new(grid: Arc<VelocityGrid>, wall: &WallModel, lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        wall.validate()?;
        let mesh = QuadMesh::new(Section::Rectangle { lx, ly }, nx, ny)?;
        let host = Domain::cylinder(lx, ly)?;
        let dx = 2.0 * lx / nx as f64;
        let dy = 2.0 * ly / ny as f64;
        let mut faces = Vec::with_capacity(2 * (nx + ny));
        let mut x_faces = Vec::with_capacity(ny);
        let mut y_faces = vec![[0usize; 2]; nx];
        for j in 0..ny {
            let y = -ly + (j as f64 + 0.5) * dy;
            let mut pair = [0usize; 2];
            for (s, x) in [-lx, lx].into_iter().enumerate() {
                let cell = j * nx + if s == 0 { 0 } else { nx - 1 };
                pair[s] = faces.len();
                faces.push(Face {
                    cell,
                    axis: 0,
                    length: dy,
                    point: WallPoint::new(&grid, wall, &host, [x, y, 0.0])?,
                });
            }
            x_faces.push(pair);
        }
        for (i, pair) in y_faces.iter_mut().enumerate() {
            let x = -lx + (i as f64 + 0.5) * dx;
            for (s, y) in [-ly, ly].into_iter().enumerate() {
                let cell = if s == 0 { i } else { (ny - 1) * nx + i };
                pair[s] = faces.len();
                faces.push(Face {
                    cell,
                    axis: 1,
                    length: dx,
                    point: WallPoint::new(&grid, wall, &host, [x, y, 0.0])?,
                });
            }
        }
        let areas = mesh.cell_areas();
        Ok(AuditBox {
            grid,
            mesh,
            wall: wall.clone(),
            lx,
            ly,
            faces,
            x_faces,
            y_faces,
            areas,
        })
    }

    /// Same geometry and velocity grid with another wall.
    pub fn with_wall(&self, wall: &WallModel) -> Result<Self> {
        AuditBox::new(self.grid.clone(), wall, self.lx, self.ly, self.mesh.nx, self.mesh.ny)
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn mesh(&self) -> &QuadMesh {
        &self.mesh
    }

    pub fn wall(&self) -> &WallModel {
        &self.wall
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        self.mesh.cell_centers()
    }

    /// All-zero field on the box.
    pub fn zeros(&self) -> DistributionField {
        DistributionField::zeros(self.grid.clone(), self.areas.clone())
    }

    /// Boundary traces: the outgoing part is the adjacent cell value, the
    /// incoming part is its image under the wall operator (no inflow term).
    pub fn traces(&self, g: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        check_len(self.n_cells(), g.nrows())?;
        Ok(self
            .faces
            .iter()
            .map(|f| {
                let row = g.row(f.cell).to_vec();
                f.point.reflect(&self.grid, &row, 1.0, false)
            })
            .collect())
    }

    /// Largest relative mismatch of outgoing and incoming mass flux.
    pub fn trace_flux_mismatch(&self, traces: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for (f, t) in self.faces.iter().zip(traces) {
            let (out, inc) = half_fluxes(&self.grid, f.point.normal, t);
            let scale = 1.0 + out.abs() + inc.abs();
            worst = worst.max((out - inc).abs() / scale);
        }
        worst
    }

    /// First-order upwind `-v . grad g` with the boundary traces as ghosts.
    pub fn transport(&self, g: &Array2<f64>, traces: &[Vec<f64>]) -> Result<Array2<f64>> {
        check_len(self.n_cells(), g.nrows())?;
        let (nx, ny) = (self.mesh.nx, self.mesh.ny);
        let d = [2.0 * self.lx / nx as f64, 2.0 * self.ly / ny as f64];
        let nodes = self.grid.nodes();
        let mut out = Array2::zeros(g.raw_dim());
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                for (k, v) in nodes.iter().enumerate() {
                    let here = g[[c, k]];
                    let mut acc = 0.0;
                    for axis in 0..2 {
                        let va = v[axis];
                        if va == 0.0 {
                            continue;
                        }
                        let (pos, len) = if axis == 0 { (i, nx) } else { (j, ny) };
                        let step = if axis == 0 { 1 } else { nx };
                        let ghost = |side: usize| {
                            let f = if axis == 0 { self.x_faces[j][side] } else { self.y_faces[i][side] };
                            traces[f][k]
                        };
                        if va > 0.0 {
                            let up = if pos > 0 { g[[c - step, k]] } else { ghost(0) };
                            acc -= va * (here - up) / d[axis];
                        } else {
                            let dn = if pos + 1 < len { g[[c + step, k]] } else { ghost(1) };
                            acc -= va * (dn - here) / d[axis];
                        }
                    }
                    out[[c, k]] = acc;
                }
            }
        }
        Ok(out)
    }

    /// `sum_faces |face| iota (gamma_+ g)~^2`, the flux functional of the
    /// boundary defect.
    pub fn flux_functional(&self, traces: &[Vec<f64>]) -> f64 {
        self.faces
            .iter()
            .zip(traces)
            .map(|(f, t)| {
                let flux = f.point.outgoing_flux(&self.grid, t);
                f.length * f.point.iota * flux * flux
            })
            .sum()
    }

    /// `sum_faces |face| iota (2 - iota) || D_1^perp gamma_+ ||^2` in the
    /// outgoing boundary space.
    pub fn d1_perp_functional(&self, traces: &[Vec<f64>]) -> Result<f64> {
        let nodes = self.grid.nodes();
        let w = self.grid.weights();
        let m = self.grid.maxwellian();
        let mut total = 0.0;
        for (f, t) in self.faces.iter().zip(traces) {
            let iota = f.point.iota;
            if iota == 0.0 {
                continue;
            }
            let n = f.point.normal;
            let m1 = wall_maxwellian(&self.grid, 1.0, n)?;
            let flux = f.point.outgoing_flux(&self.grid, t);
            let mut s = 0.0;
            for k in 0..nodes.len() {
                let c = dot3(n, nodes[k]);
                if c > 0.0 {
                    let r = t[k] - m1[k] * flux;
                    s += w[k] * r * r / m[k] * c;
                }
            }
            total += f.length * iota * (2.0 - iota) * s;
        }
        Ok(total)
    }
}

/// Velocity moments of one cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellMoments {
    pub rho: f64,
    pub mu: [f64; 3],
    pub energy: f64,
    pub mp: [f64; 3],
    pub mq: [[f64; 3]; 3],
}

/// `rho`, `mu`, `E`, `M_p` and `M_q` of a velocity profile.
pub fn cell_moments(grid: &VelocityGrid, g: &[f64]) -> CellMoments {
    let s6 = 6f64.sqrt();
    let mut m = CellMoments::default();
    for ((v, w), gi) in grid.nodes().iter().zip(grid.weights()).zip(g) {
        let a = w * gi;
        let r2 = dot3(*v, *v);
        m.rho += a;
        m.energy += a * (r2 - 3.0) / s6;
        for i in 0..3 {
            m.mu[i] += a * v[i];
            m.mp[i] += a * v[i] * (r2 - 5.0) / s6;
            for j in 0..3 {
                let d = if i == j { 1.0 } else { 0.0 };
                m.mq[i][j] += a * (v[i] * v[j] - d);
            }
        }
    }
    m
}

/// Sign convention of the correction terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Gradients enter with a plus sign, so the corrections add a positive
    /// macroscopic contribution to `<<-L g, g>>`.
    Dissipative,
    /// Gradients enter as `-grad`, exactly as the scalar product is
    /// usually displayed.
    Literal,
}

/// Parameters of the hypocoercive scalar product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypoForm {
    pub eta: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    /// Optional factor multiplying every correction term.
    pub epsilon_weighting: Option<f64>,
    pub orientation: Orientation,
}

/// Moments and elliptic correctors of one field, cached for repeated
/// pairings.
#[derive(Clone, Debug)]
pub struct Prepared {
    values: Array2<f64>,
    moments: Vec<CellMoments>,
    grad_u: Vec<[f64; 3]>,
    sym_grad_u: Vec<[f64; 9]>,
    grad_un: Vec<[f64; 3]>,
}

impl Prepared {
    pub fn moments(&self) -> &[CellMoments] {
        &self.moments
    }
}

impl HypoForm {
    pub const DEFAULT_ETA: f64 = 0.01;

    /// Ladder `eta_1 = eta`, `eta_2 = eta^{3/2}`, `eta_3 = eta^{7/4}`.
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(KineticError::param("eta", "must lie in [0, 1)"));
        }
        Ok(HypoForm {
            eta,
            eta1: eta,
            eta2: eta.powf(1.5),
            eta3: eta.powf(1.75),
            epsilon_weighting: None,
            orientation: Orientation::Dissipative,
        })
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon_weighting = Some(eps);
        self
    }

    pub fn with_orientation(mut self, o: Orientation) -> Self {
        self.orientation = o;
        self
    }

    /// Same form with another base parameter.
    pub fn rescaled(&self, eta: f64) -> Result<Self> {
        let mut f = HypoForm::new(eta)?;
        f.epsilon_weighting = self.epsilon_weighting;
        f.orientation = self.orientation;
        Ok(f)
    }

    fn factor(&self) -> f64 {
        let s = match self.orientation {
            Orientation::Dissipative => 1.0,
            Orientation::Literal => -1.0,
        };
        s * self.epsilon_weighting.unwrap_or(1.0)
    }

    /// Computes moments and the three elliptic correctors of `g`.
    pub fn prepare(&self, bx: &AuditBox, g: &Array2<f64>) -> Result<Prepared> {
        check_len(bx.n_cells(), g.nrows())?;
        check_len(bx.grid.len(), g.ncols())?;
        let moments: Vec<CellMoments> = g.rows().into_iter().map(|r| cell_moments(&bx.grid, &r.to_vec())).collect();
        let nc = bx.n_cells();
        let mut out = Prepared {
            values: g.clone(),
            moments,
            grad_u: vec![[0.0; 3]; nc],
            sym_grad_u: vec![[0.0; 9]; nc],
            grad_un: vec![[0.0; 3]; nc],
        };
        if self.eta == 0.0 {
            return Ok(out);
        }
        let iota = bx.wall.iota;
        let energy: Vec<f64> = out.moments.iter().map(|m| m.energy).collect();
        let u = solve_poisson_2d(&bx.mesh, &energy, PoissonBc::Robin(iota), None)?;
        for (d, s) in out.grad_u.iter_mut().zip(&u.gradient) {
            d.copy_from_slice(&s[..3]);
        }
        let mu: Vec<[f64; 3]> = out.moments.iter().map(|m| m.mu).collect();
        let (lame, _) = solve_lame(&bx.mesh, &mu, iota, None)?;
        for (d, s) in out.sym_grad_u.iter_mut().zip(&lame.gradient) {
            d.copy_from_slice(&s[..9]);
        }
        let mut rho: Vec<f64> = out.moments.iter().map(|m| m.rho).collect();
        let total: f64 = rho.iter().zip(&bx.areas).map(|(r, a)| r * a).sum();
        // relative to the L^1 size of the whole field, not of its density
        let w = bx.grid.weights();
        let scale: f64 = g
            .rows()
            .into_iter()
            .zip(&bx.areas)
            .map(|(r, a)| a * r.iter().zip(w).map(|(x, wk)| wk * x.abs()).sum::<f64>())
            .sum();
        if total.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(KineticError::param(
                "rho",
                format!("density has nonzero mean {total:.3e}; the Neumann corrector needs zero mass"),
            ));
        }
        let area: f64 = bx.areas.iter().sum();
        rho.iter_mut().for_each(|r| *r -= total / area);
        let un = solve_poisson_2d(&bx.mesh, &rho, PoissonBc::Neumann, None)?;
        for (d, s) in out.grad_un.iter_mut().zip(&un.gradient) {
            d.copy_from_slice(&s[..3]);
        }
        Ok(out)
    }

    /// Individual contributions `[H, energy, momentum, mass]`, each already
    /// multiplied by its weight.
    pub fn terms(&self, bx: &AuditBox, a: &Prepared, b: &Prepared) -> [f64; 4] {
        let h = h_inner(&bx.grid, &bx.areas, &a.values, &b.values);
        if self.eta == 0.0 {
            return [h, 0.0, 0.0, 0.0];
        }
        let f = self.factor();
        let mut e = 0.0;
        let mut m = 0.0;
        let mut r = 0.0;
        for c in 0..bx.n_cells() {
            let w = bx.areas[c];
            let (ma, mb) = (&a.moments[c], &b.moments[c]);
            e += w * (dot3(a.grad_u[c], mb.mp) + dot3(b.grad_u[c], ma.mp));
            let mut q = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    q += a.sym_grad_u[c][3 * i + j] * mb.mq[i][j] + b.sym_grad_u[c][3 * i + j] * ma.mq[i][j];
                }
            }
            m += w * q;
            r += w * (dot3(a.grad_un[c], mb.mu) + dot3(b.grad_un[c], ma.mu));
        }
        [h, f * self.eta1 * e, f * self.eta2 * m, f * self.eta3 * r]
    }

    pub fn inner_prepared(&self, bx: &AuditBox, a: &Prepared, b: &Prepared) -> f64 {
        self.terms(bx, a, b).iter().sum()
    }
}

fn h_inner(grid: &VelocityGrid, areas: &[f64], a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let w = grid.weights();
    let m = grid.maxwellian();
    let mut s = 0.0;
    for (c, area) in areas.iter().enumerate() {
        let mut cell = 0.0;
        for k in 0..w.len() {
            cell += w[k] * a[[c, k]] * b[[c, k]] / m[k];
        }
        s += area * cell;
    }
    s
}

/// `<<g, h>>` for two fields on the box.
pub fn hypo_inner(form: &HypoForm, bx: &AuditBox, g: &DistributionField, h: &DistributionField) -> Result<f64> {
    let a = form.prepare(bx, g.values())?;
    let b = form.prepare(bx, h.values())?;
    Ok(form.inner_prepared(bx, &a, &b))
}

/// `|||g|||`.
pub fn hypo_norm(form: &HypoForm, bx: &AuditBox, g: &DistributionField) -> Result<f64> {
    let a = form.prepare(bx, g.values())?;
    let s = form.inner_prepared(bx, &a, &a);
    if !(s > 0.0) {
        return Err(KineticError::Singular(format!("hypocoercive square norm {s:.3e} is not positive")));
    }
    Ok(s.sqrt())
}

/// Range of `|||g||| / ||g||_H` over a sample set.
#[derive(Clone, Debug, Serialize)]
pub struct Equivalence {
    pub c_low: f64,
    pub c_high: f64,
    pub ratios: Vec<f64>,
}

pub const MIN_EQUIVALENCE_SAMPLES: usize = 20;

pub fn check_equivalence(form: &HypoForm, bx: &AuditBox, samples: &[DistributionField]) -> Result<Equivalence> {
    if samples.len() < MIN_EQUIVALENCE_SAMPLES {
        return Err(KineticError::param(
            "samples",
            format!("need at least {MIN_EQUIVALENCE_SAMPLES}, got {}", samples.len()),
        ));
    }
    let mut ratios = Vec::with_capacity(samples.len());
    for s in samples {
        let nh = s.norm_h();
        if !(nh > 0.0) {
            return Err(KineticError::Singular("sample with zero H norm".into()));
        }
        ratios.push(hypo_norm(form, bx, s)? / nh);
    }
    Ok(Equivalence {
        c_low: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        c_high: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
    })
}

/// Halves `eta` from the starting form until the equivalence ratios lie
/// in `[1/2, 3/2]`.
pub fn select_eta(form: &HypoForm, bx: &AuditBox, samples: &[DistributionField]) -> Result<(HypoForm, Equivalence)> {
    let mut f = form.clone();
    for _ in 0..40 {
        // a non-positive square norm means eta is far too large
        match check_equivalence(&f, bx, samples) {
            Ok(eq) if eq.c_low >= 0.5 && eq.c_high <= 1.5 => return Ok((f, eq)),
            Ok(_) | Err(KineticError::Singular(_)) => f = f.rescaled(0.5 * f.eta)?,
            Err(e) => return Err(e),
        }
    }
    Err(KineticError::Solver("no eta in the bisection range gives equivalent norms".into()))
}

/// Per-term breakdown of `<<-L g, g>>`.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DissipationComponents {
    /// `<-C g, g>_H`.
    pub micro: f64,
    /// `<v . grad g, g>_H`, boundary and upwind dissipation.
    pub transport: f64,
    pub energy: f64,
    pub momentum: f64,
    pub mass: f64,
    /// `1/4 sum |face| iota (2 - iota) ||D_1^perp gamma_+ g||^2`.
    pub boundary: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DissipationReport {
    pub rayleigh: f64,
    /// `theta_0 sum |face| iota (gamma_+ g)~^2`.
    pub boundary_defect: f64,
    pub hypo_norm_sq: f64,
    pub components: DissipationComponents,
    pub trace_mismatch: f64,
}

impl DissipationReport {
    fn check(self) -> Result<Self> {
        let c = &self.components;
        let all = [
            self.rayleigh,
            self.boundary_defect,
            self.hypo_norm_sq,
            c.micro,
            c.transport,
            c.energy,
            c.momentum,
            c.mass,
            c.boundary,
        ];
        if all.iter().all(|x| x.is_finite()) {
            Ok(self)
        } else {
            Err(KineticError::NonFinite("dissipation report".into()))
        }
    }
}

/// Tolerance on the flux balance of audit traces.
pub const TRACE_TOL: f64 = 1e-10;

/// `<<-L g, g>> / |||g|||^2` with `L = -v . grad + C` discretised by the
/// upwind stencil and Maxwell traces. `c_g` may carry a precomputed `C g`.
pub fn dissipation_audit(
    form: &HypoForm,
    bx: &AuditBox,
    op: &LinearizedOperator,
    g: &DistributionField,
    c_g: Option<&Array2<f64>>,
) -> Result<DissipationReport> {
    let gv = g.values();
    let traces = bx.traces(gv)?;
    let mismatch = bx.trace_flux_mismatch(&traces);
    if mismatch > TRACE_TOL {
        return Err(KineticError::Solver(format!("trace flux mismatch {mismatch:.3e}")));
    }
    let owned;
    let cg = match c_g {
        Some(c) => c,
        None => {
            owned = op.apply_c_rows(gv)?;
            &owned
        }
    };
    let tg = bx.transport(gv, &traces)?;
    let minus_l = -(&tg + cg);
    let pg = form.prepare(bx, gv)?;
    let pm = form.prepare(bx, &minus_l)?;
    let t = form.terms(bx, &pm, &pg);
    let norm_sq = form.inner_prepared(bx, &pg, &pg);
    if !(norm_sq > 0.0) {
        return Err(KineticError::Singular("sample with non-positive hypocoercive norm".into()));
    }
    let micro = -h_inner(&bx.grid, &bx.areas, cg, gv);
    let transport = -h_inner(&bx.grid, &bx.areas, &tg, gv);
    let theta0 = bx.wall.amplitude() * bx.wall.theta0;
    DissipationReport {
        rayleigh: t.iter().sum::<f64>() / norm_sq,
        boundary_defect: theta0 * bx.flux_functional(&traces),
        hypo_norm_sq: norm_sq,
        components: DissipationComponents {
            micro,
            transport,
            energy: t[1],
            momentum: t[2],
            mass: t[3],
            boundary: 0.25 * bx.d1_perp_functional(&traces)?,
        },
        trace_mismatch: mismatch,
    }
    .check()
}

/// Low-order cosine modes on the box, with mode numbers `(p, q)`.
pub fn cosine_mode(bx: &AuditBox, p: usize, q: usize) -> Vec<f64> {
    bx.centers()
        .iter()
        .map(|c| {
            let a = (p as f64 * PI * (c[0] + bx.lx) / (2.0 * bx.lx)).cos();
            let b = (q as f64 * PI * (c[1] + bx.ly) / (2.0 * bx.ly)).cos();
            a * b
        })
        .collect()
}

/// Zero-mass samples cycling through macroscopic, microscopic and mixed
/// velocity profiles on smooth spatial modes.
pub fn structured_samples<R: Rng + ?Sized>(
    bx: &AuditBox,
    proj: &MacroProjector,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(SampleKind, DistributionField)>> {
    let kinds = [SampleKind::Macro, SampleKind::Micro, SampleKind::Mixed];
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let kind = kinds[s % 3];
        let modes: Vec<Vec<f64>> = (0..2)
            .map(|k| {
                let p = (s / 3 + k) % 3;
                let q = (s / 6 + 2 * k) % 3;
                cosine_mode(bx, p, q)
            })
            .collect();
        let mut f = random_field(&bx.grid, proj, &bx.areas, &modes, kind, rng)?;
        remove_mass(&mut f);
        let n = f.norm_h();
        if n > 0.0 {
            f.scale(1.0 / n);
        }
        out.push((kind, f));
    }
    Ok(out)
}

/// Audit settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct AuditSettings {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub samples: usize,
    pub eta: f64,
    /// Non-isothermal amplitudes; the largest first, then its halves.
    pub theta0: Vec<f64>,
    pub seed: u64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            lx: 1.0,
            ly: 1.0,
            nx: 8,
            ny: 8,
            samples: 30,
            eta: HypoForm::DEFAULT_ETA,
            theta0: vec![0.1, 0.05],
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditRow {
    pub sample: usize,
    pub kind: SampleKind,
    pub ratio: f64,
    pub rayleigh_isothermal: f64,
    pub components: DissipationComponents,
    /// Rayleigh quotient for each non-isothermal amplitude.
    pub rayleigh: Vec<f64>,
    /// `theta_0 ||iota^{1/2} (gamma_+ g)~||^2 / |||g|||^2` for each amplitude.
    pub defect: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub eta: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub kappa_hat: f64,
    pub theta0: Vec<f64>,
    pub kappa_prime_hat: Vec<f64>,
    /// `Rayleigh >= kappa_hat - kappa' defect` for every sample and
    /// amplitude, with the defect of [`AuditRow::defect`].
    pub bound_holds: bool,
    pub rows: Vec<AuditRow>,
    pub warnings: Vec<String>,
}

impl AuditReport {
    /// Largest relative spread of the fitted `kappa'` across amplitudes.
    pub fn kappa_prime_spread(&self) -> f64 {
        let k = &self.kappa_prime_hat;
        let hi = k.iter().copied().fold(0.0, f64::max);
        let lo = k.iter().copied().fold(f64::INFINITY, f64::min);
        if hi == 0.0 {
            0.0
        } else {
            (hi - lo) / hi
        }
    }
}

/// Two-temperature wall of the direct form `Theta = 1 -/+ theta0` on the
/// bases with specular lateral faces.
pub fn audit_wall(theta0: f64) -> Result<WallModel> {
    WallModel::direct(
        theta0,
        crate::boundary::ThetaProfile::Bases {
            left: -theta0,
            right: theta0,
        },
        crate::boundary::IotaProfile::Bases,
    )
}

/// Full audit: selects `eta`, measures the isothermal Rayleigh floor and
/// fits `kappa'` for each non-isothermal amplitude.
pub fn run_audit<R: Rng + ?Sized>(op: &LinearizedOperator, settings: &AuditSettings, rng: &mut R) -> Result<AuditReport> {
    let grid = op.grid().clone();
    let iso = AuditBox::new(grid.clone(), &audit_wall(0.0)?, settings.lx, settings.ly, settings.nx, settings.ny)?;
    let samples = structured_samples(&iso, op.projector(), settings.samples, rng)?;
    let fields: Vec<DistributionField> = samples.iter().map(|(_, f)| f.clone()).collect();
    let (form, eq) = select_eta(&HypoForm::new(settings.eta)?, &iso, &fields)?;
    let mut warnings = Vec::new();
    let boxes: Vec<AuditBox> = settings
        .theta0
        .iter()
        .map(|t| iso.with_wall(&audit_wall(*t)?))
        .collect::<Result<_>>()?;
    for t in &settings.theta0 {
        for temp in [1.0 - t, 1.0 + t] {
            let a = poly_p_analytic(temp);
            let q = poly_p_quadrature(temp, 48)?;
            if (a - q).abs() > 0.05 * a.abs() {
                warnings.push(format!("P({temp}) analytic {a:.4e} vs quadrature {q:.4e}"));
            }
        }
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (s, (kind, f)) in samples.iter().enumerate() {
        let cg = op.apply_c_rows(f.values())?;
        let base = dissipation_audit(&form, &iso, op, f, Some(&cg))?;
        let mut rayleigh = Vec::new();
        let mut defect = Vec::new();
        for bx in &boxes {
            let r = dissipation_audit(&form, bx, op, f, Some(&cg))?;
            rayleigh.push(r.rayleigh);
            defect.push(r.boundary_defect / r.hypo_norm_sq);
        }
        rows.push(AuditRow {
            sample: s,
            kind: *kind,
            ratio: eq.ratios[s],
            rayleigh_isothermal: base.rayleigh,
            components: base.components,
            rayleigh,
            defect,
        });
    }
    let kappa_hat = rows.iter().map(|r| r.rayleigh_isothermal).fold(f64::INFINITY, f64::min);
    let mut kappa_prime_hat = Vec::new();
    let mut bound_holds = true;
    // defect already carries one factor theta_0, as in the bound
    // <<-L g, g>> >= kappa |||g|||^2 - kappa' theta_0 ||iota^{1/2} (gamma_+ g)~||^2
    for k in 0..settings.theta0.len() {
        let mut kp = 0.0f64;
        for r in &rows {
            let loss = r.rayleigh_isothermal - r.rayleigh[k];
            if loss > 0.0 && r.defect[k] > 1e-14 {
                kp = kp.max(loss / r.defect[k]);
            }
        }
        for r in &rows {
            if r.rayleigh[k] < kappa_hat - kp * r.defect[k] - 1e-12 {
                bound_holds = false;
            }
        }
        kappa_prime_hat.push(kp);
    }
    Ok(AuditReport {
        eta: form.eta,
        c_low: eq.c_low,
        c_high: eq.c_high,
        kappa_hat,
        theta0: settings.theta0.clone(),
        kappa_prime_hat,
        bound_holds,
        rows,
        warnings,
    })
}

/// `sqrt(2 pi) (1 / (T^2 (2 - T)^2) - 1)`.
pub fn poly_p_analytic(t: f64) -> f64 {
    (2.0 * PI).sqrt() * (1.0 / (t * t * (2.0 - t) * (2.0 - t)) - 1.0)
}

/// Gauss-Legendre quadrature of `int (M_T^2 - M_1^2) M^{-1} (n . v)_+ dv`
/// on `[0, 12] x [-12, 12]^2` with `n` points per axis.
pub fn poly_p_quadrature(t: f64, n: usize) -> Result<f64> {
    let (x, w) = gauss_legendre(n);
    let r = 12.0;
    let half: Vec<(f64, f64)> = x.iter().zip(&w).map(|(a, b)| (0.5 * r * (a + 1.0), 0.5 * r * b)).collect();
    let full: Vec<(f64, f64)> = x.iter().zip(&w).map(|(a, b)| (r * a, r * b)).collect();
    let mut s = 0.0;
    for (a, wa) in &half {
        for (b, wb) in &full {
            for (c, wc) in &full {
                let v = [*a, *b, *c];
                let p = wall_maxwellian_analytic(t, v)?;
                let q = wall_maxwellian_analytic(1.0, v)?;
                s += wa * wb * wc * (p * p - q * q) / maxwellian(1.0, v)? * a;
            }
        }
    }
    Ok(s)
}

/// `C^2` cutoff with `1_[0,1] <= chi <= 1_[0,2]`.
pub fn chi(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// `mu_A^2 = M_T^{-1} chi_A + M^{-1} (1 - chi_A)`.
pub fn mu_a_sq(theta: f64, a: f64, v: [f64; 3]) -> Result<f64> {
    let c = chi(dot3(v, v).sqrt() / a);
    Ok(c / maxwellian(theta, v)? + (1.0 - c) / maxwellian(1.0, v)?)
}

/// Boundary functionals `(I_{A,1}, I_{A,2})` at wall temperature `theta`
/// and outward normal `n`.
///
/// `I_{A,2}` is the Cauchy-Schwarz constant of the outgoing half space,
/// `(int_{n.v>0} <v>^2 mu_A^{-2})^{-1}`; its large-`A` limit is
/// `2 / (1 + 3 theta)`.
pub fn boundary_functionals_at(grid: &VelocityGrid, theta: f64, a: f64, n: [f64; 3]) -> Result<(f64, f64)> {
    if !(a > 1.0) {
        return Err(KineticError::param("A", "must exceed 1"));
    }
    // the discrete wall Maxwellian keeps the large-A limit of I_{A,1} at 0
    let wm = wall_maxwellian(grid, theta, n)?;
    let mut inv_flux = 0.0;
    let mut gain = 0.0;
    let mut moment = 0.0;
    for ((v, w), mw) in grid.nodes().iter().zip(grid.weights()).zip(&wm) {
        let c = dot3(n, *v);
        if c <= 0.0 {
            continue;
        }
        let m2 = mu_a_sq(theta, a, *v)?;
        inv_flux += w * c / m2;
        gain += w * mw * mw * m2 * c;
        let b = bracket(*v);
        moment += w * b * b / m2;
    }
    Ok((1.0 / inv_flux - gain, 1.0 / moment))
}

/// [`boundary_functionals_at`] at a boundary point of a domain.
pub fn boundary_functionals(grid: &VelocityGrid, wall: &WallModel, dom: &Domain, a: f64, x: [f64; 3]) -> Result<(f64, f64)> {
    let theta = crate::boundary::wall_temperature(wall, dom, x)?;
    boundary_functionals_at(grid, theta, a, dom.normal(x)?)
}

/// Smallest `c_A` with `c_A^{-1} M^{-1/2} <= mu_A <= c_A M^{-1/2}` on the
/// grid nodes.
pub fn sandwich_constant(grid: &VelocityGrid, theta: f64, a: f64) -> Result<f64> {
    let mut c = 1.0f64;
    for (v, m) in grid.nodes().iter().zip(grid.maxwellian()) {
        let r = (mu_a_sq(theta, a, *v)? * m).sqrt();
        c = c.max(r).max(1.0 / r);
    }
    Ok(c)
}

/// Smallest integer `A` in `2..=8` with `I_{A,1} + I_{A,2} >= 0` for every
/// `(theta, n)` pair.
pub fn select_a(grid: &VelocityGrid, points: &[(f64, [f64; 3])]) -> Result<Option<f64>> {
    for a in 2..=8 {
        let a = a as f64;
        let mut ok = true;
        for (t, n) in points {
            let (i1, i2) = boundary_functionals_at(grid, *t, a, *n)?;
            if i1 + i2 < 0.0 {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// The `n_1`-weighted lateral integral of a specular trace,
/// `int (gamma g)^2 (n_1 . v)(n . v) <v>^{-2} M^{-1} dv`, together with the
/// same integral of absolute values.
///
/// The quadrature is a product rule in the local frame `(n, e_1, n x e_1)`,
/// in which the mirror map is an exact permutation of nodes.
pub fn lateral_cancellation<F: Fn([f64; 3]) -> f64>(
    dom: &Domain,
    x: [f64; 3],
    n_per_axis: usize,
    v_max: f64,
    outgoing: F,
) -> Result<(f64, f64)> {
    let n = dom.normal(x)?;
    let n1 = dom.auxiliary_n1(x)?;
    let e = [1.0, 0.0, 0.0];
    if dot3(n, e).abs() > 1e-12 {
        return Err(KineticError::Geometry("point is not on the lateral wall".into()));
    }
    let t = [n[1] * e[2] - n[2] * e[1], n[2] * e[0] - n[0] * e[2], n[0] * e[1] - n[1] * e[0]];
    let axis = VelocityGrid::new(n_per_axis, v_max)?;
    let (nodes, wts) = (axis.axis(), axis.axis_weights());
    let at = |a: f64, b: f64, c: f64| [a * n[0] + b * e[0] + c * t[0], a * n[1] + b * e[1] + c * t[1], a * n[2] + b * e[2] + c * t[2]];
    let mut sum = 0.0;
    let mut abs = 0.0;
    for (ia, a) in nodes.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (ib, b) in nodes.iter().enumerate() {
            for (ic, c) in nodes.iter().enumerate() {
                let v = at(*a, *b, *c);
                // incoming nodes take the value at their mirror image
                let g = if *a > 0.0 { outgoing(v) } else { outgoing(at(-a, *b, *c)) };
                let br = bracket(v);
                let val = wts[ia] * wts[ib] * wts[ic] * g * g * dot3(n1, v) * dot3(n, v) / (br * br * maxwellian(1.0, v)?);
                sum += val;
                abs += val.abs();
            }
        }
    }
    Ok((sum, abs))
}

/// `max |n . n_1|` over a ring of lateral points.
pub fn n1_orthogonality(dom: &Domain, r: f64, x1_values: &[f64], n_angles: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for x1 in x1_values {
        for k in 0..n_angles {
            let phi = 2.0 * PI * k as f64 / n_angles as f64;
            let x = [*x1, r * phi.cos(), r * phi.sin()];
            worst = worst.max(dot3(dom.normal(x)?, dom.auxiliary_n1(x)?).abs());
        }
    }
    Ok(worst)
}
