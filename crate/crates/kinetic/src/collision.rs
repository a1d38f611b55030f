//! Hard-sphere collision operators on the velocity lattice.
//!
//! Everything here acts on velocity-indexed values `f_i = f(v_i)`. The
//! linearized operator is assembled in the symmetric "hat" coordinates
//! `x_i = sqrt(w_i / M_i) f_i`, in which the `L^2(M^{-1/2})` product is the
//! plain Euclidean one and `K` becomes a symmetric matrix.
//!
//! The nonlinear operator uses the Carleman split of the gain term: for a
//! fixed unit vector `sigma` the pair `(v', v'_*)` parametrises a line and a
//! plane through `v`, so the gain factorises into a line integral of one
//! argument times a plane (Radon) integral of the other.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::error::{check_len, KineticError, Result};
use crate::numerics::{compensated_sum, compensated_sum_by, dot3, gauss_legendre, norm3, sub3};
use crate::velocity_space::{bracket, linf_omega_velocity, VelocityGrid, WeightSpec};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Product quadrature on the unit sphere: Gauss-Legendre in `cos(theta)`
/// times a uniform azimuthal rule.
#[derive(Clone, Debug)]
pub struct AngularRule {
    n_polar: usize,
    n_azimuth: usize,
    directions: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl AngularRule {
    pub fn product(n_polar: usize, n_azimuth: usize) -> Result<Self> {
        if n_polar < 2 || n_polar % 2 != 0 {
            return Err(KineticError::param("n_polar", "must be even and at least 2"));
        }
        if n_azimuth < 1 {
            return Err(KineticError::param("n_azimuth", "must be positive"));
        }
        let (mu, wmu) = gauss_legendre(n_polar);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut directions = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (c, wc) in mu.iter().zip(&wmu) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = (k as f64 + 0.5) * dphi;
                directions.push([s * phi.cos(), s * phi.sin(), *c]);
                weights.push(wc * dphi);
            }
        }
        Ok(AngularRule {
            n_polar,
            n_azimuth,
            directions,
            weights,
        })
    }

    pub fn n_polar(&self) -> usize {
        self.n_polar
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_azimuth
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Upper hemisphere with doubled weights. Integrands that are even in
    /// `sigma` only need these.
    pub fn upper_half(&self) -> Vec<([f64; 3], f64)> {
        self.directions
            .iter()
            .zip(&self.weights)
            .filter(|(d, _)| d[2] > 0.0)
            .map(|(d, w)| (*d, 2.0 * w))
            .collect()
    }
}

impl Default for AngularRule {
    fn default() -> Self {
        AngularRule::product(8, 16).expect("default angular rule")
    }
}

/// `nu(v) = 2 pi sum_j w_j |v - v_j| M(v_j)` at an arbitrary velocity.
pub fn collision_frequency_at(grid: &VelocityGrid, v: [f64; 3]) -> f64 {
    let nodes = grid.nodes();
    let w = grid.weights();
    let m = grid.maxwellian();
    2.0 * PI * compensated_sum_by(nodes.len(), |j| w[j] * norm3(sub3(v, nodes[j])) * m[j])
}

/// Collision frequency at every node, by direct quadrature against the
/// same lattice measure the kernel uses.
pub fn collision_frequency(grid: &VelocityGrid) -> Vec<f64> {
    grid.nodes()
        .iter()
        .map(|v| collision_frequency_at(grid, *v))
        .collect()
}

/// Tightest `(nu_0, nu_1)` with `nu_0 <v> <= nu <= nu_1 <v>` on the nodes.
pub fn nu_bounds(grid: &VelocityGrid, nu: &[f64]) -> (f64, f64) {
    grid.nodes()
        .iter()
        .zip(nu)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (v, n)| {
            let r = n / bracket(*v);
            (lo.min(r), hi.max(r))
        })
}

fn check_distinct(v: [f64; 3], v_star: [f64; 3]) -> Result<f64> {
    let r = norm3(sub3(v, v_star));
    if r == 0.0 || !r.is_finite() {
        return Err(KineticError::Singular(
            "the kernel has a pole at v = v_star".into(),
        ));
    }
    Ok(r)
}

/// The two-term kernel with the prefactors `sqrt(2/pi)` and `1/2`, written
/// out literally.
pub fn kernel_k(v: [f64; 3], v_star: [f64; 3]) -> Result<f64> {
    let r = check_distinct(v, v_star)?;
    let a = dot3(v, v);
    let b = dot3(v_star, v_star);
    let e = -(b - a) * (b - a) / (8.0 * r * r) - r * r / 8.0 - a / 4.0 + b / 4.0;
    Ok((2.0 / PI).sqrt() / r * e.exp() - 0.5 * r * (-a / 2.0).exp())
}

/// The same kernel shape with the prefactors `4 / sqrt(2 pi)` and
/// `1 / sqrt(2 pi)` that make `K M = nu M` hold for the hard-sphere rate
/// `|(v - v_*) . sigma|` with the normalised Gaussian.
pub fn kernel_k_consistent(v: [f64; 3], v_star: [f64; 3]) -> Result<f64> {
    let r = check_distinct(v, v_star)?;
    let a = dot3(v, v);
    let b = dot3(v_star, v_star);
    let e = -(b - a) * (b - a) / (8.0 * r * r) - r * r / 8.0 - a / 4.0 + b / 4.0;
    Ok(FRAC_1_SQRT_2PI * (4.0 / r * e.exp() - r * (-a / 2.0).exp()))
}

/// Symmetrised kernel `M(v)^{-1/2} k(v, w) M(w)^{1/2}` in a form that
/// avoids large intermediate exponentials.
fn kernel_hat(v: [f64; 3], w: [f64; 3]) -> f64 {
    let u = sub3(v, w);
    let r2 = dot3(u, u);
    let r = r2.sqrt();
    let vu = dot3(v, u);
    let wu = dot3(w, u);
    let gain = 4.0 / r * (-(vu * vu + wu * wu) / (4.0 * r2)).exp();
    let loss = r * (-(dot3(v, v) + dot3(w, w)) / 4.0).exp();
    FRAC_1_SQRT_2PI * (gain - loss)
}

/// Integral of `4 (2 pi)^{-1/2} |u|^{-1} exp(-(v . u)^2 / (2 |u|^2))`, the
/// near-diagonal form of the symmetrised kernel, over the lattice cell
/// centred at each node (scaled down on faces and edges with the node
/// weight). In polar coordinates around the node the radial integral is
/// `rho(omega)^2 / 2`, with `rho` the distance to the cell boundary.
fn singular_cell_term(grid: &VelocityGrid) -> Vec<f64> {
    let rule = AngularRule::product(16, 32).expect("fixed rule");
    let h = grid.spacing();
    let rho2: Vec<f64> = rule
        .directions()
        .iter()
        .map(|d| {
            let r = 0.5 * h / d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            r * r
        })
        .collect();
    let h3 = h * h * h;
    grid.nodes()
        .iter()
        .zip(grid.weights())
        .map(|(v, w)| {
            let s = compensated_sum_by(rule.weights().len(), |k| {
                let c = dot3(rule.directions()[k], *v);
                rule.weights()[k] * (-0.5 * c * c).exp() * 0.5 * rho2[k]
            });
            4.0 * FRAC_1_SQRT_2PI * s * w / h3
        })
        .collect()
}

/// Orthogonal projection onto the discrete collision invariants
/// `{M, v M, (|v|^2 - 3) M / sqrt 6}`.
///
/// The basis is orthonormalised on the lattice (Gram-Schmidt, applied
/// twice) so that the projection is idempotent to round-off.
#[derive(Clone, Debug)]
pub struct MacroProjector {
    /// Rows are orthonormal basis vectors in hat coordinates.
    basis: Array2<f64>,
    /// `sqrt(w / M)`, maps values to hat coordinates.
    to_hat: Vec<f64>,
}

impl MacroProjector {
    pub fn new(grid: &VelocityGrid) -> Self {
        let n = grid.len();
        let w = grid.weights();
        let m = grid.maxwellian();
        let to_hat: Vec<f64> = (0..n).map(|i| (w[i] / m[i]).sqrt()).collect();
        let mut basis = Array2::zeros((5, n));
        for (i, v) in grid.nodes().iter().enumerate() {
            let r = (w[i] * m[i]).sqrt();
            basis[[0, i]] = r;
            basis[[1, i]] = r * v[0];
            basis[[2, i]] = r * v[1];
            basis[[3, i]] = r * v[2];
            basis[[4, i]] = r * (dot3(*v, *v) - 3.0) / 6f64.sqrt();
        }
        for _pass in 0..2 {
            for k in 0..5 {
                for l in 0..k {
                    let c = compensated_sum_by(n, |i| basis[[k, i]] * basis[[l, i]]);
                    for i in 0..n {
                        basis[[k, i]] -= c * basis[[l, i]];
                    }
                }
                let nk = compensated_sum_by(n, |i| basis[[k, i]] * basis[[k, i]]).sqrt();
                for i in 0..n {
                    basis[[k, i]] /= nk;
                }
            }
        }
        MacroProjector { basis, to_hat }
    }

    pub fn len(&self) -> usize {
        self.to_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_hat.is_empty()
    }

    pub fn basis_hat(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn to_hat(&self) -> &[f64] {
        &self.to_hat
    }

    /// Coordinates of `g` on the orthonormal invariant basis.
    pub fn coefficients(&self, g: &[f64]) -> [f64; 5] {
        let mut c = [0.0; 5];
        for (k, ck) in c.iter_mut().enumerate() {
            *ck = compensated_sum_by(g.len(), |i| self.basis[[k, i]] * self.to_hat[i] * g[i]);
        }
        c
    }

    pub fn project(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), g.len())?;
        let c = self.coefficients(g);
        Ok((0..g.len())
            .map(|i| (0..5).map(|k| c[k] * self.basis[[k, i]]).sum::<f64>() / self.to_hat[i])
            .collect())
    }

    /// `g - Pi g`.
    pub fn perp(&self, g: &[f64]) -> Result<Vec<f64>> {
        let p = self.project(g)?;
        Ok(g.iter().zip(&p).map(|(a, b)| a - b).collect())
    }

    /// Projection of every row of a (cells x nodes) block.
    pub fn project_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let hat = x * &Array1::from(self.to_hat.clone());
        let coeff = hat.dot(&self.basis.t());
        let mut out = coeff.dot(&self.basis);
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (o, s) in row.iter_mut().zip(&self.to_hat) {
                *o /= s;
            }
        }
        out
    }

    /// Removes the invariant components of every row in place.
    pub fn perp_rows_inplace(&self, x: &mut Array2<f64>) {
        let p = self.project_rows(x);
        *x -= &p;
    }

    /// Hat-coordinate projection complement, in place, on one vector.
    fn perp_hat_inplace(&self, x: &mut [f64]) {
        for k in 0..5 {
            let c = compensated_sum_by(x.len(), |i| self.basis[[k, i]] * x[i]);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi -= c * self.basis[[k, i]];
            }
        }
    }

    fn perp_hat_rows_inplace(&self, x: &mut Array2<f64>) {
        let coeff = x.dot(&self.basis.t());
        *x -= &coeff.dot(&self.basis);
    }
}

/// `Pi g` for a single velocity vector.
pub fn project_pi(grid: &VelocityGrid, g: &[f64]) -> Result<Vec<f64>> {
    MacroProjector::new(grid).project(g)
}

/// Macroscopic moments of a velocity vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MacroMoments {
    pub rho: f64,
    pub mu: [f64; 3],
    pub energy: f64,
    pub mp: [f64; 3],
    pub mq: [[f64; 3]; 3],
}

impl MacroMoments {
    pub fn is_finite(&self) -> bool {
        let mut all = vec![self.rho, self.energy];
        all.extend(self.mu);
        all.extend(self.mp);
        all.extend(self.mq.iter().flatten());
        all.iter().all(|x| x.is_finite())
    }
}

/// Mass, momentum, energy and the two higher moment functionals with
/// `p_i = v_i (|v|^2 - 5) / sqrt 6` and `q_ij = v_i v_j - delta_ij`.
pub fn moments_of(grid: &VelocityGrid, g: &[f64]) -> Result<MacroMoments> {
    check_len(grid.len(), g.len())?;
    let nodes = grid.nodes();
    let w = grid.weights();
    let s6 = 6f64.sqrt();
    let q = |f: &dyn Fn([f64; 3]) -> f64| compensated_sum_by(g.len(), |i| w[i] * f(nodes[i]) * g[i]);
    let mut out = MacroMoments {
        rho: q(&|_| 1.0),
        energy: q(&|v| (dot3(v, v) - 3.0) / s6),
        ..Default::default()
    };
    for a in 0..3 {
        out.mu[a] = q(&|v| v[a]);
        out.mp[a] = q(&|v| v[a] * (dot3(v, v) - 5.0) / s6);
        for b in 0..3 {
            let d = if a == b { 1.0 } else { 0.0 };
            out.mq[a][b] = q(&|v| v[a] * v[b] - d);
        }
    }
    Ok(out)
}

/// Per-cell moments of a spatially resolved field given as a
/// (cells x nodes) block.
pub fn moments(grid: &VelocityGrid, g: &Array2<f64>) -> Result<Vec<MacroMoments>> {
    check_len(grid.len(), g.ncols())?;
    g.axis_iter(Axis(0))
        .map(|row| moments_of(grid, row.as_slice().expect("standard layout")))
        .collect()
}

/// The linearized collision operator `C = K - nu` on one velocity
/// lattice, held as a dense symmetric matrix in hat coordinates.
///
/// Two lattice corrections turn the raw quadrature into an operator with
/// the exact discrete structure:
///
/// * the omitted diagonal of the kernel sum is replaced by a self term
///   `c_i`, the integral of the leading `|u|^{-1}` singularity of the
///   kernel over the lattice cell of node `i`;
/// * the result is sandwiched between complements of the invariant
///   projection, which keeps it symmetric and makes every invariant a
///   null vector and every output moment-free.
pub struct LinearizedOperator {
    grid: Arc<VelocityGrid>,
    nu: Vec<f64>,
    self_term: Vec<f64>,
    kernel: Array2<f64>,
    projector: Arc<MacroProjector>,
}

impl LinearizedOperator {
    pub fn new(grid: Arc<VelocityGrid>) -> Self {
        let n = grid.len();
        let nodes = grid.nodes();
        let w = grid.weights();
        let nu = collision_frequency(&grid);
        let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        let mut kernel = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let s = sw[i] * sw[j] * kernel_hat(nodes[i], nodes[j]);
                kernel[[i, j]] = s;
                kernel[[j, i]] = s;
            }
        }
        let self_term = singular_cell_term(&grid);
        let projector = Arc::new(MacroProjector::new(&grid));
        LinearizedOperator {
            grid,
            nu,
            self_term,
            kernel,
            projector,
        }
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn nu_bounds(&self) -> (f64, f64) {
        nu_bounds(&self.grid, &self.nu)
    }

    /// The diagonal self term added to the kernel sum.
    pub fn self_term(&self) -> &[f64] {
        &self.self_term
    }

    pub fn projector(&self) -> &Arc<MacroProjector> {
        &self.projector
    }

    /// Quadrature kernel entry `k(v_i, v_j)` for `i != j`, in value
    /// coordinates (the `j`-th weight not included).
    pub fn kernel_entry(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(KineticError::Singular("diagonal kernel entry".into()));
        }
        let w = self.grid.weights();
        let m = self.grid.maxwellian();
        Ok(self.kernel[[i, j]] / (w[i] * w[j]).sqrt() * (m[i] / m[j]).sqrt())
    }

    fn hat(&self, g: &[f64]) -> Vec<f64> {
        g.iter().zip(self.projector.to_hat()).map(|(x, s)| x * s).collect()
    }

    fn unhat(&self, x: Vec<f64>) -> Vec<f64> {
        x.into_iter().zip(self.projector.to_hat()).map(|(x, s)| x / s).collect()
    }

    fn kernel_times(&self, x: &[f64]) -> Vec<f64> {
        let xv = ndarray::ArrayView1::from(x);
        self.kernel.dot(&xv).to_vec()
    }

    /// `(K g)_i = sum_{j != i} w_j k(v_i, v_j) g_j`, the raw quadrature.
    pub fn apply_k(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), g.len())?;
        let x = self.hat(g);
        Ok(self.unhat(self.kernel_times(&x)))
    }

    /// Corrected linearized operator.
    pub fn apply_c(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), g.len())?;
        let mut x = self.hat(g);
        self.projector.perp_hat_inplace(&mut x);
        let mut z = self.kernel_times(&x);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += (self.self_term[i] - self.nu[i]) * x[i];
        }
        self.projector.perp_hat_inplace(&mut z);
        Ok(self.unhat(z))
    }

    /// `C + nu` applied to every row of a (cells x nodes) block.
    pub fn apply_k_eff_rows(&self, f: &Array2<f64>) -> Result<Array2<f64>> {
        check_len(self.grid.len(), f.ncols())?;
        let s = Array1::from(self.projector.to_hat().to_vec());
        let xin = f * &s;
        let mut x = xin.clone();
        self.projector.perp_hat_rows_inplace(&mut x);
        // kernel is symmetric, so rows times kernel is kernel times columns
        let mut z = x.dot(&self.kernel);
        let shift = Array1::from(
            (0..self.nu.len())
                .map(|i| self.self_term[i] - self.nu[i])
                .collect::<Vec<_>>(),
        );
        z += &(&x * &shift);
        self.projector.perp_hat_rows_inplace(&mut z);
        z += &(&xin * &Array1::from(self.nu.clone()));
        Ok(z / &s)
    }

    /// Corrected `C` on every row of a block.
    pub fn apply_c_rows(&self, f: &Array2<f64>) -> Result<Array2<f64>> {
        let mut z = self.apply_k_eff_rows(f)?;
        let nu = Array1::from(self.nu.clone());
        z -= &(f * &nu);
        Ok(z)
    }

    /// Relative defect `|| (K - nu)(phi M) ||_H / || phi M ||_H` of the raw
    /// quadrature, diagonal omitted and no correction, for
    /// `phi` in `{1, v_1, v_2, v_3, |v|^2}`.
    pub fn raw_invariant_defects(&self) -> [f64; 5] {
        let n = self.grid.len();
        let w = self.grid.weights();
        let m = self.grid.maxwellian();
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            let x: Vec<f64> = self
                .grid
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let phi = match k {
                        0 => 1.0,
                        1..=3 => v[k - 1],
                        _ => dot3(*v, *v),
                    };
                    (w[i] * m[i]).sqrt() * phi
                })
                .collect();
            let kx = self.kernel_times(&x);
            let num = compensated_sum_by(n, |i| (kx[i] - self.nu[i] * x[i]).powi(2));
            let den = compensated_sum_by(n, |i| x[i] * x[i]);
            *o = (num / den).sqrt();
        }
        out
    }

    /// `||C M||_H` with all corrections applied.
    pub fn corrected_equilibrium_residual(&self) -> f64 {
        let m = self.grid.maxwellian().to_vec();
        let c = self.apply_c(&m).expect("sizes match");
        crate::velocity_space::inner_h_velocity(&self.grid, &c, &c).sqrt()
    }

    /// Writes `(i, j, k_ij)` rows for all off-diagonal pairs.
    pub fn write_kernel_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["i", "j", "k_ij"])?;
        let n = self.grid.len();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let k = self.kernel_entry(i, j)?;
                    wtr.write_record([i.to_string(), j.to_string(), format!("{k:.17e}")])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `(i, nu_i)` rows.
    pub fn write_nu_csv<W: Write>(&self, out: W) -> Result<()> {
        write_nu_table(&self.nu, out)
    }
}

pub fn write_nu_table<W: Write>(nu: &[f64], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["i", "nu_i"])?;
    for (i, n) in nu.iter().enumerate() {
        wtr.write_record([i.to_string(), format!("{n:.17e}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `K g` with the exact raw quadrature.
pub fn apply_k(op: &LinearizedOperator, g: &[f64]) -> Result<Vec<f64>> {
    op.apply_k(g)
}

/// Corrected `C g`.
pub fn apply_c(op: &LinearizedOperator, g: &[f64]) -> Result<Vec<f64>> {
    op.apply_c(g)
}

/// Dense `A_ij = w_j |v_i - v_j|`, the loss-term convolution.
fn loss_matrix(grid: &VelocityGrid) -> Array2<f64> {
    let n = grid.len();
    let nodes = grid.nodes();
    let w = grid.weights();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] = w[j] * norm3(sub3(nodes[i], nodes[j]));
        }
    }
    a
}

/// Precomputed projection of each node onto one direction, for the
/// plane-integral binning.
struct Projection {
    bin: Vec<usize>,
    frac: Vec<f64>,
}

/// Nonlinear hard-sphere operator `Q(G, H)` on a lattice.
pub struct CollisionQ {
    grid: Arc<VelocityGrid>,
    rule: AngularRule,
    half: Vec<([f64; 3], f64)>,
    loss: Array2<f64>,
    projector: Arc<MacroProjector>,
    projections: Vec<Projection>,
    bin_width: f64,
    n_bins: usize,
}

impl CollisionQ {
    pub fn new(grid: Arc<VelocityGrid>, rule: AngularRule, projector: Arc<MacroProjector>) -> Result<Self> {
        check_len(grid.len(), projector.len())?;
        let half = rule.upper_half();
        let h = grid.spacing();
        let dt = 0.5 * h;
        let reach = 3f64.sqrt() * grid.v_max();
        let t0 = -reach - h;
        let n_bins = ((2.0 * reach + 2.0 * h) / dt).ceil() as usize + 2;
        let projections = half
            .iter()
            .map(|(sigma, _)| {
                let mut bin = Vec::with_capacity(grid.len());
                let mut frac = Vec::with_capacity(grid.len());
                for v in grid.nodes() {
                    let p = (dot3(*v, *sigma) - t0) / dt;
                    let k = p.floor();
                    bin.push(k as usize);
                    frac.push(p - k);
                }
                Projection { bin, frac }
            })
            .collect();
        Ok(CollisionQ {
            loss: loss_matrix(&grid),
            grid,
            rule,
            half,
            projector,
            projections,
            bin_width: dt,
            n_bins,
        })
    }

    /// Builds the operator with its own invariant projector.
    pub fn with_rule(grid: Arc<VelocityGrid>, rule: AngularRule) -> Result<Self> {
        let p = Arc::new(MacroProjector::new(&grid));
        Self::new(grid, rule, p)
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn rule(&self) -> &AngularRule {
        &self.rule
    }

    /// `Q(G, H)` for one pair of velocity vectors, invariants removed.
    pub fn apply(&self, g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), g.len())?;
        check_len(self.grid.len(), h.len())?;
        let n = self.grid.len();
        let gr = Array2::from_shape_vec((1, n), g.to_vec()).expect("shape");
        let hr = Array2::from_shape_vec((1, n), h.to_vec()).expect("shape");
        Ok(self.apply_rows(&gr, &hr)?.row(0).to_vec())
    }

    /// `Q(G_c, H_c)` for every row `c` of two (cells x nodes) blocks.
    pub fn apply_rows(&self, g: &Array2<f64>, h: &Array2<f64>) -> Result<Array2<f64>> {
        let mut q = self.apply_rows_uncorrected(g, h)?;
        self.projector.perp_rows_inplace(&mut q);
        Ok(q)
    }

    /// Same as [`CollisionQ::apply_rows`] without removing the invariant
    /// defect, for reporting quadrature error.
    pub fn apply_rows_uncorrected(&self, g: &Array2<f64>, h: &Array2<f64>) -> Result<Array2<f64>> {
        let n = self.grid.len();
        check_len(n, g.ncols())?;
        check_len(n, h.ncols())?;
        check_len(g.nrows(), h.nrows())?;
        let c = g.nrows();
        let nf = 2 * c;
        // node-major stack: columns 0..c hold G, c..2c hold H
        let mut stack = vec![0.0; n * nf];
        for i in 0..n {
            for k in 0..c {
                stack[i * nf + k] = g[[k, i]];
                stack[i * nf + c + k] = h[[k, i]];
            }
        }
        let mut gain = vec![0.0; n * c];
        let mut line = vec![0.0; n * nf];
        let mut plane = vec![0.0; n * nf];
        let mut bins = vec![0.0; self.n_bins * nf];
        for (d, (sigma, ws)) in self.half.iter().enumerate() {
            self.line_integrals(*sigma, &stack, nf, &mut line);
            self.plane_integrals(d, &stack, nf, &mut bins, &mut plane);
            for i in 0..n {
                let row = i * nf;
                for k in 0..c {
                    let lg = line[row + k];
                    let lh = line[row + c + k];
                    let rg = plane[row + k];
                    let rh = plane[row + c + k];
                    gain[i * c + k] += ws * 0.5 * (lh * rg + lg * rh);
                }
            }
        }
        let ag = g.dot(&self.loss.t());
        let ah = h.dot(&self.loss.t());
        let mut out = Array2::zeros((c, n));
        for k in 0..c {
            for i in 0..n {
                out[[k, i]] = gain[i * c + k] - PI * (h[[k, i]] * ag[[k, i]] + g[[k, i]] * ah[[k, i]]);
            }
        }
        Ok(out)
    }

    /// `L_sigma F(v_i) = int |s| F(v_i - s sigma) ds` for every stacked field.
    fn line_integrals(&self, sigma: [f64; 3], stack: &[f64], nf: usize, out: &mut [f64]) {
        let grid = &*self.grid;
        let na = grid.n_per_axis();
        let h = grid.spacing();
        let vmax = grid.v_max();
        let top = (na - 1) as f64;
        let (sx, sy, sz) = (na * na, na, 1usize);
        let mut acc = vec![0.0; nf];
        for (i, v) in grid.nodes().iter().enumerate() {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for a in 0..3 {
                if sigma[a].abs() > 1e-14 {
                    let t1 = (v[a] - vmax) / sigma[a];
                    let t2 = (v[a] + vmax) / sigma[a];
                    lo = lo.max(t1.min(t2));
                    hi = hi.min(t1.max(t2));
                }
            }
            acc.iter_mut().for_each(|x| *x = 0.0);
            let m_lo = (lo / h).ceil() as i64;
            let m_hi = (hi / h).floor() as i64;
            for m in m_lo..=m_hi {
                if m == 0 {
                    continue;
                }
                let s = m as f64 * h;
                let wline = s.abs() * h;
                let mut base = 0usize;
                let mut fr = [0.0; 3];
                for a in 0..3 {
                    let p = ((v[a] - s * sigma[a] + vmax) / h).clamp(0.0, top);
                    let mut b = p.floor() as usize;
                    if b >= na - 1 {
                        b = na - 2;
                    }
                    fr[a] = p - b as f64;
                    base += b * [sx, sy, sz][a];
                }
                let corners = [
                    (0, (1.0 - fr[0]) * (1.0 - fr[1]) * (1.0 - fr[2])),
                    (sz, (1.0 - fr[0]) * (1.0 - fr[1]) * fr[2]),
                    (sy, (1.0 - fr[0]) * fr[1] * (1.0 - fr[2])),
                    (sy + sz, (1.0 - fr[0]) * fr[1] * fr[2]),
                    (sx, fr[0] * (1.0 - fr[1]) * (1.0 - fr[2])),
                    (sx + sz, fr[0] * (1.0 - fr[1]) * fr[2]),
                    (sx + sy, fr[0] * fr[1] * (1.0 - fr[2])),
                    (sx + sy + sz, fr[0] * fr[1] * fr[2]),
                ];
                for (off, cw) in corners {
                    if cw == 0.0 {
                        continue;
                    }
                    let wt = wline * cw;
                    let src = &stack[(base + off) * nf..(base + off + 1) * nf];
                    for (a, s) in acc.iter_mut().zip(src) {
                        *a += wt * s;
                    }
                }
            }
            out[i * nf..(i + 1) * nf].copy_from_slice(&acc);
        }
    }

    /// Plane integrals `R_sigma F(v_i)` by linear binning of `w F` along
    /// `sigma` into bins of half the lattice spacing, and linear read-back.
    fn plane_integrals(&self, d: usize, stack: &[f64], nf: usize, bins: &mut [f64], out: &mut [f64]) {
        let proj = &self.projections[d];
        let dt = self.bin_width;
        let w = self.grid.weights();
        bins.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..self.grid.len() {
            let b = proj.bin[j];
            let f = proj.frac[j];
            let src = &stack[j * nf..(j + 1) * nf];
            let (w0, w1) = (w[j] * (1.0 - f) / dt, w[j] * f / dt);
            for k in 0..nf {
                bins[b * nf + k] += w0 * src[k];
                bins[(b + 1) * nf + k] += w1 * src[k];
            }
        }
        for i in 0..self.grid.len() {
            let b = proj.bin[i];
            let f = proj.frac[i];
            for k in 0..nf {
                out[i * nf + k] = (1.0 - f) * bins[b * nf + k] + f * bins[(b + 1) * nf + k];
            }
        }
    }

    /// Reference evaluation of the symmetrised quadrature sum with
    /// trilinear interpolation at the post-collision velocities. Cost is
    /// `n_nodes^2 * n_directions`; meant for small lattices and
    /// cross-checks. Invariants are removed as in [`CollisionQ::apply`].
    pub fn apply_direct(&self, g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut q = direct_q(&self.grid, &self.rule, g, h)?;
        let p = self.projector.project(&q)?;
        for (a, b) in q.iter_mut().zip(&p) {
            *a -= b;
        }
        Ok(q)
    }
}

/// Literal quadrature of the symmetrised collision integral, without the
/// invariant correction.
pub fn direct_q(grid: &VelocityGrid, rule: &AngularRule, g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_len(grid.len(), g.len())?;
    check_len(grid.len(), h.len())?;
    let nodes = grid.nodes();
    let w = grid.weights();
    let dirs = rule.directions();
    let ws = rule.weights();
    Ok((0..grid.len())
        .map(|i| {
            let v = nodes[i];
            let terms: Vec<f64> = (0..grid.len())
                .map(|j| {
                    let vs = nodes[j];
                    let u = sub3(v, vs);
                    let mut acc = 0.0;
                    for (sig, wsig) in dirs.iter().zip(ws) {
                        let us = dot3(u, *sig);
                        let vp = [v[0] - us * sig[0], v[1] - us * sig[1], v[2] - us * sig[2]];
                        let vsp = [vs[0] + us * sig[0], vs[1] + us * sig[1], vs[2] + us * sig[2]];
                        let gp = grid.interpolate(g, vp);
                        let hp = grid.interpolate(h, vp);
                        let gsp = grid.interpolate(g, vsp);
                        let hsp = grid.interpolate(h, vsp);
                        acc += wsig
                            * us.abs()
                            * (gsp * hp + hsp * gp - g[j] * h[i] - g[i] * h[j]);
                    }
                    0.5 * w[j] * acc
                })
                .collect();
            compensated_sum(&terms)
        })
        .collect())
}

/// `Q(G, H)` with the fast factorised quadrature.
pub fn apply_q(q: &CollisionQ, g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    q.apply(g, h)
}

/// Empirical bound `max ||Q(g,h)||_{L^inf(omega / nu)} / (||g|| ||h||)` with
/// the `L^inf_omega` norm in the denominator.
pub fn measure_cq(
    q: &CollisionQ,
    nu: &[f64],
    weight: &WeightSpec,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(KineticError::param("samples", "need at least one pair"));
    }
    let grid = q.grid();
    check_len(grid.len(), nu.len())?;
    let mut best: f64 = 0.0;
    for (g, h) in samples {
        let ng = linf_omega_velocity(grid, weight, g);
        let nh = linf_omega_velocity(grid, weight, h);
        if ng == 0.0 || nh == 0.0 {
            return Err(KineticError::Singular("zero-norm sample in measure_cq".into()));
        }
        let qv = q.apply(g, h)?;
        let scaled: Vec<f64> = qv.iter().zip(nu).map(|(a, n)| a / n).collect();
        let nq = linf_omega_velocity(grid, weight, &scaled);
        best = best.max(nq / (ng * nh));
    }
    Ok(best)
}
