//! Velocity lattice, quadrature, Maxwellians and the two norms used to
//! measure every kinetic field.
//!
//! The lattice is a closed uniform tensor grid on `[-v_max, v_max]^3`
//! carrying trapezoid weights (interior spacing `h^3`, halved once per
//! face the node lies on). The grid is symmetric under every coordinate
//! reflection, so odd moments of even functions vanish exactly and the
//! specular reflection in an axis-aligned wall maps nodes to nodes.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, KineticError, Result};
use crate::numerics::{compensated_sum, compensated_sum_by};

/// Uniform tensor velocity grid with trapezoid weights.
#[derive(Clone, Debug)]
pub struct VelocityGrid {
    n: usize,
    v_max: f64,
    h: f64,
    axis: Vec<f64>,
    axis_weights: Vec<f64>,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    maxwellian: Vec<f64>,
}

/// Builds the closed tensor grid with `n_per_axis` points per axis.
pub fn build_grid(n_per_axis: usize, v_max: f64) -> Result<VelocityGrid> {
    VelocityGrid::new(n_per_axis, v_max)
}

impl VelocityGrid {
    pub fn new(n_per_axis: usize, v_max: f64) -> Result<Self> {
        if n_per_axis < 2 {
            return Err(KineticError::param("n_per_axis", "needs at least 2 nodes per axis"));
        }
        if !v_max.is_finite() || v_max <= 0.0 {
            return Err(KineticError::param("v_max", "must be finite and positive"));
        }
        let n = n_per_axis;
        let h = 2.0 * v_max / (n - 1) as f64;
        // Symmetric construction so that axis[k] == -axis[n-1-k] bitwise.
        let axis: Vec<f64> = (0..n)
            .map(|k| {
                let a = (k as f64 - (n - 1) as f64 / 2.0) * h;
                if 2 * k + 1 == n {
                    0.0
                } else {
                    a
                }
            })
            .collect();
        let axis_weights: Vec<f64> = (0..n)
            .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
            .collect();
        // Node weights are h^3 times a power of two, so every weight is
        // an exact rescaling of the same float and the total is accurate
        // to a few ulps.
        let h3 = h * h * h;
        let face = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let mut nodes = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    nodes.push([axis[ix], axis[iy], axis[iz]]);
                    weights.push(h3 * (face(ix) * face(iy) * face(iz)));
                }
            }
        }
        let maxwellian = nodes.iter().map(|v| maxwellian_unchecked(1.0, *v)).collect();
        Ok(VelocityGrid {
            n,
            v_max,
            h,
            axis,
            axis_weights,
            nodes,
            weights,
            maxwellian,
        })
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Lattice spacing `h = 2 v_max / (n - 1)`.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Number of velocity nodes, `n^3`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The reference Maxwellian sampled on the nodes.
    pub fn maxwellian(&self) -> &[f64] {
        &self.maxwellian
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    pub fn multi_index(&self, i: usize) -> [usize; 3] {
        let n = self.n;
        [i / (n * n), (i / n) % n, i % n]
    }

    /// Index of the node obtained by flipping the sign of component `axis`.
    pub fn mirror_index(&self, i: usize, axis: usize) -> usize {
        let mut m = self.multi_index(i);
        m[axis] = self.n - 1 - m[axis];
        self.index(m[0], m[1], m[2])
    }

    /// Index of `-v_i`.
    pub fn antipode_index(&self, i: usize) -> usize {
        let m = self.multi_index(i);
        let n = self.n - 1;
        self.index(n - m[0], n - m[1], n - m[2])
    }

    /// Quadrature `sum_i w_i f_i`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        check_len(self.len(), f.len())?;
        Ok(compensated_sum_by(f.len(), |i| self.weights[i] * f[i]))
    }

    /// Quadrature of `f(v)` evaluated at the nodes.
    pub fn integrate_fn<F: Fn([f64; 3]) -> f64>(&self, f: F) -> f64 {
        let vals: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * f(*v))
            .collect();
        compensated_sum(&vals)
    }

    /// Samples `f` on the nodes.
    pub fn sample<F: Fn([f64; 3]) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|v| f(*v)).collect()
    }

    /// Trilinear interpolation of nodal values at an arbitrary velocity,
    /// with zero extension outside the cube.
    pub fn interpolate(&self, f: &[f64], v: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for d in 0..3 {
            let p = (v[d] + self.v_max) / self.h;
            if !(0.0..=(self.n - 1) as f64).contains(&p) {
                return 0.0;
            }
            let mut i0 = p.floor() as usize;
            if i0 >= self.n - 1 {
                i0 = self.n - 2;
            }
            base[d] = i0;
            frac[d] = p - i0 as f64;
        }
        let n = self.n;
        let mut acc = 0.0;
        for cx in 0..2 {
            let wx = if cx == 0 { 1.0 - frac[0] } else { frac[0] };
            if wx == 0.0 {
                continue;
            }
            for cy in 0..2 {
                let wy = if cy == 0 { 1.0 - frac[1] } else { frac[1] };
                if wy == 0.0 {
                    continue;
                }
                let row = ((base[0] + cx) * n + base[1] + cy) * n + base[2];
                acc += wx * wy * ((1.0 - frac[2]) * f[row] + frac[2] * f[row + 1]);
            }
        }
        acc
    }
}

fn maxwellian_unchecked(theta: f64, v: [f64; 3]) -> f64 {
    let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    (2.0 * PI * theta).powf(-1.5) * (-v2 / (2.0 * theta)).exp()
}

/// Maxwellian of temperature `theta`, `(2 pi theta)^{-3/2} exp(-|v|^2 / (2 theta))`.
pub fn maxwellian(theta: f64, v: [f64; 3]) -> Result<f64> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(KineticError::param("theta", "temperature must be positive"));
    }
    Ok(maxwellian_unchecked(theta, v))
}

/// `sum_i w_i f_i` over the grid.
pub fn integrate(grid: &VelocityGrid, f: &[f64]) -> Result<f64> {
    grid.integrate(f)
}

/// Japanese bracket `<v> = sqrt(1 + |v|^2)`.
pub fn bracket(v: [f64; 3]) -> f64 {
    (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Exponential weight `omega(v) = exp(zeta |v|^2)` together with the
/// temperature-fluctuation bound it is admissible for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub zeta: f64,
    pub theta0: f64,
}

impl WeightSpec {
    /// Largest fluctuation bound accepted.
    pub const THETA0_MAX: f64 = 0.125;
    /// Default exponent. It lies inside the window for every `theta0 <= 1/8`.
    pub const DEFAULT_ZETA: f64 = 0.4;

    pub fn new(zeta: f64, theta0: f64) -> Result<Self> {
        let w = WeightSpec { zeta, theta0 };
        w.validate()?;
        Ok(w)
    }

    /// Open interval of admissible exponents for a given `theta0`.
    pub fn window(theta0: f64) -> (f64, f64) {
        (1.0 / (4.0 * (1.0 - theta0)), 1.0 / (2.0 * (1.0 + theta0)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0.is_finite() && (0.0..=Self::THETA0_MAX).contains(&self.theta0)) {
            return Err(KineticError::param(
                "theta0",
                format!("{} is outside [0, 1/8]", self.theta0),
            ));
        }
        let (lo, hi) = Self::window(self.theta0);
        if !(self.zeta > lo && self.zeta < hi) {
            return Err(KineticError::param(
                "zeta",
                format!(
                    "{} is outside the admissible window ({lo:.4}, {hi:.4}) for theta0 = {}",
                    self.zeta, self.theta0
                ),
            ));
        }
        Ok(())
    }

    pub fn omega(&self, v: [f64; 3]) -> f64 {
        (self.zeta * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
    }

    /// `omega` sampled on the grid.
    pub fn omega_values(&self, grid: &VelocityGrid) -> Vec<f64> {
        grid.sample(|v| self.omega(v))
    }
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            zeta: Self::DEFAULT_ZETA,
            theta0: Self::THETA0_MAX,
        }
    }
}

/// A kinetic density sampled on (spatial cell) x (velocity node).
///
/// Rows are spatial cells, columns are velocity nodes. Each cell carries
/// its measure so that spatial integrals never assume a unit domain.
#[derive(Clone, Debug)]
pub struct DistributionField {
    grid: Arc<VelocityGrid>,
    cell_measure: Vec<f64>,
    values: Array2<f64>,
}

impl DistributionField {
    pub fn zeros(grid: Arc<VelocityGrid>, cell_measure: Vec<f64>) -> Self {
        let values = Array2::zeros((cell_measure.len(), grid.len()));
        DistributionField {
            grid,
            cell_measure,
            values,
        }
    }

    pub fn from_values(
        grid: Arc<VelocityGrid>,
        cell_measure: Vec<f64>,
        values: Array2<f64>,
    ) -> Result<Self> {
        check_len(cell_measure.len(), values.nrows())?;
        check_len(grid.len(), values.ncols())?;
        Ok(DistributionField {
            grid,
            cell_measure,
            values,
        })
    }

    /// Builds a field from `f(cell, node_index, v)`.
    pub fn from_fn<F: Fn(usize, usize, [f64; 3]) -> f64>(
        grid: Arc<VelocityGrid>,
        cell_measure: Vec<f64>,
        f: F,
    ) -> Self {
        let mut out = Self::zeros(grid, cell_measure);
        let nodes = out.grid.nodes().to_vec();
        for (c, mut row) in out.values.axis_iter_mut(Axis(0)).enumerate() {
            for (i, x) in row.iter_mut().enumerate() {
                *x = f(c, i, nodes[i]);
            }
        }
        out
    }

    /// Same grid and cells, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.grid.clone(), self.cell_measure.clone())
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }

    pub fn cell_measure(&self) -> &[f64] {
        &self.cell_measure
    }

    pub fn n_cells(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn cell(&self, c: usize) -> ArrayView1<'_, f64> {
        self.values.row(c)
    }

    pub fn cell_mut(&mut self, c: usize) -> ArrayViewMut1<'_, f64> {
        self.values.row_mut(c)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    fn ensure_compatible(&self, other: &DistributionField) -> Result<()> {
        check_len(self.n_cells(), other.n_cells())?;
        check_len(self.grid.len(), other.grid.len())
    }

    /// Velocity integral of each cell.
    pub fn cell_masses(&self) -> Vec<f64> {
        let w = self.grid.weights();
        self.values
            .axis_iter(Axis(0))
            .map(|row| compensated_sum_by(row.len(), |i| w[i] * row[i]))
            .collect()
    }

    /// Total mass `<<f>>` over the phase space.
    pub fn mass(&self) -> f64 {
        let per_cell: Vec<f64> = self
            .cell_masses()
            .iter()
            .zip(&self.cell_measure)
            .map(|(m, dx)| m * dx)
            .collect();
        compensated_sum(&per_cell)
    }

    /// Scalar product of `L^2(M^{-1/2})` over the phase space.
    pub fn inner_h(&self, other: &DistributionField) -> Result<f64> {
        self.ensure_compatible(other)?;
        let w = self.grid.weights();
        let m = self.grid.maxwellian();
        let per_cell: Vec<f64> = (0..self.n_cells())
            .map(|c| {
                let a = self.values.row(c);
                let b = other.values.row(c);
                self.cell_measure[c] * compensated_sum_by(a.len(), |i| w[i] * a[i] * b[i] / m[i])
            })
            .collect();
        Ok(compensated_sum(&per_cell))
    }

    pub fn norm_h(&self) -> f64 {
        self.inner_h(self).map(f64::sqrt).unwrap_or(f64::NAN)
    }

    /// `max |omega f|` over all cells and nodes.
    pub fn norm_linf_omega(&self, w: &WeightSpec) -> f64 {
        let om = w.omega_values(&self.grid);
        let mut m: f64 = 0.0;
        for row in self.values.axis_iter(Axis(0)) {
            for (x, o) in row.iter().zip(&om) {
                m = m.max((x * o).abs());
            }
        }
        m
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &DistributionField) -> Result<()> {
        self.ensure_compatible(other)?;
        self.values.scaled_add(a, &other.values);
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.mapv_inplace(|x| a * x);
    }

    /// `self - other` as a new field.
    pub fn difference(&self, other: &DistributionField) -> Result<DistributionField> {
        let mut d = self.clone();
        d.axpy(-1.0, other)?;
        Ok(d)
    }
}

/// `L^2(M^{-1/2})` norm over the phase space.
#[allow(non_snake_case)]
pub fn norm_H(field: &DistributionField) -> Result<f64> {
    if !field.is_finite() {
        return Err(KineticError::NonFinite("norm_H input".into()));
    }
    Ok(field.norm_h())
}

/// Weighted sup norm `max |omega f|`.
pub fn norm_linf_omega(field: &DistributionField, w: &WeightSpec) -> Result<f64> {
    w.validate()?;
    if !field.is_finite() {
        return Err(KineticError::NonFinite("norm_linf_omega input".into()));
    }
    Ok(field.norm_linf_omega(w))
}

/// Velocity-only `L^2(M^{-1/2})` inner product, used inside one cell.
pub fn inner_h_velocity(grid: &VelocityGrid, a: &[f64], b: &[f64]) -> f64 {
    let w = grid.weights();
    let m = grid.maxwellian();
    compensated_sum_by(a.len(), |i| w[i] * a[i] * b[i] / m[i])
}

/// Velocity-only weighted sup norm.
pub fn linf_omega_velocity(grid: &VelocityGrid, w: &WeightSpec, f: &[f64]) -> f64 {
    grid.nodes()
        .iter()
        .zip(f)
        .fold(0.0f64, |m, (v, x)| m.max((w.omega(*v) * x).abs()))
}

/// JSON sidecar of a field snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub n_per_axis: usize,
    pub v_max: f64,
    /// Quadrature rule of the velocity lattice.
    pub quadrature: String,
    pub geometry: serde_json::Value,
    pub cell_measure: Vec<f64>,
    pub epsilon: f64,
    pub q: f64,
    pub theta0: f64,
    /// Time of the snapshot, absent for steady states.
    pub time: Option<f64>,
    /// What the values hold, e.g. `"F - M"` or `"perturbation"`.
    pub field: String,
}

impl SnapshotMeta {
    pub fn new(field: &DistributionField, geometry: serde_json::Value, epsilon: f64, q: f64, theta0: f64) -> Self {
        SnapshotMeta {
            n_per_axis: field.grid.n_per_axis(),
            v_max: field.grid.v_max(),
            quadrature: "closed tensor trapezoid".into(),
            geometry,
            cell_measure: field.cell_measure.clone(),
            epsilon,
            q,
            theta0,
            time: None,
            field: "f".into(),
        }
    }
}

/// Writes `(cell_index, vx_index, vy_index, vz_index, value)` rows.
pub fn write_snapshot_csv<W: std::io::Write>(field: &DistributionField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_index", "vx_index", "vy_index", "vz_index", "value"])?;
    for (c, row) in field.values.axis_iter(Axis(0)).enumerate() {
        for (i, x) in row.iter().enumerate() {
            let [a, b, d] = field.grid.multi_index(i);
            w.write_record(&[c.to_string(), a.to_string(), b.to_string(), d.to_string(), format!("{x:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Snapshot CSV at `path` plus its sidecar at `path` with a `.json`
/// extension.
pub fn write_snapshot(field: &DistributionField, meta: &SnapshotMeta, path: &std::path::Path) -> Result<()> {
    write_snapshot_csv(field, std::fs::File::create(path)?)?;
    let side = path.with_extension("json");
    std::fs::write(side, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`], rebuilding the grid
/// from the sidecar.
pub fn read_snapshot(path: &std::path::Path) -> Result<(DistributionField, SnapshotMeta)> {
    let meta: SnapshotMeta = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let grid = Arc::new(VelocityGrid::new(meta.n_per_axis, meta.v_max)?);
    let mut f = DistributionField::zeros(grid.clone(), meta.cell_measure.clone());
    let mut r = csv::Reader::from_path(path)?;
    let mut seen = 0usize;
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<usize> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| KineticError::param("snapshot", format!("bad index in column {k}")))
        };
        let c = num(0)?;
        let i = grid.index(num(1)?, num(2)?, num(3)?);
        let x: f64 = rec
            .get(4)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| KineticError::param("snapshot", "bad value"))?;
        if c >= f.n_cells() || i >= grid.len() {
            return Err(KineticError::param("snapshot", "index out of range"));
        }
        f.values[[c, i]] = x;
        seen += 1;
    }
    check_len(f.n_cells() * grid.len(), seen)?;
    Ok((f, meta))
}
