//! Poisson and Lamé solvers used by the hypocoercive norm.
//!
//! Both problems are discretised variationally, so the system matrices are
//! symmetric. On an interval the Poisson problem uses linear elements and a
//! tridiagonal solve. In two dimensions bilinear elements on a structured
//! quadrilateral mesh are assembled into a sparse matrix and factorised by
//! sparse Cholesky. Sources are constant on each cell.
//!
//! Boundary conditions:
//! * Robin `(2 - a) d_n u + a u = g`, weak term `a / (2 - a)` on the boundary;
//! * Neumann `d_n u = g` with a zero-mean gauge;
//! * Lamé: `U . n = 0` imposed strongly in a rotated nodal frame and
//!   `(2 - i) [(grad^s U) n]_tan + i U_tan = h` weakly.

use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::boundary::IotaProfile;
use crate::error::{check_len, KineticError, Result};
use crate::geometry::Panel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcKind {
    RobinP1,
    NeumannP2,
    Lame,
}

/// Boundary condition of the scalar problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PoissonBc {
    Robin(IotaProfile),
    Neumann,
}

impl PoissonBc {
    fn kind(&self) -> BcKind {
        match self {
            PoissonBc::Robin(_) => BcKind::RobinP1,
            PoissonBc::Neumann => BcKind::NeumannP2,
        }
    }
}

/// Solution with per-cell values and derivatives.
#[derive(Clone, Debug)]
pub struct EllipticSolution {
    /// Nodal unknowns (scalar, or three components per node).
    pub nodal: Vec<f64>,
    /// Cell-centre values, `[u]` or `[U_1, U_2, U_3]`.
    pub values: Vec<Vec<f64>>,
    /// Cell-centre gradient `[d_1 u, d_2 u, 0]`, or the symmetric gradient
    /// stored row-major as nine entries.
    pub gradient: Vec<Vec<f64>>,
    /// Relative residual of the reduced linear system.
    pub residual: f64,
    pub bc_kind: BcKind,
}

fn robin_beta(iota: f64) -> f64 {
    iota / (2.0 - iota)
}

fn tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return Err(KineticError::Singular("tridiagonal pivot".into()));
    }
    c[0] = if n > 1 { sup[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sub[i - 1] * c[i - 1];
        if piv.abs() < 1e-300 {
            return Err(KineticError::Singular("tridiagonal pivot".into()));
        }
        if i < n - 1 {
            c[i] = sup[i] / piv;
        }
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Poisson problem `-u'' = xi` on `(-L, L)` with `n` equal cells.
///
/// `data = (g_left, g_right)` is the inhomogeneous boundary datum.
pub fn solve_poisson_1d(l: f64, xi: &[f64], bc: PoissonBc, data: (f64, f64)) -> Result<EllipticSolution> {
    let n = xi.len();
    if n < 2 || !(l > 0.0) {
        return Err(KineticError::param("mesh", "need L > 0 and at least two cells"));
    }
    let h = 2.0 * l / n as f64;
    let nn = n + 1;
    let mut diag = vec![0.0; nn];
    let mut off = vec![0.0; n];
    let mut rhs = vec![0.0; nn];
    for c in 0..n {
        diag[c] += 1.0 / h;
        diag[c + 1] += 1.0 / h;
        off[c] -= 1.0 / h;
        rhs[c] += 0.5 * h * xi[c];
        rhs[c + 1] += 0.5 * h * xi[c];
    }
    match bc {
        PoissonBc::Robin(iota) => {
            let a = [iota.at(Panel::Lambda1), iota.at(Panel::Lambda2)];
            diag[0] += robin_beta(a[0]);
            diag[n] += robin_beta(a[1]);
            rhs[0] += data.0 / (2.0 - a[0]);
            rhs[n] += data.1 / (2.0 - a[1]);
        }
        PoissonBc::Neumann => {
            rhs[0] += data.0;
            rhs[n] += data.1;
            let total: f64 = rhs.iter().sum();
            let scale: f64 = rhs.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
            if total.abs() > 1e-10 * scale.max(1.0) {
                return Err(KineticError::param("xi", format!("Neumann data has nonzero mean {total:.3e}")));
            }
        }
    }
    let full_matvec = |u: &[f64]| -> Vec<f64> {
        (0..nn)
            .map(|i| {
                let mut s = diag[i] * u[i];
                if i > 0 {
                    s += off[i - 1] * u[i - 1];
                }
                if i < n {
                    s += off[i] * u[i + 1];
                }
                s
            })
            .collect()
    };
    let u = match bc {
        PoissonBc::Robin(_) => tridiagonal(&off, &diag, &off, &rhs)?,
        PoissonBc::Neumann => {
            // pin the first node, then shift to zero mean
            let sub = tridiagonal(&off[1..], &diag[1..], &off[1..], &rhs[1..])?;
            let mut u = vec![0.0];
            u.extend(sub);
            let mean = (0..n).map(|c| 0.5 * (u[c] + u[c + 1])).sum::<f64>() / n as f64;
            u.iter_mut().for_each(|x| *x -= mean);
            u
        }
    };
    let r = full_matvec(&u);
    let rn = r.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let bn = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    let values = (0..n).map(|c| vec![0.5 * (u[c] + u[c + 1])]).collect();
    let gradient = (0..n).map(|c| vec![(u[c + 1] - u[c]) / h, 0.0, 0.0]).collect();
    Ok(EllipticSolution {
        nodal: u,
        values,
        gradient,
        residual: if bn > 0.0 { rn / bn } else { rn },
        bc_kind: bc.kind(),
    })
}

/// Two-dimensional cross-section shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Section {
    /// `(-lx, lx) x (-ly, ly)`; the `x_1` faces are the bases.
    Rectangle { lx: f64, ly: f64 },
    /// Disk of radius `r`, all lateral.
    Disk { r: f64 },
}

/// Structured quadrilateral mesh of a [`Section`].
#[derive(Clone, Debug)]
pub struct QuadMesh {
    pub section: Section,
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 4]>,
    /// Boundary edges `(a, b, outward normal, panel)`.
    pub edges: Vec<(usize, usize, [f64; 2], Panel)>,
    /// Normals imposed at boundary nodes (one or two per node).
    pub node_normals: Vec<Vec<[f64; 2]>>,
}

fn square_to_disk(u: f64, v: f64) -> [f64; 2] {
    [u * (1.0 - 0.5 * v * v).sqrt(), v * (1.0 - 0.5 * u * u).sqrt()]
}

impl QuadMesh {
    pub fn new(section: Section, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(KineticError::param("mesh", "need at least 2 x 2 cells"));
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let u = -1.0 + 2.0 * i as f64 / nx as f64;
                let v = -1.0 + 2.0 * j as f64 / ny as f64;
                nodes.push(match section {
                    Section::Rectangle { lx, ly } => {
                        if !(lx > 0.0 && ly > 0.0) {
                            return Err(KineticError::param("section", "sides must be positive"));
                        }
                        [lx * u, ly * v]
                    }
                    Section::Disk { r } => {
                        if !(r > 0.0) {
                            return Err(KineticError::param("section", "radius must be positive"));
                        }
                        let p = square_to_disk(u, v);
                        [r * p[0], r * p[1]]
                    }
                });
            }
        }
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut edges = Vec::new();
        let mut node_normals = vec![Vec::new(); nodes.len()];
        let face = |a: usize, b: usize, n: [f64; 2], p: Panel, edges: &mut Vec<_>| edges.push((a, b, n, p));
        for i in 0..nx {
            face(id(i, 0), id(i + 1, 0), [0.0, -1.0], Panel::Lambda3, &mut edges);
            face(id(i + 1, ny), id(i, ny), [0.0, 1.0], Panel::Lambda3, &mut edges);
        }
        for j in 0..ny {
            face(id(0, j + 1), id(0, j), [-1.0, 0.0], Panel::Lambda1, &mut edges);
            face(id(nx, j), id(nx, j + 1), [1.0, 0.0], Panel::Lambda2, &mut edges);
        }
        match section {
            Section::Rectangle { .. } => {
                for (a, b, n, _) in &edges {
                    for k in [*a, *b] {
                        if !node_normals[k].contains(n) {
                            node_normals[k].push(*n);
                        }
                    }
                }
            }
            Section::Disk { .. } => {
                for e in edges.iter_mut() {
                    let (pa, pb) = (nodes[e.0], nodes[e.1]);
                    let t = [pb[0] - pa[0], pb[1] - pa[1]];
                    let len = t[0].hypot(t[1]);
                    e.2 = [t[1] / len, -t[0] / len];
                    e.3 = Panel::Lambda3;
                }
                for (a, b, _, _) in &edges {
                    for k in [*a, *b] {
                        if node_normals[k].is_empty() {
                            let p = nodes[k];
                            let r = p[0].hypot(p[1]);
                            node_normals[k].push([p[0] / r, p[1] / r]);
                        }
                    }
                }
            }
        }
        Ok(QuadMesh {
            section,
            nx,
            ny,
            nodes,
            cells,
            edges,
            node_normals,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Image of the reference centre of each cell.
    pub fn cell_centers(&self) -> Vec<[f64; 2]> {
        self.cells
            .iter()
            .map(|c| {
                let mut p = [0.0; 2];
                for k in c {
                    p[0] += 0.25 * self.nodes[*k][0];
                    p[1] += 0.25 * self.nodes[*k][1];
                }
                p
            })
            .collect()
    }

    /// Cell areas.
    pub fn cell_areas(&self) -> Vec<f64> {
        (0..self.n_cells())
            .map(|c| {
                let mut a = 0.0;
                for (_, _, _, det) in self.gauss(c) {
                    a += det;
                }
                a
            })
            .collect()
    }

    /// 2 x 2 Gauss points of a cell: `(shape values, physical gradients,
    /// point, weight times Jacobian)`.
    fn gauss(&self, c: usize) -> Vec<([f64; 4], [[f64; 2]; 4], [f64; 2], f64)> {
        let g = 1.0 / 3f64.sqrt();
        let mut out = Vec::with_capacity(4);
        for (s, t) in [(-g, -g), (g, -g), (g, g), (-g, g)] {
            let (n, grad, x, det) = self.shape(c, s, t);
            out.push((n, grad, x, det));
        }
        out
    }

    fn shape(&self, c: usize, s: f64, t: f64) -> ([f64; 4], [[f64; 2]; 4], [f64; 2], f64) {
        let sg = [-1.0, 1.0, 1.0, -1.0];
        let tg = [-1.0, -1.0, 1.0, 1.0];
        let mut n = [0.0; 4];
        let mut dn = [[0.0; 2]; 4];
        for k in 0..4 {
            n[k] = 0.25 * (1.0 + sg[k] * s) * (1.0 + tg[k] * t);
            dn[k] = [0.25 * sg[k] * (1.0 + tg[k] * t), 0.25 * tg[k] * (1.0 + sg[k] * s)];
        }
        let mut j = [[0.0; 2]; 2];
        let mut x = [0.0; 2];
        for k in 0..4 {
            let p = self.nodes[self.cells[c][k]];
            for a in 0..2 {
                x[a] += n[k] * p[a];
                for b in 0..2 {
                    j[a][b] += p[a] * dn[k][b];
                }
            }
        }
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
        let mut grad = [[0.0; 2]; 4];
        for k in 0..4 {
            for a in 0..2 {
                grad[k][a] = dn[k][0] * inv[0][a] + dn[k][1] * inv[1][a];
            }
        }
        (n, grad, x, det)
    }
}

fn cholesky_solve(dim: usize, coo: &CooMatrix<f64>, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    let csc = CscMatrix::from(coo);
    let chol = CscCholesky::factor(&csc)
        .map_err(|e| KineticError::Singular(format!("sparse Cholesky failed: {e}")))?;
    let b = nalgebra::DMatrix::from_column_slice(dim, 1, rhs);
    let x = chol.solve(&b);
    let xs: Vec<f64> = x.column(0).iter().copied().collect();
    let xv = nalgebra::DVector::from_column_slice(&xs);
    let ax = &csc * &xv;
    let rn = ax.iter().zip(rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let bn = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok((xs, if bn > 0.0 { rn / bn } else { rn }))
}

/// Scalar stiffness, boundary mass and load before constraints.
struct ScalarSystem {
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

/// Poisson problem `-Delta u = xi` on a quadrilateral mesh.
///
/// `data(x, n)` is the inhomogeneous boundary datum `g` of the chosen
/// condition.
pub fn solve_poisson_2d(
    mesh: &QuadMesh,
    xi: &[f64],
    bc: PoissonBc,
    data: Option<&dyn Fn([f64; 2], [f64; 2]) -> f64>,
) -> Result<EllipticSolution> {
    check_len(mesh.n_cells(), xi.len())?;
    let nn = mesh.nodes.len();
    let mut sys = ScalarSystem {
        entries: Vec::new(),
        rhs: vec![0.0; nn],
    };
    for c in 0..mesh.n_cells() {
        let ids = mesh.cells[c];
        let mut ke = [[0.0; 4]; 4];
        for (n, g, _, det) in mesh.gauss(c) {
            for a in 0..4 {
                sys.rhs[ids[a]] += xi[c] * n[a] * det;
                for b in 0..4 {
                    ke[a][b] += (g[a][0] * g[b][0] + g[a][1] * g[b][1]) * det;
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                sys.entries.push((ids[a], ids[b], ke[a][b]));
            }
        }
    }
    let gq = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    for (a, b, n, panel) in &mesh.edges {
        let (pa, pb) = (mesh.nodes[*a], mesh.nodes[*b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let (beta, scale) = match bc {
            PoissonBc::Robin(iota) => {
                let i = iota.at(*panel);
                (robin_beta(i), 1.0 / (2.0 - i))
            }
            PoissonBc::Neumann => (0.0, 1.0),
        };
        for s in gq {
            let w = 0.5 * len;
            let phi = [1.0 - s, s];
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let g = data.map(|d| d(x, *n)).unwrap_or(0.0);
            let ids = [*a, *b];
            for p in 0..2 {
                sys.rhs[ids[p]] += w * scale * g * phi[p];
                for q in 0..2 {
                    if beta != 0.0 {
                        sys.entries.push((ids[p], ids[q], w * beta * phi[p] * phi[q]));
                    }
                }
            }
        }
    }
    let (u, residual) = match bc {
        PoissonBc::Robin(_) => {
            let mut coo = CooMatrix::new(nn, nn);
            for (i, j, v) in &sys.entries {
                coo.push(*i, *j, *v);
            }
            cholesky_solve(nn, &coo, &sys.rhs)?
        }
        PoissonBc::Neumann => {
            let total: f64 = sys.rhs.iter().sum();
            let scale = sys.rhs.iter().map(|x| x.abs()).sum::<f64>();
            if total.abs() > 1e-10 * scale.max(1.0) {
                return Err(KineticError::param("xi", format!("Neumann data has nonzero mean {total:.3e}")));
            }
            let mut coo = CooMatrix::new(nn - 1, nn - 1);
            for (i, j, v) in &sys.entries {
                if *i > 0 && *j > 0 {
                    coo.push(i - 1, j - 1, *v);
                }
            }
            let (sub, res) = cholesky_solve(nn - 1, &coo, &sys.rhs[1..])?;
            let mut u = vec![0.0];
            u.extend(sub);
            let mass = node_masses(mesh);
            let area: f64 = mass.iter().sum();
            let mean = u.iter().zip(&mass).map(|(a, m)| a * m).sum::<f64>() / area;
            u.iter_mut().for_each(|x| *x -= mean);
            (u, res)
        }
    };
    let mut values = Vec::with_capacity(mesh.n_cells());
    let mut gradient = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let (n, g, _, _) = mesh.shape(c, 0.0, 0.0);
        let ids = mesh.cells[c];
        let mut v = 0.0;
        let mut d = [0.0; 2];
        for k in 0..4 {
            v += n[k] * u[ids[k]];
            d[0] += g[k][0] * u[ids[k]];
            d[1] += g[k][1] * u[ids[k]];
        }
        values.push(vec![v]);
        gradient.push(vec![d[0], d[1], 0.0]);
    }
    Ok(EllipticSolution {
        nodal: u,
        values,
        gradient,
        residual,
        bc_kind: bc.kind(),
    })
}

/// `int phi_i` for every node.
pub fn node_masses(mesh: &QuadMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.nodes.len()];
    for c in 0..mesh.n_cells() {
        for (n, _, _, det) in mesh.gauss(c) {
            for k in 0..4 {
                m[mesh.cells[c][k]] += n[k] * det;
            }
        }
    }
    m
}

/// Symmetric gradient of the three-component field `U(x_1, x_2)` with
/// `d_3 = 0`, for shape gradient `g` and component `a`: row-major 3 x 3.
fn sym_grad(g: [f64; 2], a: usize) -> [[f64; 3]; 3] {
    let mut e = [[0.0; 3]; 3];
    let d = [g[0], g[1], 0.0];
    for j in 0..3 {
        e[a][j] += 0.5 * d[j];
        e[j][a] += 0.5 * d[j];
    }
    e
}

fn contract(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Assembled Lamé problem in the reduced (constrained) unknowns.
pub struct LameSystem {
    dim: usize,
    matrix: CscMatrix<f64>,
    rhs: Vec<f64>,
    /// For each full unknown `3 k + a`: list of `(reduced index, coefficient)`.
    map: Vec<Vec<(usize, f64)>>,
}

impl LameSystem {
    /// `a(v, w)` for full nodal fields.
    pub fn bilinear(&self, v: &[f64], w: &[f64]) -> f64 {
        let rv = self.reduce(v);
        let rw = self.reduce(w);
        let av = &self.matrix * &nalgebra::DVector::from_column_slice(&rv);
        av.iter().zip(&rw).map(|(a, b)| a * b).sum()
    }

    /// Load `l(w)` for a full nodal field.
    pub fn load(&self, w: &[f64]) -> f64 {
        self.reduce(w).iter().zip(&self.rhs).map(|(a, b)| a * b).sum()
    }

    /// Least-squares restriction of a constrained full field to reduced
    /// unknowns (exact for admissible fields).
    fn reduce(&self, v: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.dim];
        let mut norm = vec![0.0; self.dim];
        for (k, m) in self.map.iter().enumerate() {
            for (j, c) in m {
                r[*j] += c * v[k];
                norm[*j] += c * c;
            }
        }
        r.iter().zip(&norm).map(|(a, n)| if *n > 0.0 { a / n } else { 0.0 }).collect()
    }

    pub fn matrix(&self) -> &CscMatrix<f64> {
        &self.matrix
    }
}

/// Assembles `-Div(grad^s U) = Xi` with `U . n = 0` and the tangential
/// Robin condition weighted by `iota`.
pub fn assemble_lame(
    mesh: &QuadMesh,
    xi: &[[f64; 3]],
    iota: IotaProfile,
    data: Option<&dyn Fn([f64; 2], [f64; 2]) -> [f64; 3]>,
) -> Result<LameSystem> {
    check_len(mesh.n_cells(), xi.len())?;
    let nn = mesh.nodes.len();
    let mut map: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 3 * nn];
    let mut dim = 0;
    for k in 0..nn {
        let normals = &mesh.node_normals[k];
        match normals.len() {
            0 => {
                for a in 0..2 {
                    map[3 * k + a].push((dim, 1.0));
                    dim += 1;
                }
            }
            1 => {
                let n = normals[0];
                let t = [-n[1], n[0]];
                map[3 * k].push((dim, t[0]));
                map[3 * k + 1].push((dim, t[1]));
                dim += 1;
            }
            _ => {}
        }
        map[3 * k + 2].push((dim, 1.0));
        dim += 1;
    }
    let mut full: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs_full = vec![0.0; 3 * nn];
    for c in 0..mesh.n_cells() {
        let ids = mesh.cells[c];
        for (n, g, _, det) in mesh.gauss(c) {
            let eps: Vec<[[f64; 3]; 3]> = (0..12).map(|q| sym_grad(g[q / 3], q % 3)).collect();
            for p in 0..12 {
                rhs_full[3 * ids[p / 3] + p % 3] += xi[c][p % 3] * n[p / 3] * det;
                for q in 0..12 {
                    let v = contract(&eps[p], &eps[q]) * det;
                    if v != 0.0 {
                        full.push((3 * ids[p / 3] + p % 3, 3 * ids[q / 3] + q % 3, v));
                    }
                }
            }
        }
    }
    let gq = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    for (a, b, n, panel) in &mesh.edges {
        let i = iota.at(*panel);
        let beta = robin_beta(i);
        let (pa, pb) = (mesh.nodes[*a], mesh.nodes[*b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let n3 = [n[0], n[1], 0.0];
        // tangential projector I - n n^T
        let mut pt = [[0.0; 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                pt[r][s] = if r == s { 1.0 } else { 0.0 } - n3[r] * n3[s];
            }
        }
        for s in gq {
            let w = 0.5 * len;
            let phi = [1.0 - s, s];
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let h = data.map(|d| d(x, *n)).unwrap_or([0.0; 3]);
            let ids = [*a, *b];
            for p in 0..2 {
                for r in 0..3 {
                    let ht: f64 = (0..3).map(|s| pt[r][s] * h[s]).sum();
                    rhs_full[3 * ids[p] + r] += w * ht / (2.0 - i) * phi[p];
                }
                if beta == 0.0 {
                    continue;
                }
                for q in 0..2 {
                    for r in 0..3 {
                        for s2 in 0..3 {
                            let v = w * beta * phi[p] * phi[q] * pt[r][s2];
                            if v != 0.0 {
                                full.push((3 * ids[p] + r, 3 * ids[q] + s2, v));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut coo = CooMatrix::new(dim, dim);
    for (i, j, v) in full {
        for (ri, ci) in &map[i] {
            for (rj, cj) in &map[j] {
                coo.push(*ri, *rj, ci * cj * v);
            }
        }
    }
    let mut rhs = vec![0.0; dim];
    for (k, m) in map.iter().enumerate() {
        for (j, c) in m {
            rhs[*j] += c * rhs_full[k];
        }
    }
    Ok(LameSystem {
        dim,
        matrix: CscMatrix::from(&coo),
        rhs,
        map,
    })
}

/// Solves the Lamé system; see [`assemble_lame`].
pub fn solve_lame(
    mesh: &QuadMesh,
    xi: &[[f64; 3]],
    iota: IotaProfile,
    data: Option<&dyn Fn([f64; 2], [f64; 2]) -> [f64; 3]>,
) -> Result<(EllipticSolution, LameSystem)> {
    let sys = assemble_lame(mesh, xi, iota, data)?;
    let chol = CscCholesky::factor(&sys.matrix)
        .map_err(|e| KineticError::Singular(format!("Lamé assembly is singular: {e}")))?;
    let b = nalgebra::DMatrix::from_column_slice(sys.dim, 1, &sys.rhs);
    let x: Vec<f64> = chol.solve(&b).column(0).iter().copied().collect();
    let ax = &sys.matrix * &nalgebra::DVector::from_column_slice(&x);
    let rn = ax.iter().zip(&sys.rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let bn = sys.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    let nn = mesh.nodes.len();
    let mut u = vec![0.0; 3 * nn];
    for (k, m) in sys.map.iter().enumerate() {
        for (j, c) in m {
            u[k] += c * x[*j];
        }
    }
    let mut values = Vec::with_capacity(mesh.n_cells());
    let mut gradient = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let (n, g, _, _) = mesh.shape(c, 0.0, 0.0);
        let ids = mesh.cells[c];
        let mut v = vec![0.0; 3];
        let mut e = [[0.0; 3]; 3];
        for k in 0..4 {
            for a in 0..3 {
                let coef = u[3 * ids[k] + a];
                v[a] += n[k] * coef;
                let s = sym_grad(g[k], a);
                for r in 0..3 {
                    for q in 0..3 {
                        e[r][q] += coef * s[r][q];
                    }
                }
            }
        }
        values.push(v);
        gradient.push(e.iter().flatten().copied().collect());
    }
    Ok((
        EllipticSolution {
            nodal: u,
            values,
            gradient,
            residual: if bn > 0.0 { rn / bn } else { rn },
            bc_kind: BcKind::Lame,
        },
        sys,
    ))
}

/// Poisson dispatch for the slab (1D) or a section mesh.
pub fn solve_poisson(mesh: Option<&QuadMesh>, l: f64, xi: &[f64], bc: PoissonBc) -> Result<EllipticSolution> {
    match mesh {
        None => solve_poisson_1d(l, xi, bc, (0.0, 0.0)),
        Some(m) => solve_poisson_2d(m, xi, bc, None),
    }
}
