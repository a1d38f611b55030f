//! Manufactured solutions for the elliptic solvers, shared by the elliptic
//! tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use ness_kinetic::boundary::IotaProfile;
use ness_kinetic::elliptic::{node_masses, solve_lame, solve_poisson_2d, PoissonBc, QuadMesh, Section};
use ness_kinetic::numerics::gauss_legendre;

pub fn square(n: usize) -> QuadMesh {
    QuadMesh::new(Section::Rectangle { lx: 1.0, ly: 1.0 }, n, n).unwrap()
}

/// Cell averages of `f` by a 3 x 3 Gauss rule on each (axis-aligned) cell.
pub fn cell_averages<T, F>(mesh: &QuadMesh, f: F) -> Vec<T>
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    F: Fn([f64; 2]) -> T,
{
    let (x, w) = gauss_legendre(3);
    mesh.cells
        .iter()
        .map(|ids| {
            let xs = ids.map(|k| mesh.nodes[k][0]);
            let ys = ids.map(|k| mesh.nodes[k][1]);
            let (x0, x1) = (xs.iter().copied().fold(f64::MAX, f64::min), xs.iter().copied().fold(f64::MIN, f64::max));
            let (y0, y1) = (ys.iter().copied().fold(f64::MAX, f64::min), ys.iter().copied().fold(f64::MIN, f64::max));
            let mut acc = T::default();
            for (a, wa) in x.iter().zip(&w) {
                for (b, wb) in x.iter().zip(&w) {
                    let p = [x0 + 0.5 * (a + 1.0) * (x1 - x0), y0 + 0.5 * (b + 1.0) * (y1 - y0)];
                    acc = acc + f(p) * (0.25 * wa * wb);
                }
            }
            acc
        })
        .collect()
}

#[derive(Clone, Copy, Default)]
pub struct V3(pub [f64; 3]);

impl std::ops::Add for V3 {
    type Output = V3;
    fn add(self, o: V3) -> V3 {
        V3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Mul<f64> for V3 {
    type Output = V3;
    fn mul(self, s: f64) -> V3 {
        V3(self.0.map(|x| x * s))
    }
}

const ROBIN_IOTA: f64 = 0.5;

fn robin_u(p: [f64; 2]) -> f64 {
    (p[0] + 0.5).sin() * (0.8 * p[1]).cos()
}

fn robin_grad(p: [f64; 2]) -> [f64; 2] {
    [(p[0] + 0.5).cos() * (0.8 * p[1]).cos(), -0.8 * (p[0] + 0.5).sin() * (0.8 * p[1]).sin()]
}

/// Nodal L^inf error of the Robin problem with `iota = 1/2` on an `n x n` mesh.
pub fn poisson_robin_error(n: usize) -> f64 {
    let mesh = square(n);
    let xi = cell_averages(&mesh, |p| 1.64 * robin_u(p));
    let data = |x: [f64; 2], nv: [f64; 2]| {
        let g = robin_grad(x);
        (2.0 - ROBIN_IOTA) * (g[0] * nv[0] + g[1] * nv[1]) + ROBIN_IOTA * robin_u(x)
    };
    let s = solve_poisson_2d(&mesh, &xi, PoissonBc::Robin(IotaProfile::Constant { value: ROBIN_IOTA }), Some(&data)).unwrap();
    mesh.nodes.iter().zip(&s.nodal).fold(0.0, |m, (p, u)| m.max((u - robin_u(*p)).abs()))
}

fn neumann_u(p: [f64; 2]) -> f64 {
    (PI * p[0]).cos() * (0.5 * PI * p[1]).sin() + 0.3 * (PI * p[1]).cos()
}

/// Nodal L^inf error of the pure Neumann problem, after matching gauges.
pub fn poisson_neumann_error(n: usize) -> f64 {
    let mesh = square(n);
    let xi = cell_averages(&mesh, |p| 1.25 * PI * PI * (PI * p[0]).cos() * (0.5 * PI * p[1]).sin() + 0.3 * PI * PI * (PI * p[1]).cos());
    // d_n u on the four faces: zero on x = +-1 and y = +-1 for the cosine,
    // and +-(pi / 2) cos(pi x) cos(pi y / 2) = 0 at y = +-1
    let s = solve_poisson_2d(&mesh, &xi, PoissonBc::Neumann, None).unwrap();
    let mass = node_masses(&mesh);
    let area: f64 = mass.iter().sum();
    let mean = mesh.nodes.iter().zip(&mass).map(|(p, m)| neumann_u(*p) * m).sum::<f64>() / area;
    mesh.nodes.iter().zip(&s.nodal).fold(0.0, |m, (p, u)| m.max((u - (neumann_u(*p) - mean)).abs()))
}

fn lame_u(p: [f64; 2]) -> [f64; 3] {
    let (x, y) = (p[0], p[1]);
    [(PI * x).sin() * (0.3 * y).exp(), (PI * y).sin() * (0.5 * x).cos(), (0.7 * x).cos() * (0.4 * y + 0.2).sin()]
}

fn lame_strain(p: [f64; 2]) -> [[f64; 3]; 3] {
    let (x, y) = (p[0], p[1]);
    let e11 = PI * (PI * x).cos() * (0.3 * y).exp();
    let e22 = PI * (PI * y).cos() * (0.5 * x).cos();
    let e12 = 0.5 * (0.3 * (PI * x).sin() * (0.3 * y).exp() - 0.5 * (PI * y).sin() * (0.5 * x).sin());
    let e13 = -0.35 * (0.7 * x).sin() * (0.4 * y + 0.2).sin();
    let e23 = 0.2 * (0.7 * x).cos() * (0.4 * y + 0.2).cos();
    [[e11, e12, e13], [e12, e22, e23], [e13, e23, 0.0]]
}

/// `-Div(grad^s U)` for [`lame_u`].
fn lame_source(p: [f64; 2]) -> V3 {
    let (x, y) = (p[0], p[1]);
    let u = lame_u(p);
    let d1div = -PI * PI * (PI * x).sin() * (0.3 * y).exp() - 0.5 * PI * (PI * y).cos() * (0.5 * x).sin();
    let d2div = 0.3 * PI * (PI * x).cos() * (0.3 * y).exp() - PI * PI * (PI * y).sin() * (0.5 * x).cos();
    V3([
        -0.5 * ((0.09 - PI * PI) * u[0] + d1div),
        -0.5 * ((-PI * PI - 0.25) * u[1] + d2div),
        0.325 * u[2],
    ])
}

fn lame_iota() -> IotaProfile {
    IotaProfile::Bases
}

/// Nodal L^inf error of the Lamé system and the relative defect of the
/// discrete energy identity `a(U, U) = l(U)`.
pub fn lame_error(n: usize) -> (f64, f64) {
    let mesh = square(n);
    let xi: Vec<[f64; 3]> = cell_averages(&mesh, lame_source).into_iter().map(|v| v.0).collect();
    let iota = lame_iota();
    let data = |x: [f64; 2], nv: [f64; 2]| {
        // iota is 1 on the x_1 faces and 0 on the x_2 faces
        let i = if nv[0].abs() > 0.5 { 1.0 } else { 0.0 };
        let e = lame_strain(x);
        let u = lame_u(x);
        let mut h = [0.0; 3];
        for (r, hr) in h.iter_mut().enumerate() {
            *hr = (2.0 - i) * (e[r][0] * nv[0] + e[r][1] * nv[1]) + i * u[r];
        }
        h
    };
    let (s, sys) = solve_lame(&mesh, &xi, iota, Some(&data)).unwrap();
    let mut err = 0.0f64;
    for (k, p) in mesh.nodes.iter().enumerate() {
        let u = lame_u(*p);
        for a in 0..3 {
            err = err.max((s.nodal[3 * k + a] - u[a]).abs());
        }
    }
    let a = sys.bilinear(&s.nodal, &s.nodal);
    let l = sys.load(&s.nodal);
    (err, (a - l).abs() / a.abs())
}
