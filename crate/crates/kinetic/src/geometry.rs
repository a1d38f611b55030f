//! Spatial domains: slab, finite cylinder, disk cross-section and a generic
//! signed-distance domain.
//!
//! Conventions: `delta(x) > 0` inside, the outward normal is
//! `n = -grad delta / |grad delta|`, and a boundary phase point `(x, v)` is
//! outgoing when `n . v > 0`, incoming when `n . v < 0`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KineticError, Result};
use crate::numerics::{dot3, norm3};

/// Relative threshold below which `|n . v|` counts as grazing.
pub const GRAZING_TOL: f64 = 1e-12;

/// A signed distance description of a smooth bounded domain.
pub trait SignedDistance: Send + Sync {
    /// Positive inside, negative outside, zero on the boundary.
    fn delta(&self, x: [f64; 3]) -> f64;
    fn gradient(&self, x: [f64; 3]) -> [f64; 3];
    /// Upper bound on the step that can be taken without skipping over a
    /// thin part of the domain.
    fn reach(&self) -> f64;
}

/// Ball of radius `r` centred at the origin.
#[derive(Clone, Copy, Debug)]
pub struct Ball {
    pub radius: f64,
}

impl SignedDistance for Ball {
    fn delta(&self, x: [f64; 3]) -> f64 {
        self.radius - norm3(x)
    }
    fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let r = norm3(x);
        if r == 0.0 {
            return [0.0; 3];
        }
        [-x[0] / r, -x[1] / r, -x[2] / r]
    }
    fn reach(&self) -> f64 {
        self.radius
    }
}

#[derive(Clone)]
pub enum Domain {
    /// `(-L, L) x R^2`, homogeneous in the transverse directions.
    Slab { l: f64 },
    /// `(-L, L) x disk(R)` with the axis along `x_1`.
    Cylinder { l: f64, r: f64 },
    /// Cross-section disk of radius `R` in the `(x_2, x_3)` plane, infinite
    /// along `x_1`.
    Disk { r: f64 },
    SignedDistance(Arc<dyn SignedDistance>),
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Slab { l } => write!(f, "Slab(L={l})"),
            Domain::Cylinder { l, r } => write!(f, "Cylinder(L={l}, R={r})"),
            Domain::Disk { r } => write!(f, "Disk(R={r})"),
            Domain::SignedDistance(_) => write!(f, "SignedDistance"),
        }
    }
}

/// Which piece of the boundary a point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Panel {
    /// Base `x_1 = -L`.
    Lambda1,
    /// Base `x_1 = +L`.
    Lambda2,
    /// Lateral surface `|x_perp| = R`.
    Lambda3,
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Outgoing,
    Incoming,
    Grazing,
}

/// Result of tracing a backward characteristic to the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryHit {
    pub t_exit: f64,
    pub x_hit: Option<[f64; 3]>,
    pub panel: Option<Panel>,
    pub classification: Option<Classification>,
}

impl BoundaryHit {
    fn never() -> Self {
        BoundaryHit {
            t_exit: f64::INFINITY,
            x_hit: None,
            panel: None,
            classification: None,
        }
    }
}

/// Sign classification of `n . v` with the grazing tolerance.
pub fn classify(n: [f64; 3], v: [f64; 3]) -> Classification {
    let d = dot3(n, v);
    if d.abs() < GRAZING_TOL * norm3(v) || d == 0.0 {
        Classification::Grazing
    } else if d > 0.0 {
        Classification::Outgoing
    } else {
        Classification::Incoming
    }
}

/// `v - 2 (n . v) n`.
pub fn specular_reflect(n: [f64; 3], v: [f64; 3]) -> Result<[f64; 3]> {
    if (norm3(n) - 1.0).abs() > 1e-12 {
        return Err(KineticError::param("n", "normal must have unit length"));
    }
    let d = 2.0 * dot3(n, v);
    Ok([v[0] - d * n[0], v[1] - d * n[1], v[2] - d * n[2]])
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(KineticError::param(name, "must be finite and positive"))
    }
}

fn perp_norm(x: [f64; 3]) -> f64 {
    (x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Smallest positive root of `|a - s b|^2 = R^2` in the transverse plane,
/// for `a` inside the disk.
fn lateral_exit(a: [f64; 3], b: [f64; 3], r: f64) -> f64 {
    let bb = b[1] * b[1] + b[2] * b[2];
    if bb == 0.0 {
        return f64::INFINITY;
    }
    let ab = a[1] * b[1] + a[2] * b[2];
    let aa = a[1] * a[1] + a[2] * a[2];
    let disc = (ab * ab - bb * (aa - r * r)).max(0.0);
    // stable form of (ab + sqrt(disc)) / bb
    if ab >= 0.0 {
        (ab + disc.sqrt()) / bb
    } else {
        let q = disc.sqrt() - ab;
        if q == 0.0 {
            0.0
        } else {
            (r * r - aa) / q
        }
    }
}

impl Domain {
    pub fn slab(l: f64) -> Result<Self> {
        positive("L", l)?;
        Ok(Domain::Slab { l })
    }

    pub fn cylinder(l: f64, r: f64) -> Result<Self> {
        positive("L", l)?;
        positive("R", r)?;
        Ok(Domain::Cylinder { l, r })
    }

    pub fn disk(r: f64) -> Result<Self> {
        positive("R", r)?;
        Ok(Domain::Disk { r })
    }

    /// Signed distance `delta`: positive inside.
    pub fn delta(&self, x: [f64; 3]) -> f64 {
        match self {
            Domain::Slab { l } => l - x[0].abs(),
            Domain::Disk { r } => r - perp_norm(x),
            Domain::Cylinder { l, r } => {
                let da = l - x[0].abs();
                let dr = r - perp_norm(x);
                if da >= 0.0 && dr >= 0.0 {
                    da.min(dr)
                } else if da < 0.0 && dr < 0.0 {
                    -(da * da + dr * dr).sqrt()
                } else {
                    da.min(dr)
                }
            }
            Domain::SignedDistance(s) => s.delta(x),
        }
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        self.delta(x) > 0.0
    }

    /// Panel of a boundary point, choosing the bases at the rim.
    pub fn panel(&self, x: [f64; 3]) -> Panel {
        match self {
            Domain::Slab { .. } => {
                if x[0] < 0.0 {
                    Panel::Lambda1
                } else {
                    Panel::Lambda2
                }
            }
            Domain::Disk { .. } => Panel::Lambda3,
            Domain::Cylinder { l, r } => {
                let da = (l - x[0].abs()).abs();
                let dr = (r - perp_norm(x)).abs();
                if da <= dr {
                    if x[0] < 0.0 {
                        Panel::Lambda1
                    } else {
                        Panel::Lambda2
                    }
                } else {
                    Panel::Lambda3
                }
            }
            Domain::SignedDistance(_) => Panel::Generic,
        }
    }

    /// Outward unit normal at a boundary point.
    pub fn normal(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let lateral = |x: [f64; 3]| -> Result<[f64; 3]> {
            let p = perp_norm(x);
            if p == 0.0 {
                return Err(KineticError::Geometry("normal undefined on the axis".into()));
            }
            Ok([0.0, x[1] / p, x[2] / p])
        };
        match self.panel(x) {
            Panel::Lambda1 => Ok([-1.0, 0.0, 0.0]),
            Panel::Lambda2 => Ok([1.0, 0.0, 0.0]),
            Panel::Lambda3 => lateral(x),
            Panel::Generic => {
                let Domain::SignedDistance(s) = self else {
                    unreachable!("generic panel only for signed-distance domains")
                };
                let g = s.gradient(x);
                let gn = norm3(g);
                if gn == 0.0 {
                    return Err(KineticError::Geometry("vanishing gradient of delta".into()));
                }
                Ok([-g[0] / gn, -g[1] / gn, -g[2] / gn])
            }
        }
    }

    /// `t_exit = inf { s > 0 : x - v s leaves the domain }` with the hit
    /// point, its panel and the sign class of `n . v` there.
    pub fn backward_exit(&self, x: [f64; 3], v: [f64; 3]) -> Result<BoundaryHit> {
        if !x.iter().chain(v.iter()).all(|c| c.is_finite()) {
            return Err(KineticError::NonFinite("backward_exit input".into()));
        }
        if self.delta(x) < 0.0 {
            return Err(KineticError::Geometry(format!("point {x:?} outside {self:?}")));
        }
        if norm3(v) == 0.0 {
            return Ok(BoundaryHit::never());
        }
        let t = match self {
            Domain::Slab { l } => axial_exit(x, v, *l),
            Domain::Disk { r } => lateral_exit(x, v, *r),
            Domain::Cylinder { l, r } => axial_exit(x, v, *l).min(lateral_exit(x, v, *r)),
            Domain::SignedDistance(s) => trace_signed_distance(s.as_ref(), x, v)?,
        };
        if !t.is_finite() {
            return Ok(BoundaryHit::never());
        }
        let mut xh = [x[0] - t * v[0], x[1] - t * v[1], x[2] - t * v[2]];
        let panel = match self {
            Domain::Cylinder { l, r } => {
                let ta = axial_exit(x, v, *l);
                let tl = lateral_exit(x, v, *r);
                if ta <= tl {
                    xh[0] = if v[0] > 0.0 { -l } else { *l };
                    if v[0] > 0.0 {
                        Panel::Lambda1
                    } else {
                        Panel::Lambda2
                    }
                } else {
                    Panel::Lambda3
                }
            }
            Domain::Slab { l } => {
                xh[0] = if v[0] > 0.0 { -l } else { *l };
                self.panel(xh)
            }
            _ => self.panel(xh),
        };
        let n = match panel {
            Panel::Lambda1 => [-1.0, 0.0, 0.0],
            Panel::Lambda2 => [1.0, 0.0, 0.0],
            _ => self.normal(xh)?,
        };
        Ok(BoundaryHit {
            t_exit: t,
            x_hit: Some(xh),
            panel: Some(panel),
            classification: Some(classify(n, v)),
        })
    }

    /// `d^2 / (1 + d^2)` with `d` the distance to the rim of a cylinder;
    /// 1 for every other domain.
    pub fn zeta_s(&self, x: [f64; 3]) -> Result<f64> {
        match self {
            Domain::Cylinder { l, r } => {
                if self.delta(x).abs() > 1e-9 {
                    return Err(KineticError::Geometry(format!("{x:?} is not on the boundary")));
                }
                let p = perp_norm(x) - r;
                let d2 = ((x[0] - l).powi(2) + p * p).min((x[0] + l).powi(2) + p * p);
                Ok(d2 / (1.0 + d2))
            }
            _ => Ok(1.0),
        }
    }

    /// `n_1(x) = (x_1 / L, 0, 0)`.
    pub fn auxiliary_n1(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        match self {
            Domain::Cylinder { l, .. } | Domain::Slab { l } => Ok([x[0] / l, 0.0, 0.0]),
            _ => Err(KineticError::Geometry("n_1 is defined for the cylinder".into())),
        }
    }

    /// Forward free flight with specular bounces on the lateral wall of a
    /// cylinder (or disk), stopping early at a base. Returns the final
    /// position, velocity and the number of lateral bounces.
    pub fn lateral_billiard(
        &self,
        x: [f64; 3],
        v: [f64; 3],
        t_total: f64,
    ) -> Result<([f64; 3], [f64; 3], usize)> {
        let (l, r) = match self {
            Domain::Cylinder { l, r } => (*l, *r),
            Domain::Disk { r } => (f64::INFINITY, *r),
            _ => return Err(KineticError::Geometry("billiard needs a lateral wall".into())),
        };
        let mut x = x;
        let mut v = v;
        let mut left = t_total;
        let mut bounces = 0;
        while left > 0.0 {
            let back = [-v[0], -v[1], -v[2]];
            let tl = lateral_exit(x, back, r);
            let ta = if l.is_finite() { axial_exit(x, back, l) } else { f64::INFINITY };
            let step = tl.min(ta).min(left);
            for a in 0..3 {
                x[a] += step * v[a];
            }
            left -= step;
            if left <= 0.0 || ta <= tl {
                break;
            }
            let n = self.normal([0.0, x[1], x[2]])?;
            v = specular_reflect(n, v)?;
            bounces += 1;
        }
        Ok((x, v, bounces))
    }
}

fn axial_exit(x: [f64; 3], v: [f64; 3], l: f64) -> f64 {
    if v[0] > 0.0 {
        (x[0] + l) / v[0]
    } else if v[0] < 0.0 {
        (x[0] - l) / v[0]
    } else {
        f64::INFINITY
    }
}

/// Sphere tracing along the backward ray, then bisection on the bracket
/// and a few Newton polishing steps on `s -> delta(x - v s)`.
fn trace_signed_distance(s: &dyn SignedDistance, x: [f64; 3], v: [f64; 3]) -> Result<f64> {
    let speed = norm3(v);
    let at = |t: f64| [x[0] - t * v[0], x[1] - t * v[1], x[2] - t * v[2]];
    let cap = s.reach() / speed;
    let min_step = 1e-6 * cap;
    let mut t = 0.0;
    let mut lo = 0.0;
    let mut hi = None;
    for _ in 0..100_000 {
        let d = s.delta(at(t));
        if d < 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
        t += (d / speed).clamp(min_step, cap);
    }
    let Some(mut hi) = hi else {
        return Err(KineticError::Geometry("backward ray did not leave the domain".into()));
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if s.delta(at(mid)) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..4 {
        let g = s.gradient(at(t));
        let dd = -dot3(g, v);
        if dd == 0.0 {
            break;
        }
        let step = s.delta(at(t)) / dd;
        let cand = t - step;
        if cand.is_finite() && (cand - t).abs() < (hi - lo).max(1e-12) * 10.0 {
            t = cand;
        }
    }
    Ok(t)
}

/// Free function form of [`Domain::backward_exit`].
pub fn backward_exit(dom: &Domain, x: [f64; 3], v: [f64; 3]) -> Result<BoundaryHit> {
    dom.backward_exit(x, v)
}

pub fn zeta_s(dom: &Domain, x: [f64; 3]) -> Result<f64> {
    dom.zeta_s(x)
}

pub fn auxiliary_n1(dom: &Domain, x: [f64; 3]) -> Result<[f64; 3]> {
    dom.auxiliary_n1(x)
}

/// Uniform partition of `(-L, L)` into `n` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabMesh {
    pub l: f64,
    pub n_cells: usize,
}

impl SlabMesh {
    pub fn new(l: f64, n_cells: usize) -> Result<Self> {
        positive("L", l)?;
        if n_cells == 0 {
            return Err(KineticError::param("n_cells", "must be positive"));
        }
        Ok(SlabMesh { l, n_cells })
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.n_cells as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n_cells)
            .map(|k| -self.l + (k as f64 + 0.5) * dx)
            .collect()
    }

    pub fn measures(&self) -> Vec<f64> {
        vec![self.dx(); self.n_cells]
    }

    pub fn length(&self) -> f64 {
        2.0 * self.l
    }
}

/// Axial x radial annular cells of a cylinder.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderMesh {
    pub l: f64,
    pub r: f64,
    pub n_axial: usize,
    pub n_radial: usize,
}

impl CylinderMesh {
    pub fn new(l: f64, r: f64, n_axial: usize, n_radial: usize) -> Result<Self> {
        positive("L", l)?;
        positive("R", r)?;
        if n_axial == 0 || n_radial == 0 {
            return Err(KineticError::param("cells", "need at least one cell per direction"));
        }
        Ok(CylinderMesh {
            l,
            r,
            n_axial,
            n_radial,
        })
    }

    /// `(x_1, radius)` centres, axial index major.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let dx = 2.0 * self.l / self.n_axial as f64;
        let dr = self.r / self.n_radial as f64;
        let mut out = Vec::with_capacity(self.n_axial * self.n_radial);
        for a in 0..self.n_axial {
            for k in 0..self.n_radial {
                out.push((-self.l + (a as f64 + 0.5) * dx, (k as f64 + 0.5) * dr));
            }
        }
        out
    }

    pub fn measures(&self) -> Vec<f64> {
        let dx = 2.0 * self.l / self.n_axial as f64;
        let dr = self.r / self.n_radial as f64;
        let mut out = Vec::with_capacity(self.n_axial * self.n_radial);
        for _ in 0..self.n_axial {
            for k in 0..self.n_radial {
                let (r0, r1) = (k as f64 * dr, (k + 1) as f64 * dr);
                out.push(dx * std::f64::consts::PI * (r1 * r1 - r0 * r0));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_exits() {
        let d = Domain::slab(1.0).unwrap();
        let h = d.backward_exit([0.0, 0.3, -2.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(h.t_exit, 1.0);
        assert_eq!(h.panel, Some(Panel::Lambda1));
        assert_eq!(h.classification, Some(Classification::Incoming));
        let h = d.backward_exit([0.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        assert!(h.t_exit.is_infinite());
        let h = d.backward_exit([0.5, 0.0, 0.0], [-2.0, 1.0, 0.0]).unwrap();
        assert!((h.t_exit - 0.25).abs() < 1e-15);
        assert_eq!(h.panel, Some(Panel::Lambda2));
        assert!(d.backward_exit([2.0, 0.0, 0.0], [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn cylinder_lateral_root() {
        let d = Domain::cylinder(1.0, 1.0).unwrap();
        let h = d.backward_exit([0.0, 0.5, 0.0], [0.0, -1.0, 0.0]).unwrap();
        assert!((h.t_exit - 0.5).abs() < 1e-14);
        assert_eq!(h.panel, Some(Panel::Lambda3));
        let xh = h.x_hit.unwrap();
        assert!(d.delta(xh).abs() < 1e-12);
    }

    #[test]
    fn reflection_identities() {
        let r = specular_reflect([1.0, 0.0, 0.0], [1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, [-1.0, 2.0, 3.0]);
        assert!(specular_reflect([1.0, 1.0, 0.0], [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zeta_and_n1() {
        let d = Domain::cylinder(2.0, 1.0).unwrap();
        assert_eq!(d.zeta_s([-2.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((d.zeta_s([-2.0, 0.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(d.zeta_s([0.0, 0.0, 0.0]).is_err());
        assert_eq!(d.auxiliary_n1([-2.0, 0.3, 0.1]).unwrap(), [-1.0, 0.0, 0.0]);
        assert_eq!(Domain::slab(1.0).unwrap().zeta_s([1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(Domain::disk(1.0).unwrap().auxiliary_n1([0.0; 3]).is_err());
    }

    #[test]
    fn ball_tracing() {
        let d = Domain::SignedDistance(Arc::new(Ball { radius: 1.0 }));
        let h = d.backward_exit([0.2, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((h.t_exit - 1.2).abs() < 1e-10);
        assert_eq!(h.panel, Some(Panel::Generic));
        let n = d.normal(h.x_hit.unwrap()).unwrap();
        assert!((n[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn meshes() {
        let m = SlabMesh::new(0.5, 4).unwrap();
        assert_eq!(m.centers(), vec![-0.375, -0.125, 0.125, 0.375]);
        let c = CylinderMesh::new(1.0, 1.0, 2, 3).unwrap();
        let total: f64 = c.measures().iter().sum();
        assert!((total - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
