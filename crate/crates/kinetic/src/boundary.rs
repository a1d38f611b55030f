//! Non-isothermal Maxwell walls.
//!
//! A wall point carries a temperature `Theta = 1 + eps^q vartheta(x)` and an
//! accommodation coefficient `iota(x)`. The reflection operator mixes a
//! specular image of the outgoing trace with re-emission from the wall
//! Maxwellian, scaled by the outgoing mass flux. The wall Maxwellian is
//! renormalised on the lattice so that its incoming half-flux is exactly one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, KineticError, Result};
use crate::geometry::{Domain, Panel};
use crate::numerics::{compensated_sum_by, dot3};
use crate::velocity_space::{bracket, maxwellian, VelocityGrid};

/// Lowest and highest admissible wall temperatures.
pub const THETA_MIN: f64 = 0.875;
pub const THETA_MAX: f64 = 1.125;

/// Spatial profile of the temperature fluctuation `vartheta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaProfile {
    /// Constant on each base; linear in `x_1` on the lateral wall.
    Bases { left: f64, right: f64 },
    /// Axial table `(x_1, vartheta)` with linear interpolation and constant
    /// extension.
    Table { x: Vec<f64>, theta: Vec<f64> },
}

impl ThetaProfile {
    pub fn uniform(t: f64) -> Self {
        ThetaProfile::Bases { left: t, right: t }
    }

    fn sup(&self) -> f64 {
        match self {
            ThetaProfile::Bases { left, right } => left.abs().max(right.abs()),
            ThetaProfile::Table { theta, .. } => theta.iter().fold(0.0f64, |m, t| m.max(t.abs())),
        }
    }

    fn value(&self, x1: f64, l: f64, panel: Panel) -> f64 {
        match self {
            ThetaProfile::Bases { left, right } => match panel {
                Panel::Lambda1 => *left,
                Panel::Lambda2 => *right,
                _ => {
                    let s = ((x1 / l).clamp(-1.0, 1.0) + 1.0) / 2.0;
                    left + s * (right - left)
                }
            },
            ThetaProfile::Table { x, theta } => {
                if x1 <= x[0] {
                    return theta[0];
                }
                for k in 1..x.len() {
                    if x1 <= x[k] {
                        let s = (x1 - x[k - 1]) / (x[k] - x[k - 1]);
                        return theta[k - 1] + s * (theta[k] - theta[k - 1]);
                    }
                }
                *theta.last().expect("non-empty table")
            }
        }
    }
}

/// Accommodation profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum IotaProfile {
    Constant { value: f64 },
    /// Fully diffusive bases, purely specular lateral wall.
    Bases,
}

impl IotaProfile {
    pub fn at(&self, panel: Panel) -> f64 {
        match self {
            IotaProfile::Constant { value } => *value,
            IotaProfile::Bases => match panel {
                Panel::Lambda1 | Panel::Lambda2 => 1.0,
                _ => 0.0,
            },
        }
    }
}

fn default_q() -> f64 {
    WallModel::DEFAULT_Q
}

/// Wall data: temperature and accommodation along the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallModel {
    pub epsilon: f64,
    #[serde(default = "default_q")]
    pub q_exp: f64,
    pub theta0: f64,
    #[serde(rename = "theta_profile")]
    pub theta: ThetaProfile,
    pub iota: IotaProfile,
    #[serde(default)]
    pub iota0: f64,
}

impl WallModel {
    pub const DEFAULT_Q: f64 = 12.0;

    pub fn new(
        epsilon: f64,
        q_exp: f64,
        theta0: f64,
        theta: ThetaProfile,
        iota: IotaProfile,
    ) -> Result<Self> {
        let w = WallModel {
            epsilon,
            q_exp,
            theta0,
            theta,
            iota,
            iota0: 0.0,
        };
        w.validate()?;
        Ok(w)
    }

    /// Two-temperature wall with `vartheta = -t` on the left base and `+t`
    /// on the right base, diffusive bases.
    pub fn two_temperature(epsilon: f64, theta0: f64) -> Result<Self> {
        Self::new(
            epsilon,
            Self::DEFAULT_Q,
            theta0,
            ThetaProfile::Bases {
                left: -theta0,
                right: theta0,
            },
            IotaProfile::Bases,
        )
    }

    /// Direct parameterisation `Theta = 1 + theta(x)`.
    pub fn direct(theta0: f64, theta: ThetaProfile, iota: IotaProfile) -> Result<Self> {
        Self::new(1.0, Self::DEFAULT_Q, theta0, theta, iota)
    }

    /// Isothermal wall.
    pub fn isothermal(iota: IotaProfile) -> Self {
        WallModel {
            epsilon: 1.0,
            q_exp: Self::DEFAULT_Q,
            theta0: 0.0,
            theta: ThetaProfile::uniform(0.0),
            iota,
            iota0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(KineticError::param("epsilon", "must lie in (0, 1]"));
        }
        if !(self.q_exp.is_finite() && self.q_exp > 0.0) {
            return Err(KineticError::param("q_exp", "must be positive"));
        }
        if !(0.0..=0.125).contains(&self.theta0) {
            return Err(KineticError::param(
                "theta0",
                format!("{} exceeds the bound 1/8", self.theta0),
            ));
        }
        if self.theta.sup() > self.theta0 + 1e-15 {
            return Err(KineticError::param(
                "theta_profile",
                format!("sup |vartheta| = {} exceeds theta0 = {}", self.theta.sup(), self.theta0),
            ));
        }
        if let ThetaProfile::Table { x, theta } = &self.theta {
            if x.is_empty() || x.len() != theta.len() || x.windows(2).any(|p| p[1] <= p[0]) {
                return Err(KineticError::param(
                    "theta_profile",
                    "table needs matching, strictly increasing abscissae",
                ));
            }
        }
        if let IotaProfile::Constant { value } = self.iota {
            if !(0.0..=1.0).contains(&value) {
                return Err(KineticError::param("iota", "must lie in [0, 1]"));
            }
            if value < self.iota0 {
                return Err(KineticError::param("iota", "below the lower bound iota0"));
            }
        }
        Ok(())
    }

    /// `eps^q`.
    pub fn amplitude(&self) -> f64 {
        self.epsilon.powf(self.q_exp)
    }

    /// Fluctuation `vartheta(x)` at a boundary point.
    pub fn vartheta(&self, dom: &Domain, x: [f64; 3]) -> f64 {
        let l = match dom {
            Domain::Slab { l } | Domain::Cylinder { l, .. } => *l,
            _ => 1.0,
        };
        self.theta.value(x[0], l, dom.panel(x))
    }

    /// `Theta(x) = 1 + eps^q vartheta(x)`.
    pub fn temperature(&self, dom: &Domain, x: [f64; 3]) -> f64 {
        1.0 + self.amplitude() * self.vartheta(dom, x)
    }

    /// Largest wall temperature `1 + eps^q theta0`.
    pub fn theta_star(&self) -> f64 {
        1.0 + self.amplitude() * self.theta0
    }

    pub fn accommodation(&self, dom: &Domain, x: [f64; 3]) -> f64 {
        self.iota.at(dom.panel(x))
    }

    /// Same wall with a different fluctuation bound and profile scaled to
    /// match.
    pub fn with_theta0(&self, theta0: f64) -> Result<Self> {
        let scale = if self.theta0 > 0.0 { theta0 / self.theta0 } else { 0.0 };
        let theta = match &self.theta {
            ThetaProfile::Bases { left, right } => ThetaProfile::Bases {
                left: left * scale,
                right: right * scale,
            },
            ThetaProfile::Table { x, theta } => ThetaProfile::Table {
                x: x.clone(),
                theta: theta.iter().map(|t| t * scale).collect(),
            },
        };
        let mut w = self.clone();
        w.theta0 = theta0;
        w.theta = theta;
        w.validate()?;
        Ok(w)
    }
}

/// `1 + eps^q vartheta(x)`.
pub fn wall_temperature(w: &WallModel, dom: &Domain, x: [f64; 3]) -> Result<f64> {
    let t = w.temperature(dom, x);
    if !(THETA_MIN..=THETA_MAX).contains(&t) {
        return Err(KineticError::param("theta", format!("wall temperature {t} out of range")));
    }
    Ok(t)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(THETA_MIN..=THETA_MAX).contains(&theta) {
        return Err(KineticError::param(
            "theta",
            format!("wall temperature {theta} outside [7/8, 9/8]"),
        ));
    }
    Ok(())
}

/// Half-space fluxes `(sum_{n.v>0} w f n.v, sum_{n.v<0} w f |n.v|)`.
pub fn half_fluxes(grid: &VelocityGrid, n: [f64; 3], f: &[f64]) -> (f64, f64) {
    let nodes = grid.nodes();
    let w = grid.weights();
    let out = compensated_sum_by(f.len(), |i| {
        let c = dot3(n, nodes[i]);
        if c > 0.0 {
            w[i] * f[i] * c
        } else {
            0.0
        }
    });
    let inc = compensated_sum_by(f.len(), |i| {
        let c = dot3(n, nodes[i]);
        if c < 0.0 {
            -w[i] * f[i] * c
        } else {
            0.0
        }
    });
    (out, inc)
}

/// Analytic `sqrt(2 pi / Theta) M_Theta(v)`, unit half-flux in the continuum.
pub fn wall_maxwellian_analytic(theta: f64, v: [f64; 3]) -> Result<f64> {
    check_theta(theta)?;
    Ok((2.0 * PI / theta).sqrt() * maxwellian(theta, v)?)
}

/// Wall Maxwellian on all nodes, rescaled so its incoming discrete
/// half-flux through a wall with outward normal `n` is exactly one.
pub fn wall_maxwellian(grid: &VelocityGrid, theta: f64, n: [f64; 3]) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let raw: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|v| wall_maxwellian_analytic(theta, *v))
        .collect::<Result<_>>()?;
    let (_, inc) = half_fluxes(grid, n, &raw);
    Ok(raw.into_iter().map(|x| x / inc).collect())
}

/// Precomputed specular map: for axis normals the image of a node is a node.
#[derive(Clone, Debug)]
pub enum SpecularMap {
    Exact(Vec<usize>),
    Interpolated([f64; 3]),
}

impl SpecularMap {
    pub fn new(grid: &VelocityGrid, n: [f64; 3]) -> Self {
        for a in 0..3 {
            let aligned = (n[a].abs() - 1.0).abs() < 1e-14
                && (0..3).all(|b| b == a || n[b].abs() < 1e-14);
            if aligned {
                return SpecularMap::Exact((0..grid.len()).map(|i| grid.mirror_index(i, a)).collect());
            }
        }
        SpecularMap::Interpolated(n)
    }

    /// `gamma(V v_i)` for every node.
    pub fn image(&self, grid: &VelocityGrid, gamma: &[f64]) -> Vec<f64> {
        match self {
            SpecularMap::Exact(map) => map.iter().map(|j| gamma[*j]).collect(),
            SpecularMap::Interpolated(n) => grid
                .nodes()
                .iter()
                .map(|v| {
                    let d = 2.0 * dot3(*n, *v);
                    grid.interpolate(gamma, [v[0] - d * n[0], v[1] - d * n[1], v[2] - d * n[2]])
                })
                .collect(),
        }
    }
}

/// Everything needed to apply the wall operator at one boundary point.
#[derive(Clone, Debug)]
pub struct WallPoint {
    pub x: [f64; 3],
    pub normal: [f64; 3],
    pub panel: Panel,
    pub theta: f64,
    pub iota: f64,
    /// Renormalised wall Maxwellian.
    pub wall_maxwellian: Vec<f64>,
    /// Discrete inflow term `M_Theta <M>_+ - M`.
    pub psi: Vec<f64>,
    pub specular: SpecularMap,
    /// Outgoing / incoming / grazing sign of `n . v_i`.
    pub sign: Vec<i8>,
}

impl WallPoint {
    pub fn new(grid: &VelocityGrid, wall: &WallModel, dom: &Domain, x: [f64; 3]) -> Result<Self> {
        let normal = dom.normal(x)?;
        let theta = wall_temperature(wall, dom, x)?;
        let iota = wall.accommodation(dom, x);
        let mw = wall_maxwellian(grid, theta, normal)?;
        let (m_out, _) = half_fluxes(grid, normal, grid.maxwellian());
        let psi = mw
            .iter()
            .zip(grid.maxwellian())
            .map(|(a, m)| a * m_out - m)
            .collect();
        let sign = grid
            .nodes()
            .iter()
            .map(|v| {
                let c = dot3(normal, *v);
                if c > 0.0 {
                    1
                } else if c < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect();
        Ok(WallPoint {
            x,
            normal,
            panel: dom.panel(x),
            theta,
            iota,
            wall_maxwellian: mw,
            psi,
            specular: SpecularMap::new(grid, normal),
            sign,
        })
    }

    /// Outgoing mass flux of a trace.
    pub fn outgoing_flux(&self, grid: &VelocityGrid, gamma: &[f64]) -> f64 {
        half_fluxes(grid, self.normal, gamma).0
    }

    /// Reflection `R gamma_+ = (1 - iota) S gamma_+ + iota M_Theta <gamma_+>`
    /// on incoming nodes, with `alpha` scaling and optional `iota psi`. The
    /// input only needs to be meaningful on outgoing nodes; the output
    /// holds the incoming values, the outgoing entries are copied through,
    /// and grazing nodes keep their specular image.
    pub fn reflect(&self, grid: &VelocityGrid, gamma: &[f64], alpha: f64, with_psi: bool) -> Vec<f64> {
        let masked: Vec<f64> = gamma
            .iter()
            .zip(&self.sign)
            .map(|(g, s)| if *s > 0 { *g } else { 0.0 })
            .collect();
        let flux = self.outgoing_flux(grid, &masked);
        let spec = self.specular.image(grid, &masked);
        (0..gamma.len())
            .map(|i| match self.sign[i] {
                1 => gamma[i],
                0 => gamma[i],
                _ => {
                    let r = (1.0 - self.iota) * spec[i] + self.iota * self.wall_maxwellian[i] * flux;
                    let p = if with_psi { self.iota * self.psi[i] } else { 0.0 };
                    alpha * r + p
                }
            })
            .collect()
    }
}

/// Incoming trace for the Maxwell condition at `x`.
pub fn apply_maxwell_bc(
    w: &WallModel,
    dom: &Domain,
    grid: &VelocityGrid,
    x: [f64; 3],
    gamma_plus: &[f64],
) -> Result<Vec<f64>> {
    check_len(grid.len(), gamma_plus.len())?;
    let p = WallPoint::new(grid, w, dom, x)?;
    let n = p.normal;
    for (v, g) in grid.nodes().iter().zip(gamma_plus) {
        if dot3(n, *v) > 0.0 && !g.is_finite() {
            return Err(KineticError::NonFinite("outgoing trace".into()));
        }
    }
    Ok(p.reflect(grid, gamma_plus, 1.0, false))
}

/// Discrete inflow term `M_Theta <M>_+ - M`, flux-neutral on the lattice.
pub fn inflow_psi(w: &WallModel, dom: &Domain, grid: &VelocityGrid, x: [f64; 3]) -> Result<Vec<f64>> {
    Ok(WallPoint::new(grid, w, dom, x)?.psi)
}

/// Analytic inflow `Theta^{-1/2} M_Theta - M`.
pub fn inflow_psi_analytic(w: &WallModel, dom: &Domain, grid: &VelocityGrid, x: [f64; 3]) -> Result<Vec<f64>> {
    let t = wall_temperature(w, dom, x)?;
    grid.nodes()
        .iter()
        .map(|v| Ok(t.powf(-0.5) * maxwellian(t, *v)? - maxwellian(1.0, *v)?))
        .collect()
}

/// `|outgoing flux - incoming flux|` of a full trace at each wall point.
pub fn boundary_flux_residual(
    grid: &VelocityGrid,
    points: &[WallPoint],
    traces: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_len(points.len(), traces.len())?;
    points
        .iter()
        .zip(traces)
        .map(|(p, t)| {
            check_len(grid.len(), t.len())?;
            let (o, i) = half_fluxes(grid, p.normal, t);
            Ok((o - i).abs())
        })
        .collect()
}

/// `max |psi| / (theta0 eps^q max_v <v>^2 exp(-|v|^2 / (2 Theta^*)))`.
pub fn psi_bound_ratio(w: &WallModel, grid: &VelocityGrid, psi: &[f64]) -> Result<f64> {
    check_len(grid.len(), psi.len())?;
    let ts = w.theta_star();
    let envelope = grid
        .nodes()
        .iter()
        .fold(0.0f64, |m, v| m.max(bracket(*v).powi(2) * (-dot3(*v, *v) / (2.0 * ts)).exp()));
    let num = psi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let den = w.theta0 * w.amplitude() * envelope;
    if den == 0.0 {
        return Err(KineticError::Singular("psi bound needs theta0 > 0".into()));
    }
    Ok(num / den)
}
