//! Run configuration: JSON schema, defaults, resolution and static checks.

use std::path::{Path, PathBuf};

use ness_kinetic::boundary::{IotaProfile, ThetaProfile, WallModel};
use ness_kinetic::geometry::Domain;
use ness_kinetic::hypocoercivity::{AuditSettings, MIN_EQUIVALENCE_SAMPLES};
use ness_kinetic::sampling::SampleKind;
use ness_kinetic::steady::SteadyConfig;
use ness_kinetic::transport::{CollisionMode, Frame, SolverConfig};
use ness_kinetic::velocity_space::WeightSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Evolve,
    Ness,
    NessScaling,
    HypoAudit,
    ConservationAudit,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Evolve => "evolve",
            Scenario::Ness => "ness",
            Scenario::NessScaling => "ness-scaling",
            Scenario::HypoAudit => "hypo-audit",
            Scenario::ConservationAudit => "conservation-audit",
        }
    }

    fn uses_transport(self) -> bool {
        matches!(self, Scenario::Evolve | Scenario::Ness | Scenario::NessScaling)
    }
}

fn default_l() -> f64 {
    1.0
}

fn default_cells() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometryBlock {
    Slab {
        #[serde(rename = "L", default = "default_l")]
        l: f64,
        #[serde(default = "default_cells")]
        cells: usize,
    },
    Cylinder {
        #[serde(rename = "L", default = "default_l")]
        l: f64,
        #[serde(rename = "R")]
        r: f64,
        #[serde(default = "default_cells")]
        cells: usize,
    },
}

impl Default for GeometryBlock {
    fn default() -> Self {
        GeometryBlock::Slab {
            l: default_l(),
            cells: default_cells(),
        }
    }
}

impl GeometryBlock {
    pub fn half_length(&self) -> f64 {
        match self {
            GeometryBlock::Slab { l, .. } | GeometryBlock::Cylinder { l, .. } => *l,
        }
    }

    pub fn cells(&self) -> usize {
        match self {
            GeometryBlock::Slab { cells, .. } | GeometryBlock::Cylinder { cells, .. } => *cells,
        }
    }

    pub fn domain(&self) -> ness_kinetic::Result<Domain> {
        match self {
            GeometryBlock::Slab { l, .. } => Domain::slab(*l),
            GeometryBlock::Cylinder { l, r, .. } => Domain::cylinder(*l, *r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub n_per_axis: usize,
    pub v_max: f64,
    /// Polar and azimuthal sizes of the collision sphere rule.
    pub n_polar: usize,
    pub n_azimuth: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock {
            n_per_axis: 16,
            v_max: 6.0,
            n_polar: 8,
            n_azimuth: 16,
        }
    }
}

/// Wall data. Missing `theta0` and `theta_profile` are filled in by
/// [`RunConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WallBlock {
    pub epsilon: f64,
    pub q_exp: f64,
    pub theta0: Option<f64>,
    pub theta_profile: Option<ThetaProfile>,
    pub iota: IotaProfile,
    pub iota0: f64,
}

impl Default for WallBlock {
    fn default() -> Self {
        WallBlock {
            epsilon: 1.0,
            q_exp: WallModel::DEFAULT_Q,
            theta0: None,
            theta_profile: None,
            iota: IotaProfile::Bases,
            iota0: 0.0,
        }
    }
}

pub const DEFAULT_THETA0: f64 = 0.02;

impl WallBlock {
    pub fn theta0(&self) -> f64 {
        self.theta0.unwrap_or(DEFAULT_THETA0)
    }

    pub fn model(&self) -> ness_kinetic::Result<WallModel> {
        let t = self.theta0();
        let profile = self.theta_profile.clone().unwrap_or(ThetaProfile::Bases { left: -t, right: t });
        let mut w = WallModel::new(self.epsilon, self.q_exp, t, profile, self.iota)?;
        w.iota0 = self.iota0;
        w.validate()?;
        Ok(w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightBlock {
    pub zeta: f64,
}

impl Default for WeightBlock {
    fn default() -> Self {
        WeightBlock {
            zeta: WeightSpec::DEFAULT_ZETA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub dt: f64,
    /// Final time of `evolve`.
    #[serde(rename = "T")]
    pub t_end: f64,
    pub frame: Frame,
    pub alpha_schedule: Vec<f64>,
    pub picard_tol: f64,
    pub max_inner: usize,
    pub collisions: CollisionMode,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let s = SolverConfig::new(0.05);
        SolverBlock {
            dt: s.dt,
            t_end: 5.0,
            frame: s.frame,
            alpha_schedule: s.alpha_schedule,
            picard_tol: s.picard_tol,
            max_inner: s.max_inner,
            collisions: s.collisions,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolveMode {
    /// Linearized equation with the inflow source.
    Linear,
    /// Perturbation of the steady state under the full nonlinear equation.
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveBlock {
    pub mode: EvolveMode,
    /// Steps between field snapshots; 0 keeps only the first and last.
    pub snapshot_every: usize,
    /// Steps between rows of the decay series.
    pub record_every: usize,
    /// `L^inf_omega` size of the initial perturbation.
    pub perturbation: f64,
    pub kind: SampleKind,
}

impl Default for EvolveBlock {
    fn default() -> Self {
        EvolveBlock {
            mode: EvolveMode::Linear,
            snapshot_every: 0,
            record_every: 1,
            perturbation: 1e-2,
            kind: SampleKind::Mixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingBlock {
    pub theta0_list: Vec<f64>,
}

impl Default for ScalingBlock {
    fn default() -> Self {
        ScalingBlock {
            theta0_list: vec![0.01, 0.02, 0.04],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConservationBlock {
    pub samples: usize,
    /// Bound on the relative moment defect of `Q` and `C`.
    pub moment_threshold: f64,
    /// Bound on the net wall flux of a reflected trace.
    pub flux_threshold: f64,
}

impl Default for ConservationBlock {
    fn default() -> Self {
        ConservationBlock {
            samples: 20,
            moment_threshold: 1e-12,
            flux_threshold: 1e-10,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    2024
}

/// Full run configuration. Every block except `scenario` has defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed of every sampled quantity; it overrides the seeds of the
    /// `steady` and `audit` blocks.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub wall: WallBlock,
    #[serde(default)]
    pub weight: WeightBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub steady: SteadyConfig,
    #[serde(default)]
    pub evolve: EvolveBlock,
    #[serde(default)]
    pub scaling: ScalingBlock,
    #[serde(default)]
    pub audit: AuditSettings,
    #[serde(default)]
    pub conservation: ConservationBlock,
}

/// Parse failure carrying the JSON path of the offending key.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config at `{key}`: {message}")]
    Parse { key: String, message: String },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Read { .. } => None,
            ConfigError::Parse { key, .. } => Some(key),
        }
    }
}

/// One static finding of [`RunConfig::diagnostics`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub key: String,
    pub message: String,
}

impl Diagnostic {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            // a missing key is reported at its parent; name it directly
            let message = inner.to_string();
            let named = message.strip_prefix("missing field `").and_then(|r| r.split('`').next());
            let key = match named {
                Some(k) if path == "." => k.to_string(),
                Some(k) => format!("{path}.{k}"),
                None => path,
            };
            ConfigError::Parse { key, message }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Copy with every implicit value made explicit, as echoed in reports.
    pub fn resolve(&self) -> Self {
        let mut c = self.clone();
        let t = c.wall.theta0();
        c.wall.theta0 = Some(t);
        if c.wall.theta_profile.is_none() {
            c.wall.theta_profile = Some(ThetaProfile::Bases { left: -t, right: t });
        }
        c.steady.seed = c.seed;
        c.audit.seed = c.seed;
        c
    }

    pub fn weight_spec(&self) -> WeightSpec {
        WeightSpec {
            zeta: self.weight.zeta,
            theta0: self.wall.theta0(),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            dt: s.dt,
            epsilon: self.wall.epsilon,
            frame: s.frame,
            alpha_schedule: s.alpha_schedule.clone(),
            picard_tol: s.picard_tol,
            max_inner: s.max_inner,
            collisions: s.collisions,
            boundary: ness_kinetic::transport::BoundaryMode::Maxwell,
            weight: self.weight_spec(),
        }
    }

    /// Static checks: ranges, the admissible `zeta` window and the step
    /// size guard. Nothing is computed.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |k: &str, m: String| out.push(Diagnostic::new(k, m));

        let g = &self.grid;
        if g.n_per_axis < 2 {
            push("grid.n_per_axis", format!("{} is below 2", g.n_per_axis));
        }
        if !(g.v_max.is_finite() && g.v_max > 0.0) {
            push("grid.v_max", format!("{} is not positive", g.v_max));
        }
        if g.n_polar == 0 || g.n_azimuth == 0 {
            push("grid.n_polar", "angular rule sizes must be positive".into());
        }

        let geo = &self.geometry;
        if !(geo.half_length().is_finite() && geo.half_length() > 0.0) {
            push("geometry.L", format!("{} is not positive", geo.half_length()));
        }
        if geo.cells() < 2 {
            push("geometry.cells", format!("{} is below 2", geo.cells()));
        }
        if let GeometryBlock::Cylinder { r, .. } = geo {
            if !(r.is_finite() && *r > 0.0) {
                push("geometry.R", format!("{r} is not positive"));
            }
            if self.scenario.uses_transport() {
                push("geometry.type", format!("scenario {} runs on the slab only", self.scenario.name()));
            }
        }

        let w = &self.wall;
        if !(w.epsilon > 0.0 && w.epsilon <= 1.0) {
            push("wall.epsilon", format!("{} is outside (0, 1]", w.epsilon));
        }
        if !(w.q_exp.is_finite() && w.q_exp > 0.0) {
            push("wall.q_exp", format!("{} is not positive", w.q_exp));
        }
        let t0 = w.theta0();
        if !t0.is_finite() || t0 < 0.0 {
            push("wall.theta0", format!("{t0} is negative"));
        } else if t0 > WeightSpec::THETA0_MAX {
            push("wall.theta0", format!("{t0} exceeds 1/8"));
        }
        match &w.theta_profile {
            Some(ThetaProfile::Bases { left, right }) => {
                let sup = left.abs().max(right.abs());
                if sup > t0 + 1e-15 {
                    push("wall.theta_profile", format!("sup |vartheta| = {sup} exceeds theta0 = {t0}"));
                }
            }
            Some(ThetaProfile::Table { x, theta }) => {
                if x.is_empty() || x.len() != theta.len() || x.windows(2).any(|p| p[1] <= p[0]) {
                    push("wall.theta_profile", "table needs matching, strictly increasing abscissae".into());
                }
                let sup = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
                if sup > t0 + 1e-15 {
                    push("wall.theta_profile", format!("sup |vartheta| = {sup} exceeds theta0 = {t0}"));
                }
            }
            None => {}
        }
        if let IotaProfile::Constant { value } = w.iota {
            if !(0.0..=1.0).contains(&value) {
                push("wall.iota", format!("{value} is outside [0, 1]"));
            } else if value < w.iota0 {
                push("wall.iota", format!("{value} is below iota0 = {}", w.iota0));
            }
        }

        let z = self.weight.zeta;
        let (lo, hi) = WeightSpec::window(t0.clamp(0.0, 0.999));
        if !(z > lo) {
            push("weight.zeta", format!("zeta = {z} <= 1/(4(1-theta0)) = {lo:.4}, inadmissible"));
        } else if !(z < hi) {
            push("weight.zeta", format!("zeta = {z} >= 1/(2(1+theta0)) = {hi:.4}, inadmissible"));
        }

        let s = &self.solver;
        let dt_ok = s.dt.is_finite() && s.dt > 0.0;
        if !dt_ok {
            push("solver.dt", format!("{} is not positive", s.dt));
        }
        if !(s.t_end.is_finite() && s.t_end >= 0.0) {
            push("solver.T", format!("{} is negative", s.t_end));
        } else if dt_ok && self.scenario == Scenario::Evolve {
            let k = (s.t_end / s.dt).round();
            if (k * s.dt - s.t_end).abs() > 1e-9 * s.t_end.max(1.0) {
                push("solver.T", format!("{} is not a whole number of steps of dt = {}", s.t_end, s.dt));
            }
        }
        if s.alpha_schedule.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || s.alpha_schedule.windows(2).any(|p| p[1] <= p[0]) {
            push("solver.alpha_schedule", "entries must be strictly increasing inside (0, 1)".into());
        }
        if !(s.picard_tol > 0.0) {
            push("solver.picard_tol", format!("{} is not positive", s.picard_tol));
        }
        if s.max_inner == 0 {
            push("solver.max_inner", "must be positive".into());
        }
        if dt_ok && w.epsilon > 0.0 && g.v_max > 0.0 {
            // fastest characteristic against the slab width, as the stepper checks
            let (stream, _) = self.solver_config().step_scales();
            let reach = g.v_max * stream;
            let width = 2.0 * geo.half_length();
            if reach >= width {
                push(
                    "solver.dt",
                    format!("fastest characteristic streams {reach:.3} per step across a slab of width {width:.3}; it would hit both walls"),
                );
            }
        }

        if let Err(e) = self.steady.validate() {
            push("steady", e.to_string());
        }
        if self.evolve.record_every == 0 {
            push("evolve.record_every", "must be positive".into());
        }
        if !(self.evolve.perturbation.is_finite() && self.evolve.perturbation > 0.0) {
            push("evolve.perturbation", format!("{} is not positive", self.evolve.perturbation));
        }

        let list = &self.scaling.theta0_list;
        if self.scenario == Scenario::NessScaling && list.len() < 2 {
            push("scaling.theta0_list", "need at least two values".into());
        }
        if list.iter().any(|t| !(*t > 0.0 && *t <= WeightSpec::THETA0_MAX)) {
            push("scaling.theta0_list", "entries must lie in (0, 1/8]".into());
        }

        let a = &self.audit;
        if a.nx < 2 || a.ny < 2 {
            push("audit.nx", "the audit mesh needs at least 2 x 2 cells".into());
        }
        if a.samples < MIN_EQUIVALENCE_SAMPLES {
            push("audit.samples", format!("{} is below the minimum of {MIN_EQUIVALENCE_SAMPLES}", a.samples));
        }
        if !(a.lx > 0.0 && a.ly > 0.0) {
            push("audit.lx", "box sides must be positive".into());
        }
        if a.theta0.iter().any(|t| !(*t >= 0.0 && *t <= WeightSpec::THETA0_MAX)) {
            push("audit.theta0", "entries must lie in [0, 1/8]".into());
        }

        let c = &self.conservation;
        if c.samples == 0 {
            push("conservation.samples", "must be positive".into());
        }
        if !(c.moment_threshold > 0.0 && c.flux_threshold > 0.0) {
            push("conservation.moment_threshold", "thresholds must be positive".into());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> RunConfig {
        RunConfig::from_json(&format!(r#"{{"scenario": "ness"{extra}}}"#)).unwrap()
    }

    #[test]
    fn defaults_are_clean() {
        for s in ["evolve", "ness", "ness-scaling", "hypo-audit", "conservation-audit"] {
            let c = RunConfig::from_json(&format!(r#"{{"scenario": "{s}"}}"#)).unwrap();
            assert!(c.diagnostics().is_empty(), "{s}: {:?}", c.diagnostics());
        }
    }

    #[test]
    fn zeta_above_the_window() {
        let d = cfg(r#", "wall": {"theta0": 0.1}, "weight": {"zeta": 0.6}"#).diagnostics();
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].key, "weight.zeta");
        assert!(d[0].message.contains("0.4545") && d[0].message.contains("inadmissible"));
    }

    #[test]
    fn theta0_above_one_eighth() {
        let d = cfg(r#", "wall": {"theta0": 0.2}"#).diagnostics();
        assert!(d.iter().any(|x| x.key == "wall.theta0" && x.message.contains("1/8")), "{d:?}");
    }

    #[test]
    fn step_guard() {
        let d = cfg(r#", "solver": {"dt": 0.5}"#).diagnostics();
        assert!(d.iter().any(|x| x.key == "solver.dt"), "{d:?}");
    }

    #[test]
    fn parse_errors_name_the_key() {
        let e = RunConfig::from_json(r#"{"scenario": "ness", "grid": {"n_per_axis": "x"}}"#).unwrap_err();
        assert_eq!(e.key(), Some("grid.n_per_axis"));
        let e = RunConfig::from_json(r#"{"scenario": "ness", "wall": {"thta0": 0.1}}"#).unwrap_err();
        assert_eq!(e.key(), Some("wall.thta0"));
        let e = RunConfig::from_json(r#"{"scenario": "relax"}"#).unwrap_err();
        assert_eq!(e.key(), Some("scenario"));
        let e = RunConfig::from_json("{}").unwrap_err();
        assert_eq!(e.key(), Some("scenario"));
    }

    #[test]
    fn resolution_fills_the_wall() {
        let r = cfg("").resolve();
        assert_eq!(r.wall.theta0, Some(DEFAULT_THETA0));
        assert_eq!(r.wall.theta_profile, Some(ThetaProfile::Bases { left: -0.02, right: 0.02 }));
        let again = RunConfig::from_json(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(again, r);
    }
}
