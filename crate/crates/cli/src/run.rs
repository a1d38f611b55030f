//! Scenario runners. Each writes `report.json`, `series.csv` and a
//! `snapshots/` directory under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ness_kinetic::boundary::WallPoint;
use ness_kinetic::collision::{moments_of, AngularRule, CollisionQ, LinearizedOperator};
use ness_kinetic::geometry::Domain;
use ness_kinetic::hypocoercivity::{run_audit, AuditReport};
use ness_kinetic::sampling::{random_field, random_macro_velocity, random_micro_velocity, remove_mass};
use ness_kinetic::steady::{solve_ness, ScalingRow, ScalingTable, SteadyReport};
use ness_kinetic::transport::SlabStepper;
use ness_kinetic::velocity_space::{bracket, build_grid, write_snapshot, DistributionField, SnapshotMeta, VelocityGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{EvolveMode, RunConfig, Scenario};

/// Environment variable holding the worker count of parallel sweeps.
pub const THREADS_ENV: &str = "NESS_THREADS";

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    /// Fully resolved configuration.
    pub config: RunConfig,
    pub metrics: Value,
    /// `Some(false)` when an audit finds a value over its threshold.
    pub passed: Option<bool>,
    pub threads: usize,
    /// Output files relative to the output directory.
    pub files: Vec<String>,
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => {
            let n: usize = s.trim().parse().with_context(|| format!("{THREADS_ENV}={s:?} is not a count"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be positive");
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

struct Setup {
    cfg: RunConfig,
    grid: Arc<VelocityGrid>,
    op: Arc<LinearizedOperator>,
    out: PathBuf,
    files: Vec<String>,
}

impl Setup {
    fn collision_q(&self) -> Result<CollisionQ> {
        let rule = AngularRule::product(self.cfg.grid.n_polar, self.cfg.grid.n_azimuth)?;
        Ok(CollisionQ::new(self.grid.clone(), rule, self.op.projector().clone())?)
    }

    fn domain(&self) -> Result<Domain> {
        Ok(self.cfg.geometry.domain()?)
    }

    fn stepper_for(&self, wall: &ness_kinetic::boundary::WallModel) -> Result<SlabStepper> {
        let dom = self.domain()?;
        Ok(SlabStepper::new(&self.cfg.solver_config(), &dom, wall, self.op.clone(), self.cfg.geometry.cells())?)
    }

    fn stepper(&self) -> Result<SlabStepper> {
        self.stepper_for(&self.cfg.wall.model()?)
    }

    fn file(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.out.join(rel)
    }

    fn snapshot(&mut self, name: &str, f: &DistributionField, time: Option<f64>, label: &str) -> Result<()> {
        let path = self.file(&format!("snapshots/{name}.csv"));
        self.files.push(format!("snapshots/{name}.json"));
        let geometry = serde_json::to_value(&self.cfg.geometry)?;
        let w = &self.cfg.wall;
        let mut meta = SnapshotMeta::new(f, geometry, w.epsilon, w.q_exp, w.theta0());
        meta.time = time;
        meta.field = label.to_string();
        write_snapshot(f, &meta, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn csv(&mut self) -> Result<csv::Writer<fs::File>> {
        let path = self.file("series.csv");
        Ok(csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?)
    }
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

/// Runs the configured scenario after the static checks pass.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let cfg = config.resolve();
    let diags = cfg.diagnostics();
    if let Some(d) = diags.first() {
        bail!("invalid config at `{}`: {} ({} finding(s) in total)", d.key, d.message, diags.len());
    }
    let threads = thread_count()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(out.join("snapshots")).with_context(|| format!("creating {}", out.display()))?;
    let grid = Arc::new(build_grid(cfg.grid.n_per_axis, cfg.grid.v_max)?);
    let op = Arc::new(LinearizedOperator::new(grid.clone()));
    let mut s = Setup {
        cfg: cfg.clone(),
        grid,
        op,
        out,
        files: Vec::new(),
    };
    let (metrics, passed) = match cfg.scenario {
        Scenario::Evolve => evolve(&mut s)?,
        Scenario::Ness => ness(&mut s)?,
        Scenario::NessScaling => ness_scaling(&mut s, threads)?,
        Scenario::HypoAudit => hypo_audit(&mut s)?,
        Scenario::ConservationAudit => conservation_audit(&mut s)?,
    };
    s.files.push("report.json".into());
    let report = RunReport {
        scenario: cfg.scenario,
        config: cfg,
        metrics,
        passed,
        threads,
        files: s.files,
    };
    let path = s.out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(report)
}

/// Zero-mass perturbation with one smooth spatial mode, scaled to the
/// requested `L^inf_omega` size.
fn perturbation(s: &Setup, st: &SlabStepper) -> Result<DistributionField> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    let n = st.n_cells();
    let meas = st.zeros().cell_measure().to_vec();
    let mode: Vec<f64> = (0..n).map(|c| (std::f64::consts::PI * (c as f64 + 0.5) / n as f64).cos() + 0.5).collect();
    let mut d = random_field(&s.grid, s.op.projector(), &meas, &[mode], s.cfg.evolve.kind, &mut rng)?;
    remove_mass(&mut d);
    let size = d.norm_linf_omega(&s.cfg.weight_spec());
    if !(size > 0.0) {
        bail!("sampled perturbation vanished");
    }
    d.scale(s.cfg.evolve.perturbation / size);
    Ok(d)
}

fn solve_steady(s: &Setup, st: &SlabStepper, q: &CollisionQ) -> Result<SteadyReport> {
    solve_ness(st, q, &s.cfg.steady, None).context("steady solve")
}

fn evolve(s: &mut Setup) -> Result<(Value, Option<bool>)> {
    let st = s.stepper()?;
    let f0 = perturbation(s, &st)?;
    let e = s.cfg.evolve.clone();
    let t_end = s.cfg.solver.t_end;
    let steps = (t_end / s.cfg.solver.dt).round() as usize;
    s.snapshot("step_000000", &f0, Some(0.0), "perturbation")?;
    let mut shots: Vec<(usize, f64, DistributionField)> = Vec::new();
    let mut keep = |k: usize, t: f64, f: &DistributionField| {
        if (e.snapshot_every > 0 && k % e.snapshot_every == 0) || k == steps {
            shots.push((k, t, f.clone()));
        }
        Ok(())
    };
    let mut extra = json!({});
    let (_, series) = match e.mode {
        EvolveMode::Linear => st.evolve_linear_observed(&f0, None, t_end, e.record_every, &mut keep)?,
        EvolveMode::Nonlinear => {
            let q = s.collision_q()?;
            let r = solve_steady(s, &st, &q)?;
            extra = json!({"ness_residual": r.residual, "ness_distance": r.distance_to_maxwellian});
            st.evolve_nonlinear_observed(&q, &f0, &r.field, t_end, e.record_every, &mut keep)?
        }
    };
    for (k, t, f) in &shots {
        s.snapshot(&format!("step_{k:06}"), f, Some(*t), "perturbation")?;
    }
    let path = s.file("series.csv");
    series.write_csv(fs::File::create(&path)?)?;
    let mass_drift = series.masses.iter().fold(0.0f64, |m, x| m.max((x - series.masses[0]).abs()));
    let mut metrics = json!({
        "mode": e.mode,
        "steps": steps,
        "fitted_rate": series.fitted_rate,
        "fit_r2": series.fit_r2,
        "norm_h_initial": series.norms_h.first(),
        "norm_h_final": series.norms_h.last(),
        "norm_linf_initial": series.norms_linf.first(),
        "norm_linf_final": series.norms_linf.last(),
        "mass_drift": mass_drift,
        "boundary_contraction": series.boundary_contraction,
    });
    if let (Value::Object(m), Value::Object(x)) = (&mut metrics, extra) {
        m.extend(x);
    }
    Ok((metrics, None))
}

fn ness(s: &mut Setup) -> Result<(Value, Option<bool>)> {
    let st = s.stepper()?;
    let q = s.collision_q()?;
    let r = solve_steady(s, &st, &q)?;
    s.snapshot("ness", &r.field, None, "F - M")?;
    let mut w = s.csv()?;
    w.write_record(["iteration", "increment", "contraction_factor"])?;
    for (k, inc) in r.increments.iter().enumerate() {
        // factor k relates increment k + 1 to increment k
        let factor = if k == 0 { String::new() } else { r.contraction_factors.get(k - 1).map(|f| num(*f)).unwrap_or_default() };
        w.write_record([(k + 1).to_string(), num(*inc), factor])?;
    }
    w.flush()?;
    Ok((serde_json::to_value(r.summary()?)?, None))
}

fn ness_scaling(s: &mut Setup, threads: usize) -> Result<(Value, Option<bool>)> {
    let template = s.cfg.wall.model()?;
    let list = s.cfg.scaling.theta0_list.clone();
    let q = s.collision_q()?;
    let setup = &*s;
    let mut rows: Vec<Option<Result<ScalingRow>>> = (0..list.len()).map(|_| None).collect();
    // independent solves; each row is computed by one worker, so the
    // output does not depend on the worker count
    for (chunk_rows, chunk_t) in rows.chunks_mut(threads).zip(list.chunks(threads)) {
        std::thread::scope(|sc| {
            for (slot, &t) in chunk_rows.iter_mut().zip(chunk_t) {
                let (template, q) = (&template, &q);
                sc.spawn(move || {
                    let row = (|| {
                        let st = setup.stepper_for(&template.with_theta0(t)?)?;
                        let r = solve_steady(setup, &st, q).with_context(|| format!("theta0 = {t}"))?;
                        Ok(ScalingRow::from_report(t, r))
                    })();
                    *slot = Some(row);
                });
            }
        });
    }
    let rows: Vec<ScalingRow> = rows.into_iter().map(|r| r.expect("every slot filled")).collect::<Result<_>>()?;
    let table = ScalingTable::from_rows(rows);
    let mut w = s.csv()?;
    w.write_record(["theta0", "distance", "residual", "iterations"])?;
    for r in &table.rows {
        w.write_record([num(r.theta0), num(r.distance), num(r.residual), r.iterations.to_string()])?;
    }
    w.flush()?;
    Ok((serde_json::to_value(&table)?, None))
}

fn hypo_audit(s: &mut Setup) -> Result<(Value, Option<bool>)> {
    let settings = s.cfg.audit.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let r: AuditReport = run_audit(&s.op, &settings, &mut rng)?;
    let mut w = s.csv()?;
    let mut head = vec!["sample".to_string(), "kind".into(), "ratio".into(), "rayleigh_isothermal".into()];
    for t in &r.theta0 {
        head.push(format!("rayleigh_theta0_{t}"));
    }
    w.write_record(&head)?;
    for row in &r.rows {
        let kind = serde_json::to_value(row.kind)?.as_str().unwrap_or_default().to_string();
        let mut rec = vec![row.sample.to_string(), kind, num(row.ratio), num(row.rayleigh_isothermal)];
        rec.extend(row.rayleigh.iter().map(|x| num(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let passed = r.bound_holds;
    Ok((serde_json::to_value(&r)?, Some(passed)))
}

/// `max |moment| / sum w |f| <v>^2` over density, momentum and energy.
fn moment_defect(grid: &VelocityGrid, f: &[f64]) -> Result<f64> {
    let m = moments_of(grid, f)?;
    let mut worst = m.rho.abs().max(m.energy.abs());
    for x in m.mu {
        worst = worst.max(x.abs());
    }
    let scale: f64 = f.iter().zip(grid.weights()).zip(grid.nodes()).map(|((x, w), v)| w * x.abs() * bracket(*v).powi(2)).sum();
    Ok(worst / scale.max(f64::MIN_POSITIVE))
}

fn conservation_audit(s: &mut Setup) -> Result<(Value, Option<bool>)> {
    let c = s.cfg.conservation.clone();
    let q = s.collision_q()?;
    let dom = s.domain()?;
    let wall = s.cfg.wall.model()?;
    let l = s.cfg.geometry.half_length();
    let mut points = vec![[-l, 0.0, 0.0], [l, 0.0, 0.0]];
    if let Domain::Cylinder { r, .. } = dom {
        points.push([0.0, r, 0.0]);
    }
    let walls: Vec<WallPoint> = points.iter().map(|x| WallPoint::new(&s.grid, &wall, &dom, *x)).collect::<ness_kinetic::Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.cfg.seed);
    let grid = s.grid.clone();
    let profile = |rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let mut p = random_macro_velocity(&grid, rng);
        let m = random_micro_velocity(&grid, s.op.projector(), rng)?;
        p.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        Ok(p)
    };
    let mut rows = Vec::with_capacity(c.samples);
    for k in 0..c.samples {
        let g = profile(&mut rng)?;
        let dq = moment_defect(&grid, &q.apply(&g, &g)?)?;
        let dc = moment_defect(&grid, &s.op.apply_c(&g)?)?;
        let h = profile(&mut rng)?;
        let trace: Vec<f64> = h.iter().zip(grid.maxwellian()).map(|(a, m)| m + 0.3 * a).collect();
        let (mut plain, mut with_psi) = (0.0f64, 0.0f64);
        for p in &walls {
            for (psi, acc) in [(false, &mut plain), (true, &mut with_psi)] {
                let full = p.reflect(&grid, &trace, 1.0, psi);
                let (o, i) = ness_kinetic::boundary::half_fluxes(&grid, p.normal, &full);
                *acc = acc.max((o - i).abs() / o.abs().max(f64::MIN_POSITIVE));
            }
        }
        rows.push((k, dq, dc, plain, with_psi));
    }
    let mut w = s.csv()?;
    w.write_record(["sample", "q_moment_defect", "c_moment_defect", "wall_flux", "wall_flux_with_psi"])?;
    for (k, a, b, x, y) in &rows {
        w.write_record([k.to_string(), num(*a), num(*b), num(*x), num(*y)])?;
    }
    w.flush()?;
    let worst = |f: fn(&(usize, f64, f64, f64, f64)) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    let (wq, wc, wf, wp) = (worst(|r| r.1), worst(|r| r.2), worst(|r| r.3), worst(|r| r.4));
    let passed = wq <= c.moment_threshold && wc <= c.moment_threshold && wf <= c.flux_threshold && wp <= c.flux_threshold;
    Ok((
        json!({
            "samples": c.samples,
            "q_moment_defect": wq,
            "c_moment_defect": wc,
            "wall_flux": wf,
            "wall_flux_with_psi": wp,
            "moment_threshold": c.moment_threshold,
            "flux_threshold": c.flux_threshold,
        }),
        Some(passed),
    ))
}

/// Reads and runs the config at `path`.
pub fn run_path(path: &Path) -> Result<RunReport> {
    let cfg = RunConfig::load(path)?;
    run(&cfg)
}
