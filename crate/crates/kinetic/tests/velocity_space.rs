use std::sync::Arc;

use ness_kinetic::velocity_space::*;
use proptest::prelude::*;

fn grid() -> Arc<VelocityGrid> {
    Arc::new(build_grid(16, 6.0).unwrap())
}

#[test]
fn lattice_maxwellian_moments() {
    let g = grid();
    let m = g.maxwellian();
    let mass = g.integrate(m).unwrap();
    // the only loss is the Gaussian tail beyond v_max = 6, about 1.5e-8
    assert!((mass - 1.0).abs() < 2e-8, "{mass}");
    let e = g.integrate_fn(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) * maxwellian(1.0, v).unwrap());
    assert!((e - 3.0).abs() < 1e-6, "{e}");
    // a hotter Maxwellian keeps unit mass
    assert!((g.integrate_fn(|v| maxwellian(1.125, v).unwrap()) - 1.0).abs() < 1e-6);
}

#[test]
fn weight_window_contains_the_default_and_rejects_the_edges() {
    for k in 0..=25 {
        let t = 0.125 * k as f64 / 25.0;
        assert!(WeightSpec::new(WeightSpec::DEFAULT_ZETA, t).is_ok(), "theta0 {t}");
        let (lo, hi) = WeightSpec::window(t);
        assert!(WeightSpec::new(lo, t).is_err() && WeightSpec::new(hi, t).is_err());
    }
    assert!(WeightSpec::new(0.4, 0.13).is_err());
}

#[test]
fn snapshot_round_trip_through_a_file() {
    let g = Arc::new(build_grid(4, 3.0).unwrap());
    let f = DistributionField::from_fn(g, vec![0.5; 3], |c, i, v| (c as f64 + 1.0) * v[0] * 1e-3 + i as f64);
    let dir = tempfile_dir();
    let p = dir.join("f.csv");
    let meta = SnapshotMeta::new(&f, serde_json::json!({"type": "slab", "L": 1.0}), 0.5, 12.0, 0.02);
    write_snapshot(&f, &meta, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("cell_index,vx_index,vy_index,vz_index,value\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 64);
    let (back, m) = read_snapshot(&p).unwrap();
    assert_eq!(back.values(), f.values());
    assert_eq!(m.quadrature, "closed tensor trapezoid");
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("vs-{}-{:?}", std::process::id(), std::thread::current().id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn field(seed: u64) -> DistributionField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = Arc::new(build_grid(5, 4.0).unwrap());
    let r: Vec<f64> = (0..3 * g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = g.len();
    DistributionField::from_fn(g, vec![0.25, 0.5, 0.25], |c, i, v| maxwellian(1.0, v).unwrap() * r[c * n + i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inner_product_is_symmetric_and_positive(a in 0u64..500, b in 0u64..500) {
        let (f, g) = (field(a), field(b + 1000));
        let fg = f.inner_h(&g).unwrap();
        let gf = g.inner_h(&f).unwrap();
        prop_assert!((fg - gf).abs() <= 1e-14 * f.norm_h() * g.norm_h());
        prop_assert!(fg.abs() <= f.norm_h() * g.norm_h() * (1.0 + 1e-12));
        prop_assert!((f.inner_h(&f).unwrap() - f.norm_h().powi(2)).abs() <= 1e-12 * f.norm_h().powi(2));
    }

    #[test]
    fn axpy_is_linear(a in 0u64..500, s in -3.0f64..3.0) {
        let (f, g) = (field(a), field(a + 7));
        let mut h = f.clone();
        h.axpy(s, &g).unwrap();
        prop_assert!((h.mass() - f.mass() - s * g.mass()).abs() < 1e-12);
        let d = h.difference(&f).unwrap();
        prop_assert!((d.norm_h() - s.abs() * g.norm_h()).abs() <= 1e-12 * (1.0 + g.norm_h()));
    }

    #[test]
    fn mirror_indices_are_involutions(n in 2usize..9, i in 0usize..512, axis in 0usize..3) {
        let g = build_grid(n, 2.0).unwrap();
        let i = i % g.len();
        let j = g.mirror_index(i, axis);
        prop_assert_eq!(g.mirror_index(j, axis), i);
        let (v, w) = (g.nodes()[i], g.nodes()[j]);
        prop_assert_eq!(w[axis], -v[axis]);
        prop_assert_eq!(g.antipode_index(g.antipode_index(i)), i);
        prop_assert_eq!(g.weights()[i], g.weights()[j]);
    }
}
