use ness_kinetic::boundary::*;
use ness_kinetic::geometry::Domain;
use ness_kinetic::velocity_space::{build_grid, VelocityGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> VelocityGrid {
    build_grid(8, 5.0).unwrap()
}

const NORMALS: [[f64; 3]; 4] = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];

#[test]
fn wall_maxwellian_has_unit_incoming_flux() {
    let g = grid();
    for k in 0..=8 {
        let theta = 0.875 + 0.25 * k as f64 / 8.0;
        for n in NORMALS {
            let mw = wall_maxwellian(&g, theta, n).unwrap();
            let (_, inc) = half_fluxes(&g, n, &mw);
            assert!((inc - 1.0).abs() < 1e-14, "theta {theta}: {inc}");
        }
    }
    assert!(wall_maxwellian(&g, 1.2, NORMALS[0]).is_err());
    assert!(wall_maxwellian(&g, 0.8, NORMALS[0]).is_err());
}

#[test]
fn axis_normals_give_exact_specular_maps() {
    let g = grid();
    let f: Vec<f64> = (0..g.len()).map(|i| i as f64).collect();
    for n in NORMALS {
        let map = SpecularMap::new(&g, n);
        assert!(matches!(map, SpecularMap::Exact(_)));
        let twice = map.image(&g, &map.image(&g, &f));
        assert_eq!(twice, f);
    }
    assert!(matches!(SpecularMap::new(&g, [0.0, 0.6, 0.8]), SpecularMap::Interpolated(_)));
}

#[test]
fn isothermal_inflow_term_vanishes() {
    let g = grid();
    let wall = WallModel::isothermal(IotaProfile::Bases);
    let dom = Domain::slab(1.0).unwrap();
    let p = WallPoint::new(&g, &wall, &dom, [1.0, 0.0, 0.0]).unwrap();
    let m = g.maxwellian();
    assert!(p.psi.iter().zip(m).all(|(a, b)| a.abs() <= 1e-14 * b.max(1e-300) || a.abs() < 1e-16));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_has_zero_net_flux(
        seed in 0u64..10_000,
        iota in 0.0f64..=1.0,
        theta in -0.125f64..=0.125,
        right in any::<bool>(),
        with_psi in any::<bool>(),
    ) {
        let g = grid();
        let dom = Domain::cylinder(1.0, 0.5).unwrap();
        let wall = WallModel::direct(
            0.125,
            ThetaProfile::Bases { left: theta, right: -theta },
            IotaProfile::Constant { value: iota },
        ).unwrap();
        let x = [if right { 1.0 } else { -1.0 }, 0.1, -0.2];
        let p = WallPoint::new(&g, &wall, &dom, x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma: Vec<f64> = g.maxwellian().iter().map(|m| m * rng.random_range(0.0..2.0)).collect();
        let r = p.reflect(&g, &gamma, 1.0, with_psi);
        let (out, inc) = half_fluxes(&g, p.normal, &r);
        prop_assert!((out - inc).abs() <= 1e-13 * out, "out {} in {}", out, inc);
        // outgoing values pass through untouched
        for (i, v) in g.nodes().iter().enumerate() {
            if v[0] * p.normal[0] > 0.0 {
                prop_assert_eq!(r[i], gamma[i]);
            }
        }
    }
}
