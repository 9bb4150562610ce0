mod common;

use std::f64::consts::PI;

use gsr_fns::grid::{register, register_dimensionless, GridSpec, Offset, Particle, HIT_THRESHOLD, MISS_THRESHOLD};
use proptest::prelude::*;

use common::oracle_covered;

fn covered(area: f64, px: f64, u: f64, v: f64) -> u64 {
    let grid = GridSpec::new(px).unwrap();
    register(&Particle::new(area).unwrap(), &grid, &Offset::new(u, v, &grid).unwrap()).covered_pixels
}

#[test]
fn large_particle_at_grid_vertex() {
    let b = covered(10000.0, 1.0, 0.0, 0.0);
    assert_eq!(b, oracle_covered(10000.0, 1.0, 0.0, 0.0));
    let band = 4.0 * (PI * 10000.0).sqrt();
    assert!((10000.0 - band..=10000.0).contains(&(b as f64)), "{b}");
    assert_eq!(b, 9780);
}

#[test]
fn circumscribed_pixel_is_covered() {
    assert_eq!(covered(PI / 2.0, 1.0, 0.5, 0.5), 1);
    assert_eq!(covered(0.5 * 0.16, 0.16, 0.1, 0.2), 0);
}

#[test]
fn threshold_constants_are_tight_at_the_vertex() {
    // just below 2 pi the vertex offset misses, just above it hits
    assert_eq!(register_dimensionless(HIT_THRESHOLD * (1.0 - 1e-9), 0.0, 0.0).unwrap(), 0);
    assert!(register_dimensionless(HIT_THRESHOLD * (1.0 + 1e-9), 0.0, 0.0).unwrap() >= 1);
    // just above pi / 2 only the centered offset hits
    assert_eq!(register_dimensionless(MISS_THRESHOLD * (1.0 + 1e-9), 0.5, 0.5).unwrap(), 1);
    assert_eq!(register_dimensionless(MISS_THRESHOLD * (1.0 + 1e-9), 0.3, 0.5).unwrap(), 0);
}

#[test]
fn threshold_sweep_over_offsets() {
    let m = 100;
    for i in 0..m {
        for j in 0..m {
            let (u, v) = (i as f64 / m as f64, j as f64 / m as f64);
            assert_eq!(register_dimensionless(MISS_THRESHOLD * (1.0 - 1e-9), u, v).unwrap(), 0);
            assert!(register_dimensionless(HIT_THRESHOLD * (1.0 + 1e-9), u, v).unwrap() >= 1);
        }
    }
}

#[test]
fn dimensionless_matches_physical() {
    let px: f64 = 0.04;
    let side: f64 = px.sqrt();
    for &(fu, fv) in &[(0.0, 0.0), (0.25, 0.75), (0.9, 0.1)] {
        let physical = covered(7.0 * px, px, fu * side, fv * side);
        assert_eq!(register_dimensionless(7.0, fu, fv).unwrap(), physical);
    }
}

#[test]
fn rejects_bad_inputs() {
    assert!(Particle::new(0.0).is_err());
    assert!(Particle::new(-1.0).is_err());
    assert!(GridSpec::new(0.0).is_err());
    let grid = GridSpec::new(0.16).unwrap();
    assert!(Offset::new(0.4, 0.0, &grid).is_err());
    assert!(Offset::new(-0.01, 0.0, &grid).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn agrees_with_corner_enumeration(
        ratio in 0.1f64..400.0,
        px in 0.005f64..2.0,
        fu in 0.0f64..1.0,
        fv in 0.0f64..1.0,
    ) {
        let side = px.sqrt();
        let (u, v) = ((fu * side).min(side * (1.0 - 1e-12)), (fv * side).min(side * (1.0 - 1e-12)));
        prop_assert_eq!(covered(ratio * px, px, u, v), oracle_covered(ratio * px, px, u, v));
    }

    #[test]
    fn erosion_and_monotonicity(ratio in 0.1f64..2000.0, grow in 1.0f64..1.5, fu in 0.0f64..1.0, fv in 0.0f64..1.0) {
        let b = register_dimensionless(ratio, fu, fv).unwrap();
        prop_assert!(b as f64 <= ratio);
        prop_assert!(register_dimensionless(ratio * grow, fu, fv).unwrap() >= b);
    }

    #[test]
    fn translational_periodicity(ratio in 0.5f64..200.0, fu in 0.0f64..1.0, fv in 0.0f64..1.0, k in -5i32..5, l in -5i32..5) {
        let base = oracle_covered(ratio, 1.0, fu, fv);
        prop_assert_eq!(register_dimensionless(ratio, fu, fv).unwrap(), base);
        prop_assert_eq!(register_dimensionless(ratio, fu + k as f64, fv + l as f64).unwrap(), base);
    }

    #[test]
    fn scale_invariance(ratio in 0.5f64..500.0, fu in 0.0f64..1.0, fv in 0.0f64..1.0) {
        let expected = register_dimensionless(ratio, fu, fv).unwrap();
        for px in [0.01, 0.04, 0.09, 0.16] {
            let side: f64 = f64::sqrt(px);
            let (u, v) = ((fu * side).min(side * (1.0 - 1e-12)), (fv * side).min(side * (1.0 - 1e-12)));
            prop_assert_eq!(covered(ratio * px, px, u, v), expected);
        }
    }
}
