mod common;

use gsr_fns::grid::GridSpec;
use gsr_fns::io::Metadata;
use gsr_fns::likelihood::{
    build_table, build_table_on_grid, fitting_a_grid, refined_a_grid, uniform_a_grid, LikelihoodTable,
    OffsetScheme, ROW_SUM_TOL,
};

use common::{binomial_se, lattice_distribution};

fn unit_grid() -> GridSpec {
    GridSpec::new(1.0).unwrap()
}

#[test]
fn row_at_three_pixels_matches_dense_lattice() {
    let reference = lattice_distribution(3.0, 2048);
    let n = 1_000_000;
    for scheme in [OffsetScheme::PseudoRandom, OffsetScheme::QuasiLattice] {
        let table = build_table_on_grid(unit_grid(), vec![3.0, 3.5], n, 11, scheme).unwrap();
        let row = table.row_dense(0);
        for b in 0..reference.len().max(row.len()) {
            let p_ref = reference.get(b).copied().unwrap_or(0.0);
            let p = row.get(b).copied().unwrap_or(0.0);
            let tol = 3.0 * binomial_se(p_ref, n) + 1.0 / (2048.0 * 2048.0);
            assert!((p - p_ref).abs() <= tol, "{scheme} b={b}: {p} vs {p_ref}");
        }
    }
}

#[test]
fn miss_probability_at_three_pixels() {
    let reference = lattice_distribution(3.0, 1024)[0];
    let table = build_table(unit_grid(), 12.0, 600, 20000, 5).unwrap();
    let p0 = table.p_b0(3.0).unwrap();
    assert!((p0 - reference).abs() < 1e-3, "{p0} vs {reference}");
}

#[test]
fn large_particles_lose_only_their_rim() {
    let table = build_table_on_grid(unit_grid(), vec![9999.0, 10000.0], 400, 3, OffsetScheme::QuasiLattice)
        .unwrap();
    let ratio = table.mean_curve().mean_b_over_a[1];
    assert!((0.97..=1.0).contains(&ratio), "{ratio}");
}

#[test]
fn rows_are_normalized_and_respect_thresholds() {
    let table = build_table(unit_grid(), 12.0, 600, 4000, 9).unwrap();
    assert_eq!(table.len(), 600);
    for (i, &a) in table.a_grid().iter().enumerate() {
        assert!((table.row_sum(i) - 1.0).abs() <= ROW_SUM_TOL);
        if a < std::f64::consts::FRAC_PI_2 {
            assert_eq!(table.prob(i, 0), 1.0, "a={a}");
        }
        if a > 2.0 * std::f64::consts::PI {
            assert_eq!(table.prob(i, 0), 0.0, "a={a}");
        }
        let mean: f64 = table.row_dense(i).iter().enumerate().map(|(b, p)| b as f64 * p).sum();
        assert!(mean <= a + 1e-12);
    }
}

#[test]
fn miss_probability_never_increases_with_area() {
    let table = build_table(unit_grid(), 12.0, 600, 4000, 2).unwrap();
    let p0: Vec<f64> = table.a_grid().iter().map(|&a| table.p_b0(a).unwrap()).collect();
    assert!(p0.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn posterior_slices_are_normalized() {
    let table = build_table(unit_grid(), 12.0, 600, 4000, 4).unwrap();
    for b in [0, 1, 3] {
        let post = table.posterior_slice(b, |_| 1.0).unwrap();
        let mass: f64 = post
            .a_values
            .windows(2)
            .zip(post.density.windows(2))
            .map(|(a, d)| 0.5 * (a[1] - a[0]) * (d[0] + d[1]))
            .sum();
        assert!((mass - 1.0).abs() < 1e-9, "b={b}: {mass}");
    }
    // a prior that vanishes wherever b = 5 is possible has no posterior
    assert!(table.posterior_slice(5, |a| if a > 1.0 { 0.0 } else { 1.0 }).is_err());
}

#[test]
fn rebuild_is_identical_and_scale_free() {
    let a = build_table(GridSpec::new(0.16).unwrap(), 12.0, 100, 2000, 7).unwrap();
    let b = build_table(GridSpec::new(0.16).unwrap(), 12.0, 100, 2000, 7).unwrap();
    assert_eq!(a, b);
    let unit = build_table(unit_grid(), 12.0, 100, 2000, 7).unwrap();
    for i in 0..a.len() {
        assert_eq!(a.row_dense(i), unit.row_dense(i));
    }
    let rescaled = unit.rescaled(0.16).unwrap();
    assert_eq!(rescaled.row_dense(17), a.row_dense(17));
}

#[test]
fn csv_round_trip() {
    let table = build_table(GridSpec::new(0.09).unwrap(), 12.0, 60, 500, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let mut buf = Vec::new();
    table.write_csv(&mut buf, &Metadata::for_command("test")).unwrap();
    std::fs::write(&path, &buf).unwrap();
    let back = LikelihoodTable::read_csv(&path).unwrap();
    assert_eq!(back.len(), table.len());
    assert_eq!(back.max_b(), table.max_b());
    for i in 0..table.len() {
        assert!((back.a_grid()[i] - table.a_grid()[i]).abs() < 1e-12);
        for (p, q) in back.row_dense(i).iter().zip(table.row_dense(i)) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn grids_are_increasing_and_end_at_a_max() {
    for g in [
        uniform_a_grid(12.0, 600).unwrap(),
        refined_a_grid(12.0, 600).unwrap(),
        fitting_a_grid(5000.0).unwrap(),
    ] {
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g[0] > 0.0);
    }
    assert_eq!(*uniform_a_grid(12.0, 600).unwrap().last().unwrap(), 12.0);
    assert_eq!(*fitting_a_grid(5000.0).unwrap().last().unwrap(), 5000.0);
    assert!(uniform_a_grid(12.0, 1).is_err());
    assert!(uniform_a_grid(-1.0, 10).is_err());
}
