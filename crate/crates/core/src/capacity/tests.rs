use super::*;
use crate::geometry::{build_holes, partition_general, partition_periodic, HoleClass, SafetyPrimitive};
use crate::pde::GridSpec;
use crate::pointproc::PointConfiguration;
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn analytic_capacity_values() {
    assert_eq!(cap_annulus_analytic(1.0, f64::INFINITY, 3).unwrap().value, 4.0 * PI);
    let v = cap_annulus_analytic(0.1, 0.2, 3).unwrap().value;
    assert!((v - 4.0 * PI / 5.0).abs() < 1e-14);
    assert_eq!(cap_annulus_analytic(0.0, 1.0, 3).unwrap().value, 0.0);
    assert!(matches!(cap_annulus_analytic(0.3, 0.2, 3), Err(Error::InvalidAnnulus { .. })));
    // d = 4: 2 sigma_4 / (r^-2 - R^-2) with sigma_4 = 2 pi^2
    let v = cap_annulus_analytic(1.0, 2.0, 4).unwrap().value;
    assert!((v - 2.0 * 2.0 * PI * PI / 0.75).abs() < 1e-12);
}

proptest! {
    #[test]
    fn analytic_capacity_homogeneity(r in 1e-3f64..1.0, gap in 1e-3f64..2.0, c in 1e-3f64..1e3, d in 3usize..7) {
        let big = r + gap;
        let a = cap_annulus_analytic(c * r, c * big, d).unwrap().value;
        let b = c.powi(d as i32 - 2) * cap_annulus_analytic(r, big, d).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * b);
    }
}

#[test]
fn strange_term_closed_forms() {
    let c = strange_term(&ProcessSpec::Periodic, &RadiiSpec::Constant { value: 0.5 }, 3).unwrap();
    assert_eq!(c, 4.0 * PI * 0.5);
    let pareto = RadiiSpec::Pareto {
        scale: 1.0,
        tail_exponent: 1.5,
    };
    for lambda in [0.5, 1.0, 2.0, 3.7] {
        let c = strange_term(&ProcessSpec::Poisson { intensity: lambda }, &pareto, 3).unwrap();
        assert_eq!(c, 12.0 * PI * lambda);
    }
    let zero = strange_term(&ProcessSpec::Periodic, &RadiiSpec::Constant { value: 0.0 }, 3).unwrap();
    assert_eq!(zero, 0.0);
    let heavy = RadiiSpec::Pareto {
        scale: 1.0,
        tail_exponent: 1.5,
    };
    assert!(matches!(
        strange_term(&ProcessSpec::Periodic, &heavy, 5),
        Err(Error::InfiniteMoment { .. })
    ));
}

#[test]
fn pareto_moment_matches_numerical_integral() {
    // midpoint rule for ∫_1^∞ rho * 1.5 rho^-2.5 drho after rho = 1/t^2
    let n = 200_000;
    let mut s = 0.0;
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        let rho = 1.0 / (t * t);
        s += rho * 1.5 * rho.powf(-2.5) * 2.0 / (t * t * t) / n as f64;
    }
    assert!((s - 3.0).abs() < 1e-6, "{s}");
}

#[test]
fn cell_function_boundary_values() {
    assert_eq!(cell_function(0.01, 0.01, 0.1, 3), 0.0);
    assert_eq!(cell_function(0.1, 0.01, 0.1, 3), 1.0);
    let mid = cell_function(0.02, 0.01, 0.1, 3);
    // (1/0.02 - 10) / (100 - 10) = 40/90 below 1
    assert!((mid - (1.0 - 40.0 / 90.0)).abs() < 1e-14);
}

fn ball(c: [f64; 3], r: f64) -> SafetyPrimitive {
    SafetyPrimitive::Ball {
        center: c.to_vec(),
        radius: r,
    }
}

#[test]
fn fd_capacity_annulus_coarse() {
    let inner = [InnerBall {
        center: vec![0.0; 3],
        radius: 0.1,
    }];
    let exact = 4.0 * PI / 5.0;
    for boundary in [BoundaryTreatment::CutEdge, BoundaryTreatment::Staircase] {
        let opts = FdOptions {
            boundary,
            ..Default::default()
        };
        let v = cap_fd(&inner, &[ball([0.0; 3], 0.2)], 0.01, &opts).unwrap();
        assert!((v.value / exact - 1.0).abs() < 0.1, "{boundary:?}: {}", v.value);
        assert_eq!(v.method, CapacityMethod::FdRelaxation);
    }
}

#[test]
fn fd_capacity_rejects_underresolved() {
    let inner = [InnerBall {
        center: vec![0.0; 3],
        radius: 0.01,
    }];
    assert!(matches!(
        cap_fd(&inner, &[ball([0.0; 3], 0.2)], 0.01, &FdOptions::default()),
        Err(Error::UnderResolved { .. })
    ));
}

#[test]
fn fd_capacity_subadditive_and_monotone() {
    let h = 0.01;
    let opts = FdOptions::default();
    let outer = [SafetyPrimitive::Cube {
        center: vec![0.0; 3],
        half_width: 0.4,
    }];
    let a = InnerBall {
        center: vec![-0.12, 0.0, 0.0],
        radius: 0.06,
    };
    let b = InnerBall {
        center: vec![0.12, 0.0, 0.0],
        radius: 0.06,
    };
    let both = cap_fd(&[a.clone(), b.clone()], &outer, h, &opts).unwrap().value;
    let ca = cap_fd(&[a], &outer, h, &opts).unwrap().value;
    let cb = cap_fd(&[b], &outer, h, &opts).unwrap().value;
    assert!(both <= ca + cb);
    assert!(both > ca.max(cb));

    let p = InnerBall {
        center: vec![-0.04, 0.0, 0.0],
        radius: 0.06,
    };
    let q = InnerBall {
        center: vec![0.04, 0.0, 0.0],
        radius: 0.06,
    };
    let pair = cap_fd(&[p, q], &outer, h, &opts).unwrap().value;
    let hull = InnerBall {
        center: vec![0.0; 3],
        radius: 0.1,
    };
    assert!(pair <= cap_fd(&[hull], &outer, h, &opts).unwrap().value);
}

fn single_hole(rho: f64, eps: f64) -> crate::geometry::HoleSet {
    let n = (1.0 / eps).round();
    let w = Aabb::cube(3, 0.0, n).unwrap();
    let c = 0.5 * n;
    let config = PointConfiguration::new(w, vec![c, c, c], vec![rho], 0).unwrap();
    build_holes(&config, eps, &Aabb::cube(3, 0.0, 1.0).unwrap()).unwrap()
}

#[test]
fn test_function_single_good_hole_energy() {
    // eps = 1/4: radius 0.02 (rho = 1.28), clearance = eps
    let holes = single_hole(1.28, 0.25);
    let p = partition_general(&holes, 1.0).unwrap();
    assert_eq!(p.n_good(), 1);
    let d = p.clearance(0).unwrap();
    let r = holes.radius(0);
    let grid = GridSpec::for_domain(holes.domain(), r / 8.0).unwrap();
    let t = build_test_function(&p, &holes, &grid, &FdOptions::default()).unwrap();
    assert_eq!(t.log, vec![HoleRecord { index: 0, formula: Formula::CellExplicit }]);
    let exact = cap_annulus_analytic(r, d, 3).unwrap().value;
    assert!((t.good_energy / exact - 1.0).abs() < 0.05, "{} vs {exact}", t.good_energy);
    assert!(t.field.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    let mut x = [0.0; 3];
    for (i, &v) in t.field.values.iter().enumerate() {
        grid.coords(i, &mut x);
        let s = crate::aabb::dist(&x, holes.center(0));
        if s < r {
            assert_eq!(v, 0.0);
        }
        if s >= d {
            assert_eq!(v, 1.0);
        }
    }
}

#[test]
fn test_function_without_holes_is_one() {
    let holes = single_hole(0.0, 0.25);
    let p = partition_general(&holes, 1.0).unwrap();
    let grid = GridSpec::for_domain(holes.domain(), 1.0 / 16.0).unwrap();
    let t = build_test_function(&p, &holes, &grid, &FdOptions::default()).unwrap();
    assert!(t.field.values.iter().all(|&v| v == 1.0));
    assert_eq!(t.good_energy, 0.0);
}

#[test]
fn test_function_resolved_bad_cluster() {
    // one oversized hole in a 5^3 lattice, resolved on the grid
    let eps: f64 = 0.2;
    let mut rho = vec![1e-3; 125];
    rho[62] = 0.15 / eps.powi(3);
    let mut centers = Vec::new();
    for a in 0..5 {
        for b in 0..5 {
            for c in 0..5 {
                centers.extend_from_slice(&[a as f64, b as f64, c as f64]);
            }
        }
    }
    let config = PointConfiguration::new(Aabb::cube(3, 0.0, 5.0).unwrap(), centers, rho, 0).unwrap();
    let holes = build_holes(&config, eps, &Aabb::cube(3, 0.0, 1.0).unwrap()).unwrap();
    let p = partition_periodic(&holes, 1.0).unwrap();
    let grid = GridSpec::for_domain(holes.domain(), 1.0 / 50.0).unwrap();
    let t = build_test_function(&p, &holes, &grid, &FdOptions::default()).unwrap();
    let fd_holes: Vec<usize> = t.log.iter().filter(|r| r.formula == Formula::CapacitaryFd).map(|r| r.index).collect();
    assert!(fd_holes.is_empty(), "tiny contaminated holes make the cluster unresolvable");
    assert!(t.bad_energy_analytic > 0.0);
    // nodes inside the big hole are zero
    let mut x = [0.0; 3];
    for (i, &v) in t.field.values.iter().enumerate() {
        grid.coords(i, &mut x);
        if crate::aabb::dist(&x, holes.center(62)) < holes.radius(62) {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn empirical_density_periodic_close_to_strange_term() {
    let eps = 1.0 / 16.0;
    for r in [0.05, 0.1, 0.2] {
        let w = Aabb::cube(3, 0.0, 16.0).unwrap();
        let config = crate::pointproc::sample(&ProcessSpec::Periodic, &RadiiSpec::Constant { value: r }, &w, 0).unwrap();
        let holes = build_holes(&config, eps, &Aabb::cube(3, 0.0, 1.0).unwrap()).unwrap();
        let p = partition_periodic(&holes, 1.0).unwrap();
        let v = empirical_strange_density(&p, &holes);
        assert!((v / (4.0 * PI * r) - 1.0).abs() < 0.1);
        // invariant under relabelling
        let perm: Vec<usize> = (0..config.len()).rev().collect();
        let holes_p = build_holes(&config.permuted(&perm), eps, &Aabb::cube(3, 0.0, 1.0).unwrap()).unwrap();
        let pp = partition_periodic(&holes_p, 1.0).unwrap();
        assert!((empirical_strange_density(&pp, &holes_p) - v).abs() <= 1e-12 * v);
    }
}

#[test]
fn truncation_gap_vanishes_for_large_cutoff() {
    let eps = 0.125;
    let spec = ProcessSpec::Poisson { intensity: 1.0 };
    let radii = RadiiSpec::Pareto {
        scale: 1.0,
        tail_exponent: 1.5,
    };
    let config = crate::pointproc::sample(&spec, &radii, &Aabb::cube(3, 0.0, 8.0).unwrap(), 5).unwrap();
    let holes = build_holes(&config, eps, &Aabb::cube(3, 0.0, 1.0).unwrap()).unwrap();
    let p = partition_general(&holes, 1.0).unwrap();
    let diag = truncation_diagnostic(&p, &holes, &spec, &radii, 1e12).unwrap();
    assert_eq!(diag.truncated_density, diag.full_density);
    assert!(diag.analytic_tail < 1e-4);
    let diag = truncation_diagnostic(&p, &holes, &spec, &radii, 1.0).unwrap();
    assert!(diag.truncated_density <= diag.full_density);
    assert!((diag.analytic_tail - 12.0 * PI).abs() < 1e-12);
}

#[test]
fn strauss_mean_count_estimate_is_below_poisson() {
    let s = ProcessSpec::Strauss {
        intensity: 1.0,
        inhibition: 0.0,
        interaction_distance: 0.5,
        mcmc_sweeps: 50,
    };
    let est = estimate_mean_count(&s, 3, 16).unwrap();
    assert!(est.mean < 1.0 && est.mean > 0.3);
    assert!(est.stderr > 0.0);
}

#[test]
fn test_function_resolved_oversized_hole() {
    // eps = 1/4, radius 0.1: oversized, its doubled ball fits inside D
    let holes = single_hole(6.4, 0.25);
    let p = partition_general(&holes, 1.0).unwrap();
    assert_eq!(p.class(0), HoleClass::Oversized);
    let grid = GridSpec::for_domain(holes.domain(), 0.01).unwrap();
    let t = build_test_function(&p, &holes, &grid, &FdOptions::default()).unwrap();
    assert_eq!(t.log, vec![HoleRecord { index: 0, formula: Formula::CapacitaryFd }]);
    let exact = 4.0 * PI / 5.0;
    assert!((t.bad_energy / exact - 1.0).abs() < 0.01, "{} vs {exact}", t.bad_energy);
    assert_eq!(t.bad_energy_analytic, 0.0);
}
