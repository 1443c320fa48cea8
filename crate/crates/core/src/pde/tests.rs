use super::*;
use crate::geometry::build_holes;
use crate::pointproc::{sample, PointConfiguration, ProcessSpec, RadiiSpec};
use proptest::prelude::*;
use std::f64::consts::PI;

fn unit() -> Aabb {
    Aabb::cube(3, 0.0, 1.0).unwrap()
}

fn grid(h: f64) -> GridSpec {
    GridSpec::for_domain(&unit(), h).unwrap()
}

/// Series solution of `-Δu = 1` on the unit cube with zero boundary values.
fn series_solution(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in (1..120).step_by(2) {
        for j in (1..120).step_by(2) {
            for k in (1..120).step_by(2) {
                let (a, b, c) = (i as f64, j as f64, k as f64);
                s += (PI * a * x[0]).sin() * (PI * b * x[1]).sin() * (PI * c * x[2]).sin()
                    / (a * b * c * (a * a + b * b + c * c));
            }
        }
    }
    s * 64.0 / PI.powi(5)
}

fn empty_holes(eps: f64) -> HoleSet {
    let n = (1.0 / eps).round();
    let c = PointConfiguration::new(Aabb::cube(3, 0.0, n).unwrap(), vec![], vec![], 0).unwrap();
    build_holes(&c, eps, &unit()).unwrap()
}

fn holes_from(centers: Vec<f64>, radii: Vec<f64>) -> HoleSet {
    // eps = 1 keeps positions and radii unscaled
    let c = PointConfiguration::new(unit(), centers, radii, 0).unwrap();
    build_holes(&c, 1.0, &unit()).unwrap()
}

#[test]
fn grid_indexing_roundtrip() {
    let g = grid(0.25);
    assert_eq!(g.shape(), &[5, 5, 5]);
    let mut idx = [0usize; 3];
    let mut x = [0.0; 3];
    for i in 0..g.len() {
        g.multi_index(i, &mut idx);
        assert_eq!(g.flat_index(&idx), i);
        g.coords(i, &mut x);
        assert_eq!(g.nearest_node(&x), Some(i));
    }
    assert!(GridSpec::for_domain(&unit(), 0.3).is_err());
}

#[test]
fn clean_poisson_matches_series() {
    let g = grid(1.0 / 32.0);
    let f = SourceTerm::Constant(1.0).sample(&g);
    let (u, rep) = solve_perforated(&empty_holes(0.25), &f, SolveMode::Resolved, &SolveOptions::default()).unwrap();
    assert!(rep.final_relative_residual <= 1e-8);
    let mut x = [0.0; 3];
    for &i in &[g.len() / 2, g.flat_index(&[8, 16, 16]), g.flat_index(&[4, 4, 28])] {
        g.coords(i, &mut x);
        let exact = series_solution(&x);
        assert!((u.values[i] / exact - 1.0).abs() < 0.01, "{} vs {exact}", u.values[i]);
    }
    // C0 = 0 reproduces the same field
    let (v, _) = solve_homogenized(0.0, &f, &SolveOptions::default()).unwrap();
    assert_eq!(u.values, v.values);
}

#[test]
fn resolved_hole_nodes_are_zero() {
    let g = grid(1.0 / 32.0);
    let f = SourceTerm::Constant(1.0).sample(&g);
    let holes = holes_from(vec![0.5, 0.5, 0.5], vec![0.2]);
    let (u, rep) = solve_perforated(&holes, &f, SolveMode::Resolved, &SolveOptions::default()).unwrap();
    assert_eq!(rep.masked_holes, 1);
    let mask = u.mask.as_ref().unwrap();
    let mut x = [0.0; 3];
    let mut inside = 0;
    for i in 0..g.len() {
        g.coords(i, &mut x);
        if crate::aabb::dist(&x, &[0.5; 3]) < 0.2 {
            inside += 1;
            assert_eq!(mask[i], NodeState::HoleDirichlet);
            assert_eq!(u.values[i], 0.0);
        }
    }
    assert!(inside > 100);
}

#[test]
fn penalty_mode_uses_annulus_capacity() {
    let g = grid(1.0 / 16.0);
    let f = SourceTerm::Constant(1.0).sample(&g);
    // eps = 1/4: rho = 1 gives radius 1/64 < 3h
    let c = PointConfiguration::new(Aabb::cube(3, 0.0, 4.0).unwrap(), vec![2.0, 2.0, 2.0], vec![1.0], 0).unwrap();
    let holes = build_holes(&c, 0.25, &unit()).unwrap();
    let (up, rep) = solve_perforated(&holes, &f, SolveMode::CapacityPenalty, &SolveOptions::default()).unwrap();
    assert_eq!((rep.penalized_holes, rep.masked_holes), (1, 0));
    let (ur, _) = solve_perforated(&holes, &f, SolveMode::Resolved, &SolveOptions::default()).unwrap();
    let center = g.len() / 2;
    // the hole centre is a node, so the resolved solve pins it
    assert_eq!(ur.values[center], 0.0);
    let (clean, _) = solve_homogenized(0.0, &f, &SolveOptions::default()).unwrap();
    assert!(up.values[center] > 0.0 && up.values[center] < clean.values[center]);
    // the centre equation carries the extra diagonal cap/h^3 * h^2
    let cap = crate::capacity::cap_annulus_analytic(1.0 / 64.0, 0.125, 3).unwrap().value;
    let h: f64 = 1.0 / 16.0;
    let s = g.strides();
    let nb: f64 = s.iter().map(|&k| up.values[center - k] + up.values[center + k]).sum();
    let lhs = (6.0 + h * h * cap / h.powi(3)) * up.values[center] - nb;
    assert!((lhs - h * h).abs() < 1e-7, "{lhs} {}", up.values[center]);
}

#[test]
fn penalty_and_resolved_agree_when_holes_are_resolved() {
    // radii of about 5h are masked in both modes
    let g = grid(1.0 / 40.0);
    let f = SourceTerm::Constant(1.0).sample(&g);
    let holes = holes_from(vec![0.3, 0.3, 0.3, 0.7, 0.6, 0.5], vec![0.125, 0.12]);
    let (a, _) = solve_perforated(&holes, &f, SolveMode::CapacityPenalty, &SolveOptions::default()).unwrap();
    let (b, _) = solve_perforated(&holes, &f, SolveMode::Resolved, &SolveOptions::default()).unwrap();
    let n = norms(&a, &b).unwrap();
    assert!(n.l2_error <= 0.05 * n.l2_norm_u);
}

#[test]
fn homogenized_reaction_limits() {
    let g = grid(1.0 / 32.0);
    let f = SourceTerm::Constant(1.0).sample(&g);
    let (big, _) = solve_homogenized(1e6, &f, &SolveOptions::default()).unwrap();
    let mut idx = [0usize; 3];
    for i in 0..g.len() {
        g.multi_index(i, &mut idx);
        if idx.iter().all(|&k| (3..=29).contains(&k)) {
            assert!((big.values[i] / 1e-6 - 1.0).abs() < 0.05);
        }
    }
    let (clean, _) = solve_homogenized(0.0, &f, &SolveOptions::default()).unwrap();
    let (react, _) = solve_homogenized(4.0 * PI, &f, &SolveOptions::default()).unwrap();
    for i in 0..g.len() {
        if !g.on_boundary(i) {
            assert!(react.values[i] < clean.values[i]);
        }
    }
}

#[test]
fn homogenized_energy_identity() {
    let g = grid(1.0 / 24.0);
    for (c0, src) in [(4.0 * PI, SourceTerm::Constant(1.0)), (37.0, SourceTerm::SineBump)] {
        let f = src.sample(&g);
        let (u, _) = solve_homogenized(c0, &f, &SolveOptions::default()).unwrap();
        let lhs = gradient_pairing(&g, &u.values, &u.values) + c0 * integrate(&g, |i| u.values[i].powi(2));
        let rhs = integrate(&g, |i| f.values[i] * u.values[i]);
        assert!((lhs - rhs).abs() <= 10.0 * 1e-8 * rhs, "{lhs} vs {rhs}");
    }
}

#[test]
fn norms_simple_fields() {
    let g = grid(1.0 / 16.0);
    let one = GridField::constant(g.clone(), 1.0);
    let n = norms(&one, &one).unwrap();
    assert_eq!((n.l2_error, n.h1_seminorm_error), (0.0, 0.0));
    assert!((n.l2_norm_u - 1.0).abs() < 1e-14);
    let ramp = GridField::from_fn(g.clone(), |x| x[0]);
    let zero = GridField::constant(g.clone(), 0.0);
    let n = norms(&ramp, &zero).unwrap();
    assert!((n.h1_seminorm_error.powi(2) - 1.0).abs() < 1e-12);
    assert!((n.energy_u - 1.0).abs() < 1e-12);
    let other = GridField::constant(grid(1.0 / 8.0), 0.0);
    assert!(matches!(norms(&ramp, &other), Err(Error::GridMismatch(_))));
}

#[test]
fn grid_file_roundtrip() {
    let g = GridSpec::new(0.125, vec![3, 4, 5], vec![0.0, -1.0, 0.5]).unwrap();
    let f = GridField::from_fn(g, |x| x[0] * 1e-7 + x[1].sin() + x[2]);
    let mut buf = Vec::new();
    write_grid(&f, &mut buf).unwrap();
    let back = read_grid(&buf[..]).unwrap();
    assert_eq!(back.grid, f.grid);
    assert_eq!(back.values, f.values);
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "3 1.2500000000000000e-1 3 4 5 0.0000000000000000e0 -1.0000000000000000e0 5.0000000000000000e-1");
}

#[test]
fn solution_is_symmetric_for_symmetric_data() {
    let g = grid(1.0 / 24.0);
    let f = SourceTerm::SineBump.sample(&g);
    let holes = holes_from(
        vec![0.25, 0.5, 0.5, 0.75, 0.5, 0.5, 0.5, 0.25, 0.5, 0.5, 0.75, 0.5],
        vec![0.1; 4],
    );
    let (u, _) = solve_perforated(&holes, &f, SolveMode::Resolved, &SolveOptions::default()).unwrap();
    let n = 24;
    let umax = u.values.iter().copied().fold(0.0, f64::max);
    for a in 0..=n {
        for b in 0..=n {
            for c in 0..=n {
                let v = u.values[g.flat_index(&[a, b, c])];
                let mirror = u.values[g.flat_index(&[n - a, b, c])];
                let swap = u.values[g.flat_index(&[b, a, c])];
                assert!((v - mirror).abs() <= 1e-7 * umax);
                assert!((v - swap).abs() <= 1e-7 * umax);
            }
        }
    }
}

fn random_holes(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let c = sample(
        &ProcessSpec::Poisson { intensity: n as f64 },
        &RadiiSpec::LogNormal { mu: (0.06f64).ln(), sigma: 0.4 },
        &unit(),
        seed,
    )
    .unwrap();
    (c.centers().to_vec(), c.radii().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn maximum_principle_and_hole_monotonicity(seed in 0u64..1000) {
        let g = grid(1.0 / 24.0);
        let f = SourceTerm::SineBump.sample(&g);
        let (centers, radii) = random_holes(seed, 12);
        let k = radii.len() / 2;
        let fewer = holes_from(centers[..3 * k].to_vec(), radii[..k].to_vec());
        let more = holes_from(centers, radii);
        let opts = SolveOptions::default();
        let (a, _) = solve_perforated(&fewer, &f, SolveMode::Resolved, &opts).unwrap();
        let (b, _) = solve_perforated(&more, &f, SolveMode::Resolved, &opts).unwrap();
        let scale = a.values.iter().copied().fold(0.0, f64::max);
        for i in 0..g.len() {
            prop_assert!(a.values[i] >= -1e-8 * scale);
            prop_assert!(b.values[i] >= -1e-8 * scale);
            prop_assert!(b.values[i] <= a.values[i] + 1e-8 * scale);
        }
    }
}
