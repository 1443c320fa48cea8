use super::*;
use std::f64::consts::PI;

fn small_plan(process: ProcessSpec, radii: RadiiSpec, seeds: Vec<u64>) -> ExperimentPlan {
    let mut p = ExperimentPlan::new(process, radii, seeds);
    p.epsilons = vec![0.5, 0.25];
    p.grid = GridRule::CellsPerEpsilon(4);
    p
}

const POISSON_PLAN: &str = r#"
version = 1
epsilons = [0.25, 0.125]
seeds = { start = 3, count = 4 }
outputs = "runs/poisson"

[process]
kind = "poisson"
intensity = 1.0

[radii]
kind = "pareto"
[radii.pareto]
scale = 1.0
tail_exponent = 1.5

[solver]
mode = "resolved"

[stats.slln]
mark = "rho_power"
windows = [4, 8]
seeds = [1, 2, 3]
"#;

#[test]
fn plan_file_maps_onto_the_plan() {
    let p = parse_plan(POISSON_PLAN).unwrap();
    assert_eq!(p.process, ProcessSpec::Poisson { intensity: 1.0 });
    assert_eq!(p.radii, RadiiSpec::Pareto { scale: 1.0, tail_exponent: 1.5 });
    assert_eq!(p.seeds, vec![3, 4, 5, 6]);
    assert_eq!(p.mode, SolveMode::Resolved);
    assert_eq!(p.grid, GridRule::CellsPerEpsilon(8));
    assert_eq!(p.source, SourceTerm::Constant(1.0));
    assert_eq!(p.outputs, PathBuf::from("runs/poisson"));
    let s = p.stats.slln.unwrap();
    assert_eq!((s.mark, s.z_threshold, s.seeds.len()), (Mark::RhoPower, 4.0, 3));
    assert!(p.stats.thinning.is_none());
}

fn path_of(text: &str) -> String {
    match parse_plan(text) {
        Err(Error::InvalidSpec { path, .. }) => path,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn plan_errors_name_the_key() {
    let strauss = POISSON_PLAN.replace(
        "kind = \"poisson\"\nintensity = 1.0",
        "kind = \"strauss\"\nintensity = 1.0\n[process.strauss_params]\ninhibition = 1.5\ninteraction_distance = 0.3",
    );
    assert_eq!(path_of(&strauss), "process.strauss_params.inhibition");
    assert_eq!(path_of(&POISSON_PLAN.replace("mode = ", "mood = ")), "solver.mood");
    assert_eq!(path_of(&POISSON_PLAN.replace("version = 1", "version = 2")), "version");
    assert_eq!(path_of(&POISSON_PLAN.replace("intensity = 1.0", "")), "process.intensity");
    assert_eq!(path_of(&POISSON_PLAN.replace("[0.25, 0.125]", "[0.125, 0.25]")), "epsilons");
    assert_eq!(path_of(&POISSON_PLAN.replace("tail_exponent = 1.5", "tail_exponent = \"x\"")), "radii.pareto.tail_exponent");
    assert_eq!(path_of(&POISSON_PLAN.replace("[solver]", "[grid]\ncells_per_epsilon = 3\n[solver]")), "grid.cells_per_epsilon");
    assert_eq!(path_of(&POISSON_PLAN.replace("windows = [4, 8]", "windows = [8, 4]")), "stats.slln.windows");
}

#[test]
fn row_keys_are_content_addressed() {
    let p = parse_plan(POISSON_PLAN).unwrap();
    assert_eq!(p.row_key(0.25, 3), p.row_key(0.25, 3));
    assert_ne!(p.row_key(0.25, 3), p.row_key(0.25, 4));
    assert_ne!(p.row_key(0.25, 3), p.row_key(0.125, 3));
    let mut q = p.clone();
    q.outputs = PathBuf::from("elsewhere");
    q.seeds = vec![3];
    assert_eq!(p.row_key(0.25, 3), q.row_key(0.25, 3));
    q.mode = SolveMode::CapacityPenalty;
    assert_ne!(p.row_key(0.25, 3), q.row_key(0.25, 3));
}

#[test]
fn zero_radii_reproduce_the_clean_solution() {
    let plan = small_plan(ProcessSpec::Poisson { intensity: 2.0 }, RadiiSpec::Constant { value: 0.0 }, vec![1, 2]);
    let rep = run_convergence(&plan, &RunOptions::default()).unwrap();
    assert_eq!(rep.c0, 0.0);
    for r in &rep.rows {
        assert!(r.is_ok(), "{}", r.status);
        assert_eq!(r.l2_err, Some(0.0));
        assert_eq!(r.weak_indicator, Some(0.0));
        assert_eq!(r.cap_bad_upper, Some(0.0));
    }
}

#[test]
fn periodic_rows_use_the_lattice_partition_and_exact_strange_term() {
    let plan = small_plan(ProcessSpec::Periodic, RadiiSpec::Constant { value: 0.5 }, vec![0]);
    let rep = run_convergence(&plan, &RunOptions::default()).unwrap();
    assert_eq!(rep.c0, 2.0 * PI);
    assert_eq!(rep.rows.len(), 2);
    let r = &rep.rows[1];
    assert!(r.is_ok(), "{}", r.status);
    assert_eq!((r.n_holes, r.n_good, r.n_bad), (Some(64), Some(64), Some(0)));
    assert!(r.l2_err.unwrap() > 0.0);
}

#[test]
fn failed_rows_are_recorded() {
    let mut plan = small_plan(ProcessSpec::Poisson { intensity: 1.0 }, RadiiSpec::Constant { value: 1.0 }, vec![0]);
    plan.max_iterations = 1;
    let rep = run_convergence(&plan, &RunOptions::default()).unwrap();
    assert!(rep.rows.iter().all(|r| r.status.starts_with("error:") && r.l2_err.is_none()));
    assert!(rep.rows.iter().all(|r| r.n_holes.is_some()));
    assert_eq!(rep.aggregates[0].n_ok, 0);
    assert!(rep.aggregates[0].metrics.get("l2_err").is_none());
}

#[test]
fn cancelled_sweep_starts_no_rows() {
    let plan = small_plan(ProcessSpec::Poisson { intensity: 1.0 }, RadiiSpec::Constant { value: 1.0 }, vec![0]);
    let opts = RunOptions {
        cancel: Some(Arc::new(AtomicBool::new(true))),
        ..Default::default()
    };
    assert_eq!(run_convergence(&plan, &opts).unwrap_err(), Error::Cancelled);
}

#[test]
fn resume_recomputes_exactly_the_missing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("rows");
    let plan = small_plan(
        ProcessSpec::Poisson { intensity: 1.0 },
        RadiiSpec::Pareto { scale: 1.0, tail_exponent: 1.5 },
        vec![0, 1, 2],
    );
    let computed = Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let c = computed.clone();
    let opts = RunOptions {
        workers: 2,
        cache: Some(cache.clone()),
        progress: Some(Arc::new(move |_| {
            c.fetch_add(1, Ordering::SeqCst);
        })),
        ..Default::default()
    };
    let first = run_convergence(&plan, &opts).unwrap();
    assert_eq!(computed.load(Ordering::SeqCst), 6);
    for seed in [0, 2] {
        std::fs::remove_file(cache.join(format!("{}.json", plan.row_key(0.25, seed)))).unwrap();
    }
    let second = run_convergence(&plan, &opts).unwrap();
    assert_eq!(computed.load(Ordering::SeqCst), 8);
    assert_eq!(first.csv().unwrap(), second.csv().unwrap());
    let fresh = run_convergence(&plan, &RunOptions { workers: 1, ..Default::default() }).unwrap();
    assert_eq!(first.csv().unwrap(), fresh.csv().unwrap());
}

#[test]
fn report_roundtrip_and_tamper_detection() {
    let plan = small_plan(ProcessSpec::Poisson { intensity: 1.5 }, RadiiSpec::Constant { value: 2.0 }, vec![4, 5]);
    let rep = run_convergence(&plan, &RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(&rep, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 5);
    let back = load_report(dir.path()).unwrap();
    assert_eq!(back.aggregates, rep.aggregates);
    assert_eq!(back.csv().unwrap(), csv);
    assert!(back.rows.iter().all(|r| r.wall_ms.is_some()));
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[1].split(',').map(String::from).collect();
    cols[2] = "999".into();
    lines[1] = cols.join(",");
    let tampered = lines.join("\n") + "\n";
    std::fs::write(dir.path().join("report.csv"), tampered).unwrap();
    assert!(matches!(load_report(dir.path()), Err(Error::CorruptReport(_))));
}

#[test]
fn slln_periodic_count_is_exact() {
    let t = slln_test(&ProcessSpec::Periodic, &RadiiSpec::Constant { value: 0.3 }, Mark::Count, &[2.0, 4.0, 8.0], &[0, 1], 3, 4.0).unwrap();
    assert!(t.verdict);
    assert!(t.rows.iter().all(|r| r.mean == 1.0 && r.stderr == 0.0));
}

#[test]
fn slln_rejects_infinite_moment_marks() {
    let radii = RadiiSpec::Pareto { scale: 1.0, tail_exponent: 1.5 };
    let err = slln_test(&ProcessSpec::Poisson { intensity: 1.0 }, &radii, Mark::RhoPower, &[2.0], &[0, 1], 5, 4.0).unwrap_err();
    assert!(matches!(err, Error::InfiniteMoment { .. }));
}

#[test]
fn thinning_lattice_cases() {
    let t = thinning_limit_test(&ProcessSpec::Periodic, &[1.5, 0.9, 0.5], &[0, 1], 3, 3.0).unwrap();
    assert_eq!(t.rows[0].mean, 0.0);
    assert_eq!(t.rows[1].mean, 1.0);
    assert_eq!(t.rows[2].mean, 1.0);
    assert_eq!(t.unthinned.mean, 1.0);
    assert_eq!(t.monotonicity_violations, 0);
    assert!(t.verdict);
}

#[test]
fn mixing_poisson_counts_are_uncorrelated() {
    let seeds: Vec<u64> = (0..200).collect();
    let t = mixing_decay_probe(&ProcessSpec::Poisson { intensity: 2.0 }, &[0.0, 1.0, 3.0], &seeds, 3, 100, 3.0).unwrap();
    // lag 0 compares Q with itself: the Poisson variance
    assert!((t.rows[0].covariance / 2.0 - 1.0).abs() < 0.3);
    assert!(t.verdict);
}

#[test]
fn stats_plan_validation_paths() {
    let mut plan = small_plan(ProcessSpec::Poisson { intensity: 1.0 }, RadiiSpec::Constant { value: 1.0 }, vec![0]);
    plan.stats.thinning = Some(ThinningPlan { deltas: vec![0.1, 0.2], seeds: vec![0, 1], count_window: 2.0 });
    assert!(matches!(plan.validate(), Err(Error::InvalidSpec { path, .. }) if path == "stats.thinning.deltas"));
    plan.stats.thinning = None;
    plan.stats.mixing = Some(MixingPlan { lags: vec![1.0], seeds: vec![0], bootstrap: 10, z_threshold: 3.0 });
    assert!(matches!(plan.validate(), Err(Error::InvalidSpec { path, .. }) if path == "stats.mixing.seeds"));
}
