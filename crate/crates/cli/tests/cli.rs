use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_perforate"));
    c.env_remove("PERFORATE_OUT").env_remove("PERFORATE_WORKERS");
    c
}

fn plans() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../plans")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_plan(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_PERIODIC: &str = r#"
version = 1
epsilons = [0.5, 0.25]
seeds = [0]

[process]
kind = "periodic"

[radii]
kind = "constant"
constant_value = 0.5

[grid]
cells_per_epsilon = 4
"#;

#[test]
fn sample_periodic_plan_writes_64_points() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "p.toml", SMALL_PERIODIC);
    let out = dir.path().join("o");
    let o = run(&["sample", "--plan", &plan, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("points_seed0.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 64);
    assert!(lines[1..].iter().all(|l| l.split_whitespace().count() == 4));
}

#[test]
fn malformed_plans_exit_with_1_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let strauss = std::fs::read_to_string(plans().join("strauss.toml"))
        .unwrap()
        .replace("inhibition = 0.5", "inhibition = 1.5");
    let plan = write_plan(dir.path(), "s.toml", &strauss);
    let o = run(&["sample", "--plan", &plan]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strauss_params.inhibition"));

    let plan = write_plan(dir.path(), "u.toml", &SMALL_PERIODIC.replace("[grid]", "[grid]\ncolour = 1"));
    let o = run(&["convergence", "--plan", &plan]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.colour"));

    let o = run(&["solve", "--plan", &plan, "--mode", "fast"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_plan_is_a_runtime_error() {
    let o = run(&["sample", "--plan", "/nonexistent/plan.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sample_then_partition() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        "p.toml",
        &std::fs::read_to_string(plans().join("poisson_pareto.toml")).unwrap(),
    );
    let out = dir.path().join("o");
    let o = run(&["sample", "--plan", &plan, "--out", out.to_str().unwrap(), "--seed", "7"]);
    assert!(o.status.success());
    let points = out.join("points_seed7.txt");
    let o = run(&[
        "partition",
        "--config",
        points.to_str().unwrap(),
        "--epsilon",
        "0.125",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dump = std::fs::read_to_string(out.join("partition.txt")).unwrap();
    assert!(dump.contains("# scheme general"));
    assert!(dump.lines().any(|l| l.starts_with("# cap_bad_upper")));
    // too large for the sampled window
    let o = run(&["partition", "--config", points.to_str().unwrap(), "--epsilon", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_writes_fields_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), "p.toml", SMALL_PERIODIC);
    let out = dir.path().join("o");
    let o = run(&["solve", "--plan", &plan, "--out", out.to_str().unwrap(), "--epsilon", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["u_eps.grid", "u_h.grid", "row.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let row = std::fs::read_to_string(out.join("row.csv")).unwrap();
    assert!(row.lines().nth(1).unwrap().starts_with("0.5,0,8,8,0,"));
    let o = run(&["solve", "--plan", &plan, "--epsilon", "0.3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn convergence_default_periodic_plan_decreases_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let plan = plans().join("periodic.toml");
    let o = bin()
        .args(["convergence", "--plan", plan.to_str().unwrap()])
        .env("PERFORATE_OUT", &out)
        .env("PERFORATE_WORKERS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let l2: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(8).unwrap().parse().unwrap())
        .collect();
    assert_eq!(l2.len(), 3);
    assert!(l2[0] > l2[1] && l2[1] > l2[2], "{l2:?}");
    assert!(out.join("aggregate.json").exists() && out.join("timings.csv").exists());
    let o = run(&["convergence", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(out.join("report.csv")).unwrap(), csv);
}

#[test]
fn stats_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL_PERIODIC}\n[stats.slln]\nmark = \"count\"\nwindows = [2, 4]\nseeds = [0, 1]\n\
         [stats.thinning]\ndeltas = [1.5, 0.5]\nseeds = [0, 1]\n"
    );
    let plan = write_plan(dir.path(), "p.toml", &text);
    let out = dir.path().join("o");
    let o = run(&["stats", "--plan", &plan, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("slln: PASS") && stdout.contains("thinning: PASS"), "{stdout}");
    for f in ["slln.csv", "thinning.csv", "verdicts.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("mixing.csv").exists());
}
