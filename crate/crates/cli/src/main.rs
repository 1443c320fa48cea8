use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use perforate::geometry::{build_holes, write_partition_dump};
use perforate::harness::{
    load_plan, partition_for, run_convergence, run_stats, with_workers, write_atomic, write_report,
    write_stats, ExperimentPlan, PartitionExponents, RunOptions, Sweep, CSV_HEADER,
};
use perforate::pde::{write_grid, SolveMode};
use perforate::pointproc::{read_snapshot, sample, write_snapshot};
use perforate::{Aabb, Error, Result};

const ENV_OUT: &str = "PERFORATE_OUT";
const ENV_WORKERS: &str = "PERFORATE_WORKERS";

/// Random perforated domains: sampling, good/bad partitions, perforated and
/// homogenized Poisson solves, convergence sweeps and process statistics.
#[derive(Parser)]
#[command(name = "perforate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the plan's process on (1/eps_min) D and write the points.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify the holes of a point file into good and bad.
    Partition {
        /// Point file written by `sample`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        /// Plan supplying D and the partition exponents (default: unit cube).
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one (eps, seed) row and write both fields.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// One of the plan's epsilons (default: the smallest).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Run every (eps, seed) row; resumes from finished rows.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Law of large numbers, thinning and mixing checks from the plan's
    /// `stats` section.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    plan: PathBuf,
    /// Output directory (default: $PERFORATE_OUT, then the plan's `outputs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Resolved,
    Penalty,
}

impl From<Mode> for SolveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Resolved => SolveMode::Resolved,
            Mode::Penalty => SolveMode::CapacityPenalty,
        }
    }
}

fn out_dir(flag: Option<PathBuf>, plan: Option<&ExperimentPlan>) -> PathBuf {
    flag.or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from))
        .or_else(|| plan.map(|p| p.outputs.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn workers(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(ENV_WORKERS) {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::invalid(ENV_WORKERS, format!("not a worker count: {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn load(common: &Common, mode: Option<Mode>) -> Result<(ExperimentPlan, PathBuf)> {
    let mut plan = load_plan(&common.plan)?;
    if let Some(m) = mode {
        plan.mode = m.into();
    }
    let out = out_dir(common.out.clone(), Some(&plan));
    Ok((plan, out))
}

fn cmd_sample(common: Common, seed: Option<u64>) -> Result<()> {
    let (plan, out) = load(&common, None)?;
    let seed = seed.unwrap_or(plan.seeds[0]);
    let config = sample(&plan.process, &plan.radii, &plan.sample_window(), seed)?;
    let path = out.join(format!("points_seed{seed}.txt"));
    write_atomic(&path, |w| write_snapshot(&config, w))?;
    println!("{} points -> {}", config.len(), path.display());
    Ok(())
}

fn cmd_partition(config: &Path, epsilon: f64, plan: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let file = std::fs::File::open(config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
    let points = read_snapshot(BufReader::new(file))?;
    let plan = plan.map(|p| load_plan(&p)).transpose()?;
    let (domain, exps) = match &plan {
        Some(p) => (p.domain.clone(), p.partition),
        None => (Aabb::cube(points.dim(), 0.0, 1.0)?, PartitionExponents::default()),
    };
    let holes = build_holes(&points, epsilon, &domain)?;
    let partition = partition_for(&holes, exps)?;
    let path = out_dir(out, plan.as_ref()).join("partition.txt");
    write_atomic(&path, |w| write_partition_dump(&holes, &partition, w))?;
    println!(
        "{} holes: {} good, {} bad; cap_bad_upper = {:e} -> {}",
        holes.len(),
        partition.n_good(),
        partition.n_bad(),
        partition.cap_bad_upper(),
        path.display()
    );
    Ok(())
}

fn cmd_solve(common: Common, seed: Option<u64>, epsilon: Option<f64>, mode: Option<Mode>) -> Result<()> {
    let (plan, out) = load(&common, mode)?;
    let k = match epsilon {
        None => plan.epsilons.len() - 1,
        Some(e) => plan.epsilons.iter().position(|&x| x == e).ok_or_else(|| {
            Error::invalid("epsilon", format!("{e} is not one of the plan's epsilons {:?}", plan.epsilons))
        })?,
    };
    let seed = seed.unwrap_or(plan.seeds[0]);
    let sweep = Sweep::new(&plan)?;
    let (row, u) = sweep.solve_row(k, seed);
    let u = u.ok_or_else(|| Error::Io(row.status.clone()))?;
    write_atomic(&out.join("u_eps.grid"), |w| write_grid(&u, w))?;
    write_atomic(&out.join("u_h.grid"), |w| write_grid(sweep.homogenized(k)?, w))?;
    let report = perforate::harness::ExperimentReport {
        c0: sweep.c0(),
        aggregates: Vec::new(),
        rows: vec![row.clone()],
    };
    let csv = report.csv()?;
    write_atomic(&out.join("row.csv"), |w| Ok(w.write_all(csv.as_bytes())?))?;
    println!("{CSV_HEADER}");
    print!("{}", csv.lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
    Ok(())
}

fn cmd_convergence(
    common: Common,
    seed: Option<u64>,
    workers_flag: Option<usize>,
    mode: Option<Mode>,
    cancel: Arc<AtomicBool>,
) -> Result<()> {
    let (mut plan, out) = load(&common, mode)?;
    if let Some(s) = seed {
        plan.seeds = vec![s];
    }
    let opts = RunOptions {
        workers: workers(workers_flag)?,
        cancel: Some(cancel),
        cache: Some(out.join("rows")),
        progress: Some(Arc::new(|r| {
            eprintln!(
                "eps={} seed={} {} ({:.1} s)",
                r.epsilon,
                r.seed,
                r.status,
                r.wall_ms.unwrap_or(0.0) / 1e3
            );
        })),
    };
    let report = run_convergence(&plan, &opts)?;
    write_report(&report, &out)?;
    println!("C0 = {}", report.c0);
    println!("epsilon,n_rows,n_ok,mean_l2_err,mean_weak_indicator,mean_strange_density,mean_eps_d_Ib,mean_cap_bad_upper");
    for a in &report.aggregates {
        let m = |k: &str| a.mean(k).map(|v| format!("{v:e}")).unwrap_or_default();
        println!(
            "{},{},{},{},{},{},{},{}",
            a.epsilon,
            a.n_rows,
            a.n_ok,
            m("l2_err"),
            m("weak_indicator"),
            m("strange_density"),
            m("eps_d_Ib"),
            m("cap_bad_upper")
        );
    }
    println!("-> {}", out.display());
    Ok(())
}

fn cmd_stats(common: Common, workers_flag: Option<usize>) -> Result<()> {
    let (plan, out) = load(&common, None)?;
    let report = with_workers(workers(workers_flag)?, || run_stats(&plan))??;
    write_stats(&report, &out)?;
    let verdict = |v: bool| if v { "PASS" } else { "FAIL" };
    if let Some(t) = &report.slln {
        println!("slln: {} (target {}, final mean {})", verdict(t.verdict), t.target, t.rows.last().map_or(f64::NAN, |r| r.mean));
    }
    if let Some(t) = &report.thinning {
        println!("thinning: {} ({} monotonicity violations)", verdict(t.verdict), t.monotonicity_violations);
    }
    if let Some(t) = &report.mixing {
        println!("mixing: {}", verdict(t.verdict));
    }
    println!("-> {}", out.display());
    Ok(())
}

fn run(cli: Cli, cancel: Arc<AtomicBool>) -> Result<()> {
    match cli.command {
        Command::Sample { common, seed } => cmd_sample(common, seed),
        Command::Partition {
            config,
            epsilon,
            plan,
            out,
        } => cmd_partition(&config, epsilon, plan, out),
        Command::Solve {
            common,
            seed,
            epsilon,
            mode,
        } => cmd_solve(common, seed, epsilon, mode),
        Command::Convergence {
            common,
            seed,
            workers,
            mode,
        } => cmd_convergence(common, seed, workers, mode, cancel),
        Command::Stats { common, workers } => cmd_stats(common, workers),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    let _ = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(2);
        }
        eprintln!("interrupted: finishing rows in flight (press again to abort)");
    });
    match run(cli, cancel) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e == Error::Cancelled {
                eprintln!("finished rows are cached; rerun the same command to resume");
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
