//! Monte Carlo convergence sweeps and the statistical checks on the point
//! processes.

mod plan;
mod report;
mod stats;
#[cfg(test)]
mod tests;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aabb::Aabb;
use crate::capacity::{empirical_strange_density, strange_term};
use crate::error::{Error, Result};
use crate::geometry::{
    build_holes, check_exponent, default_exponent, partition_general, partition_periodic, HolePartition,
    HoleSet,
};
use crate::pde::{
    norms, solve_homogenized, solve_perforated, weak_indicator, GridField, GridSpec, SolveMode,
    SolveOptions, SourceTerm,
};
use crate::pointproc::{sample, ProcessKind, ProcessSpec, RadiiSpec};

pub use plan::{load_plan, parse_plan, PLAN_VERSION};
pub use report::{
    aggregate, load_report, write_atomic, write_report, EpsilonAggregate, ExperimentReport, Row,
    Summary, CSV_HEADER, METRICS,
};
pub use stats::{
    mixing_decay_probe, run_stats, slln_test, thinning_limit_test, write_stats, Mark, MixingPlan, MixingRow,
    MixingTable, SllnPlan, SllnRow, SllnTable, StatsPlan, StatsReport, ThinningPlan, ThinningRow,
    ThinningTable,
};

/// Grid spacing as a function of `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridRule {
    /// `h = eps / n`.
    CellsPerEpsilon(u32),
}

impl GridRule {
    pub fn spacing(&self, epsilon: f64) -> f64 {
        match *self {
            GridRule::CellsPerEpsilon(n) => epsilon / n as f64,
        }
    }
}

/// Exponents of the good/bad partition; `None` selects `1/(d-2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionExponents {
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub process: ProcessSpec,
    pub radii: RadiiSpec,
    pub domain: Aabb,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub grid: GridRule,
    pub mode: SolveMode,
    pub source: SourceTerm,
    pub partition: PartitionExponents,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub outputs: PathBuf,
    pub stats: StatsPlan,
}

impl ExperimentPlan {
    /// A plan with the default ladder `{1/4, 1/8, 1/16}`, `h = eps/8`,
    /// penalty mode and `f = 1` on the unit cube.
    pub fn new(process: ProcessSpec, radii: RadiiSpec, seeds: Vec<u64>) -> Self {
        Self {
            process,
            radii,
            domain: Aabb::cube(3, 0.0, 1.0).expect("unit cube"),
            epsilons: vec![0.25, 0.125, 0.0625],
            seeds,
            grid: GridRule::CellsPerEpsilon(8),
            mode: SolveMode::CapacityPenalty,
            source: SourceTerm::Constant(1.0),
            partition: PartitionExponents::default(),
            tolerance: 1e-8,
            max_iterations: 100_000,
            outputs: PathBuf::from("out"),
            stats: StatsPlan::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim < 3 {
            return Err(Error::invalid("domain", format!("dimension must be at least 3, got {dim}")));
        }
        self.process.validate()?;
        self.radii.validate(dim)?;
        if self.epsilons.is_empty() {
            return Err(Error::invalid("epsilons", "must not be empty"));
        }
        for (k, &e) in self.epsilons.iter().enumerate() {
            if !(e.is_finite() && e > 0.0 && e <= 1.0) {
                return Err(Error::invalid("epsilons", format!("entry {k} must lie in (0, 1], got {e}")));
            }
            if k > 0 && e >= self.epsilons[k - 1] {
                return Err(Error::invalid("epsilons", "must be strictly decreasing"));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "must not be empty"));
        }
        let GridRule::CellsPerEpsilon(n) = self.grid;
        if n < 4 {
            return Err(Error::invalid(
                "grid.cells_per_epsilon",
                format!("need at least 4 grid cells per eps-cell, got {n}"),
            ));
        }
        for &e in &self.epsilons {
            GridSpec::for_domain(&self.domain, self.grid.spacing(e))
                .map_err(|err| Error::invalid("grid.cells_per_epsilon", err.to_string()))?;
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid("solver.tolerance", "must lie in (0, 1)"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("solver.max_iterations", "must be at least 1"));
        }
        if let Some(d) = self.partition.delta {
            check_exponent("partition.delta", d, dim)?;
        }
        if let Some(a) = self.partition.alpha {
            check_exponent("partition.alpha", a, dim)?;
        }
        self.stats.validate()
    }

    /// Window on which each seed is sampled: `(1/eps_min) D`. Every row of a
    /// seed restricts this one realization.
    pub fn sample_window(&self) -> Aabb {
        let eps_min = *self.epsilons.last().expect("validated");
        self.domain.scaled(1.0 / eps_min)
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            cancel: None,
        }
    }

    fn delta(&self) -> f64 {
        self.partition.delta.unwrap_or_else(|| default_exponent(self.dim()))
    }

    fn alpha(&self) -> f64 {
        self.partition.alpha.unwrap_or_else(|| default_exponent(self.dim()))
    }

    /// Content hash of everything that determines the row `(eps, seed)`.
    pub fn row_key(&self, epsilon: f64, seed: u64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            format: &'a str,
            process: &'a ProcessSpec,
            radii: &'a RadiiSpec,
            domain: &'a Aabb,
            window: Aabb,
            epsilon: f64,
            seed: u64,
            h: f64,
            mode: SolveMode,
            source: SourceTerm,
            delta: f64,
            alpha: f64,
            tolerance: f64,
            max_iterations: usize,
        }
        let key = Key {
            format: concat!("perforate-row/", env!("CARGO_PKG_VERSION")),
            process: &self.process,
            radii: &self.radii,
            domain: &self.domain,
            window: self.sample_window(),
            epsilon,
            seed,
            h: self.grid.spacing(epsilon),
            mode: self.mode,
            source: self.source,
            delta: self.delta(),
            alpha: self.alpha(),
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        };
        let bytes = serde_json::to_vec(&key).expect("key serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

/// Partition matching the configuration: the lattice scheme for periodic
/// centers, the general scheme otherwise.
pub fn partition_for(holes: &HoleSet, partition: PartitionExponents) -> Result<HolePartition> {
    let dim = holes.dim();
    match holes.kind() {
        Some(ProcessKind::Periodic) => {
            partition_periodic(holes, partition.delta.unwrap_or_else(|| default_exponent(dim)))
        }
        _ => partition_general(holes, partition.alpha.unwrap_or_else(|| default_exponent(dim))),
    }
}

pub type Progress = Arc<dyn Fn(&Row) + Send + Sync>;

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `0` uses the available parallelism.
    pub workers: usize,
    /// When set, no new row starts; rows in flight finish.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Directory of finished rows keyed by [`ExperimentPlan::row_key`].
    pub cache: Option<PathBuf>,
    pub progress: Option<Progress>,
}

/// Runs `f` on a pool of `workers` threads (`0` = available parallelism).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(pool.install(f))
}

/// Everything a row needs that is shared across rows.
pub struct Sweep<'a> {
    plan: &'a ExperimentPlan,
    c0: f64,
    homogenized: Vec<OnceLock<std::result::Result<GridField, Error>>>,
}

impl<'a> Sweep<'a> {
    pub fn new(plan: &'a ExperimentPlan) -> Result<Self> {
        plan.validate()?;
        let c0 = strange_term(&plan.process, &plan.radii, plan.dim())?;
        Ok(Self {
            plan,
            c0,
            homogenized: plan.epsilons.iter().map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    fn rhs(&self, k: usize) -> Result<GridField> {
        let h = self.plan.grid.spacing(self.plan.epsilons[k]);
        Ok(self.plan.source.sample(&GridSpec::for_domain(&self.plan.domain, h)?))
    }

    /// `u_h` on the grid of `epsilons[k]`, solved once.
    pub fn homogenized(&self, k: usize) -> Result<&GridField> {
        self.homogenized[k]
            .get_or_init(|| {
                let f = self.rhs(k)?;
                solve_homogenized(self.c0, &f, &self.plan.solve_options()).map(|(u, _)| u)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Perforated solution for `(epsilons[k], seed)` together with its row.
    pub fn solve_row(&self, k: usize, seed: u64) -> (Row, Option<GridField>) {
        let start = Instant::now();
        let eps = self.plan.epsilons[k];
        let mut row = Row::empty(eps, seed);
        let u = match self.fill_row(k, seed, &mut row) {
            Ok(u) => Some(u),
            Err(e) => {
                row.status = format!("error: {e}");
                None
            }
        };
        row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        (row, u)
    }

    fn fill_row(&self, k: usize, seed: u64, row: &mut Row) -> Result<GridField> {
        let plan = self.plan;
        let eps = plan.epsilons[k];
        let config = sample(&plan.process, &plan.radii, &plan.sample_window(), seed)?;
        let holes = build_holes(&config, eps, &plan.domain)?;
        row.n_holes = Some(holes.len());
        match partition_for(&holes, plan.partition) {
            Ok(p) => {
                row.n_good = Some(p.n_good());
                row.n_bad = Some(p.n_bad());
                row.eps_d_ib = Some(eps.powi(plan.dim() as i32) * p.n_bad() as f64);
                row.cap_bad_upper = Some(p.cap_bad_upper());
                row.strange_density = Some(empirical_strange_density(&p, &holes));
            }
            Err(e) => row.status = format!("partition_error: {e}"),
        }
        let f = self.rhs(k)?;
        let (u, rep) = solve_perforated(&holes, &f, plan.mode, &plan.solve_options())?;
        row.iters = Some(rep.iterations);
        row.residual = Some(rep.final_relative_residual);
        let uh = self.homogenized(k)?;
        row.l2_err = Some(norms(&u, uh)?.l2_error);
        row.weak_indicator = Some(weak_indicator(&u, uh)?);
        Ok(u)
    }
}

fn cached_row(dir: &Path, key: &str) -> Option<Row> {
    let text = std::fs::read_to_string(dir.join(format!("{key}.json"))).ok()?;
    serde_json::from_str(&text).ok()
}

fn store_row(dir: &Path, key: &str, row: &Row) -> Result<()> {
    let text = serde_json::to_string(row).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&dir.join(format!("{key}.json")), |w| Ok(w.write_all(text.as_bytes())?))
}

/// Runs every `(eps, seed)` row of the plan. Failed rows are recorded with
/// their error; finished rows found in the cache are reused.
pub fn run_convergence(plan: &ExperimentPlan, opts: &RunOptions) -> Result<ExperimentReport> {
    let sweep = Sweep::new(plan)?;
    if let Some(dir) = &opts.cache {
        std::fs::create_dir_all(dir)?;
    }
    // small eps first: the largest solves start early
    let jobs: Vec<(usize, usize)> = (0..plan.epsilons.len())
        .rev()
        .flat_map(|k| (0..plan.seeds.len()).map(move |s| (k, s)))
        .collect();
    let cancelled = || opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
    let results: Vec<Result<Option<((usize, usize), Row)>>> = with_workers(opts.workers, || {
        jobs.par_iter()
            .map(|&(k, s)| {
                let (eps, seed) = (plan.epsilons[k], plan.seeds[s]);
                let key = plan.row_key(eps, seed);
                if let Some(row) = opts.cache.as_deref().and_then(|d| cached_row(d, &key)) {
                    return Ok(Some(((k, s), row)));
                }
                if cancelled() {
                    return Ok(None);
                }
                let (row, _) = sweep.solve_row(k, seed);
                if let Some(dir) = &opts.cache {
                    store_row(dir, &key, &row)?;
                }
                if let Some(p) = &opts.progress {
                    p(&row);
                }
                Ok(Some(((k, s), row)))
            })
            .collect()
    })?;
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r? {
            Some(x) => rows.push(x),
            None => return Err(Error::Cancelled),
        }
    }
    rows.sort_by_key(|(idx, _)| *idx);
    let rows: Vec<Row> = rows.into_iter().map(|(_, r)| r).collect();
    Ok(ExperimentReport {
        c0: sweep.c0,
        aggregates: aggregate(&rows, &plan.epsilons),
        rows,
    })
}
