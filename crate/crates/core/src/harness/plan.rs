//! TOML plan files.
//!
//! ```toml
//! version = 1
//! epsilons = [0.25, 0.125, 0.0625]
//! seeds = { start = 0, count = 50 }
//!
//! [process]
//! kind = "poisson"
//! intensity = 1.0
//!
//! [radii]
//! kind = "pareto"
//! [radii.pareto]
//! scale = 1.0
//! tail_exponent = 1.5
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{ExperimentPlan, GridRule, Mark, MixingPlan, PartitionExponents, SllnPlan, StatsPlan, ThinningPlan};
use crate::aabb::Aabb;
use crate::error::{Error, Result};
use crate::pde::{SolveMode, SourceTerm};
use crate::pointproc::{ProcessSpec, RadiiSpec, DEFAULT_MCMC_SWEEPS};

pub const PLAN_VERSION: u32 = 1;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    version: u32,
    #[serde(default)]
    domain: Option<DomainSection>,
    process: ProcessSection,
    radii: RadiiSection,
    epsilons: Vec<f64>,
    seeds: Seeds,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    source: SourceSection,
    #[serde(default)]
    partition: PartitionSection,
    #[serde(default)]
    outputs: Option<PathBuf>,
    #[serde(default)]
    stats: Option<StatsSection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProcessName {
    Periodic,
    Poisson,
    NeymanScott,
    Strauss,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessSection {
    kind: ProcessName,
    intensity: Option<f64>,
    ns_params: Option<NsParams>,
    strauss_params: Option<StraussParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NsParams {
    cluster_radius_max: f64,
    daughter_intensity: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StraussParams {
    inhibition: f64,
    interaction_distance: f64,
    mcmc_sweeps: Option<u64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum RadiiName {
    Constant,
    Pareto,
    Lognormal,
    CorrelatedPareto,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RadiiSection {
    kind: RadiiName,
    constant_value: Option<f64>,
    pareto: Option<ParetoParams>,
    lognormal: Option<LogNormalParams>,
    correlation: Option<CorrelationParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParetoParams {
    scale: f64,
    tail_exponent: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogNormalParams {
    mu: f64,
    sigma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelationParams {
    decay_exponent: f64,
    range: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Seeds {
    fn expand(self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v,
            Seeds::Range { start, count } => (start..start.saturating_add(count)).collect(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    cells_per_epsilon: u32,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { cells_per_epsilon: 8 }
    }
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum ModeName {
    Resolved,
    #[default]
    Penalty,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSection {
    mode: ModeName,
    tolerance: f64,
    max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            mode: ModeName::Penalty,
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum SourceName {
    #[default]
    Constant,
    SineBump,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SourceSection {
    kind: SourceName,
    value: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            kind: SourceName::Constant,
            value: 1.0,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PartitionSection {
    delta: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsSection {
    slln: Option<SllnSection>,
    thinning: Option<ThinningSection>,
    mixing: Option<MixingSection>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum MarkName {
    Count,
    RhoPower,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SllnSection {
    mark: MarkName,
    windows: Vec<f64>,
    seeds: Seeds,
    #[serde(default = "four")]
    z_threshold: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThinningSection {
    deltas: Vec<f64>,
    seeds: Seeds,
    #[serde(default = "four")]
    count_window: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixingSection {
    lags: Vec<f64>,
    seeds: Seeds,
    #[serde(default = "two_hundred")]
    bootstrap: usize,
    #[serde(default = "three")]
    z_threshold: f64,
}

fn four() -> f64 {
    4.0
}

fn three() -> f64 {
    3.0
}

fn two_hundred() -> usize {
    200
}

fn required<T>(v: Option<T>, path: &str, kind: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(path, format!("required for kind = \"{kind}\"")))
}

fn forbidden<T>(v: &Option<T>, path: &str, kind: &str) -> Result<()> {
    match v {
        Some(_) => Err(Error::invalid(path, format!("not used by kind = \"{kind}\""))),
        None => Ok(()),
    }
}

impl ProcessSection {
    fn into_spec(self) -> Result<ProcessSpec> {
        match self.kind {
            ProcessName::Periodic => {
                forbidden(&self.intensity, "process.intensity", "periodic")?;
                forbidden(&self.ns_params, "process.ns_params", "periodic")?;
                forbidden(&self.strauss_params, "process.strauss_params", "periodic")?;
                Ok(ProcessSpec::Periodic)
            }
            ProcessName::Poisson => {
                forbidden(&self.ns_params, "process.ns_params", "poisson")?;
                forbidden(&self.strauss_params, "process.strauss_params", "poisson")?;
                Ok(ProcessSpec::Poisson {
                    intensity: required(self.intensity, "process.intensity", "poisson")?,
                })
            }
            ProcessName::NeymanScott => {
                forbidden(&self.strauss_params, "process.strauss_params", "neyman_scott")?;
                let ns = required(self.ns_params, "process.ns_params", "neyman_scott")?;
                Ok(ProcessSpec::NeymanScott {
                    parent_intensity: required(self.intensity, "process.intensity", "neyman_scott")?,
                    cluster_radius_max: ns.cluster_radius_max,
                    daughter_intensity: ns.daughter_intensity,
                })
            }
            ProcessName::Strauss => {
                forbidden(&self.ns_params, "process.ns_params", "strauss")?;
                let st = required(self.strauss_params, "process.strauss_params", "strauss")?;
                Ok(ProcessSpec::Strauss {
                    intensity: required(self.intensity, "process.intensity", "strauss")?,
                    inhibition: st.inhibition,
                    interaction_distance: st.interaction_distance,
                    mcmc_sweeps: st.mcmc_sweeps.unwrap_or(DEFAULT_MCMC_SWEEPS),
                })
            }
        }
    }
}

impl RadiiSection {
    fn into_spec(self) -> Result<RadiiSpec> {
        let check = |kind: &str, c: bool, p: bool, l: bool, k: bool| -> Result<()> {
            if !c {
                forbidden(&self.constant_value, "radii.constant_value", kind)?;
            }
            if !p {
                forbidden(&self.pareto, "radii.pareto", kind)?;
            }
            if !l {
                forbidden(&self.lognormal, "radii.lognormal", kind)?;
            }
            if !k {
                forbidden(&self.correlation, "radii.correlation", kind)?;
            }
            Ok(())
        };
        match self.kind {
            RadiiName::Constant => {
                check("constant", true, false, false, false)?;
                Ok(RadiiSpec::Constant {
                    value: required(self.constant_value, "radii.constant_value", "constant")?,
                })
            }
            RadiiName::Pareto => {
                check("pareto", false, true, false, false)?;
                let p = required(self.pareto, "radii.pareto", "pareto")?;
                Ok(RadiiSpec::Pareto {
                    scale: p.scale,
                    tail_exponent: p.tail_exponent,
                })
            }
            RadiiName::Lognormal => {
                check("lognormal", false, false, true, false)?;
                let p = required(self.lognormal, "radii.lognormal", "lognormal")?;
                Ok(RadiiSpec::LogNormal {
                    mu: p.mu,
                    sigma: p.sigma,
                })
            }
            RadiiName::CorrelatedPareto => {
                check("correlated_pareto", false, true, false, true)?;
                let p = required(self.pareto, "radii.pareto", "correlated_pareto")?;
                let c = required(self.correlation, "radii.correlation", "correlated_pareto")?;
                Ok(RadiiSpec::CorrelatedPareto {
                    scale: p.scale,
                    tail_exponent: p.tail_exponent,
                    decay_exponent: c.decay_exponent,
                    range: c.range,
                })
            }
        }
    }
}

impl PlanFile {
    fn into_plan(self) -> Result<ExperimentPlan> {
        if self.version != PLAN_VERSION {
            return Err(Error::invalid(
                "version",
                format!("unsupported plan version {} (expected {PLAN_VERSION})", self.version),
            ));
        }
        let domain = match self.domain {
            Some(d) => Aabb::new(d.min, d.max).map_err(|e| Error::invalid("domain", e.to_string()))?,
            None => Aabb::cube(3, 0.0, 1.0)?,
        };
        let stats = match self.stats {
            None => StatsPlan::default(),
            Some(s) => StatsPlan {
                slln: s.slln.map(|p| SllnPlan {
                    mark: match p.mark {
                        MarkName::Count => Mark::Count,
                        MarkName::RhoPower => Mark::RhoPower,
                    },
                    windows: p.windows,
                    seeds: p.seeds.expand(),
                    z_threshold: p.z_threshold,
                }),
                thinning: s.thinning.map(|p| ThinningPlan {
                    deltas: p.deltas,
                    seeds: p.seeds.expand(),
                    count_window: p.count_window,
                }),
                mixing: s.mixing.map(|p| MixingPlan {
                    lags: p.lags,
                    seeds: p.seeds.expand(),
                    bootstrap: p.bootstrap,
                    z_threshold: p.z_threshold,
                }),
            },
        };
        let plan = ExperimentPlan {
            process: self.process.into_spec()?,
            radii: self.radii.into_spec()?,
            domain,
            epsilons: self.epsilons,
            seeds: self.seeds.expand(),
            grid: GridRule::CellsPerEpsilon(self.grid.cells_per_epsilon),
            mode: match self.solver.mode {
                ModeName::Resolved => SolveMode::Resolved,
                ModeName::Penalty => SolveMode::CapacityPenalty,
            },
            source: match self.source.kind {
                SourceName::Constant => SourceTerm::Constant(self.source.value),
                SourceName::SineBump => SourceTerm::SineBump,
            },
            partition: PartitionExponents {
                delta: self.partition.delta,
                alpha: self.partition.alpha,
            },
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
            outputs: self.outputs.unwrap_or_else(|| PathBuf::from("out")),
            stats,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Parses and validates a plan. Errors carry the key path of the offending
/// entry.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan> {
    let de = toml::Deserializer::new(text);
    let file: PlanFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "<root>".to_string() } else { path };
        Error::invalid(path, e.inner().message().to_string())
    })?;
    file.into_plan()
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_plan(&text)
}
