//! Ensemble checks on the point processes: the law of large numbers for
//! volume-normalized mark sums, the thinning limit and the decay of count
//! covariances with distance.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{write_atomic, Summary};
use super::ExperimentPlan;
use crate::aabb::Aabb;
use crate::capacity::{estimate_mean_count, STRAUSS_INTENSITY_SEEDS};
use crate::error::{Error, Result};
use crate::pointproc::{sample, thin_mask, unit_ball_volume, PointConfiguration, ProcessSpec, RadiiSpec};
use crate::rng::{substream, Stream};

/// Mark `X_i` summed in the law-of-large-numbers check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mark {
    /// `X_i = 1`.
    Count,
    /// `X_i = rho_i^{d-2}`.
    RhoPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnPlan {
    pub mark: Mark,
    /// Side lengths `L` of the nested windows `[0, L)^d`, increasing.
    pub windows: Vec<f64>,
    pub seeds: Vec<u64>,
    pub z_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningPlan {
    /// Strictly decreasing.
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Side of the counting cube; counts are reported per unit volume.
    pub count_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingPlan {
    /// Shifts `|x|` of the second unit cube along the first axis, increasing.
    pub lags: Vec<f64>,
    pub seeds: Vec<u64>,
    pub bootstrap: usize,
    pub z_threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsPlan {
    pub slln: Option<SllnPlan>,
    pub thinning: Option<ThinningPlan>,
    pub mixing: Option<MixingPlan>,
}

fn increasing(path: &str, v: &[f64], strict_positive: bool) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(path, "must not be empty"));
    }
    for (k, &x) in v.iter().enumerate() {
        let ok = x.is_finite() && if strict_positive { x > 0.0 } else { x >= 0.0 };
        if !ok || (k > 0 && x <= v[k - 1]) {
            return Err(Error::invalid(path, format!("entries must be increasing and {}, got {v:?}",
                if strict_positive { "positive" } else { "nonnegative" })));
        }
    }
    Ok(())
}

fn enough_seeds(path: &str, seeds: &[u64]) -> Result<()> {
    if seeds.len() < 2 {
        return Err(Error::invalid(path, "need at least 2 seeds for a standard error"));
    }
    Ok(())
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(path, format!("must be positive, got {v}")))
    }
}

impl StatsPlan {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.slln {
            increasing("stats.slln.windows", &p.windows, true)?;
            enough_seeds("stats.slln.seeds", &p.seeds)?;
            positive("stats.slln.z_threshold", p.z_threshold)?;
        }
        if let Some(p) = &self.thinning {
            let rev: Vec<f64> = p.deltas.iter().rev().copied().collect();
            increasing("stats.thinning.deltas", &rev, true)
                .map_err(|_| Error::invalid("stats.thinning.deltas", "must be positive and strictly decreasing"))?;
            enough_seeds("stats.thinning.seeds", &p.seeds)?;
            positive("stats.thinning.count_window", p.count_window)?;
        }
        if let Some(p) = &self.mixing {
            increasing("stats.mixing.lags", &p.lags, false)?;
            enough_seeds("stats.mixing.seeds", &p.seeds)?;
            if p.bootstrap < 2 {
                return Err(Error::invalid("stats.mixing.bootstrap", "need at least 2 resamples"));
            }
            positive("stats.mixing.z_threshold", p.z_threshold)?;
        }
        Ok(())
    }
}

fn count_in(config: &PointConfiguration, b: &Aabb) -> usize {
    (0..config.len()).filter(|&i| b.contains(config.center(i))).count()
}

/// `<N(Q)>` with its standard error (zero for closed forms).
fn reference_count(spec: &ProcessSpec, dim: usize) -> Result<(f64, f64)> {
    match spec.mean_count(dim) {
        Some(v) => Ok((v, 0.0)),
        None => {
            let e = estimate_mean_count(spec, dim, STRAUSS_INTENSITY_SEEDS)?;
            Ok((e.mean, e.stderr))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnRow {
    pub window: f64,
    /// Ensemble mean of `L^-d sum_{z_i in [0,L)^d} X_i`.
    pub mean: f64,
    pub stderr: f64,
    pub abs_deviation: f64,
    /// Ensemble mean of the per-realization `|L^-d sum X_i - target|`.
    pub mean_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnTable {
    pub mark: Mark,
    /// `<N(Q)> <X>` per unit volume.
    pub target: f64,
    pub target_stderr: f64,
    pub rows: Vec<SllnRow>,
    pub final_within: bool,
    pub deviation_decreasing: bool,
    pub verdict: bool,
}

/// Volume-normalized mark sums over nested windows of one realization per
/// seed. Passes when the largest window's ensemble mean lies within
/// `z_threshold` standard errors of the target and the mean absolute
/// deviation does not increase in at least 2 of the last 3 window steps.
pub fn slln_test(
    spec: &ProcessSpec,
    radii: &RadiiSpec,
    mark: Mark,
    windows: &[f64],
    seeds: &[u64],
    dim: usize,
    z_threshold: f64,
) -> Result<SllnTable> {
    spec.validate()?;
    let m = dim as f64 - 2.0;
    let mark_mean = match mark {
        Mark::Count => 1.0,
        Mark::RhoPower => radii.moment(m)?,
    };
    radii.validate(dim)?;
    increasing("windows", windows, true)?;
    enough_seeds("seeds", seeds)?;
    let (count, count_se) = reference_count(spec, dim)?;
    let target = count * mark_mean;
    let target_stderr = count_se * mark_mean;
    let big = Aabb::cube(dim, 0.0, *windows.last().expect("nonempty"))?;
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let c = sample(spec, radii, &big, seed)?;
            windows
                .iter()
                .map(|&l| {
                    let w = Aabb::cube(dim, 0.0, l)?;
                    let mut s = crate::pde::CompensatedSum::default();
                    for i in 0..c.len() {
                        if w.contains(c.center(i)) {
                            s.add(match mark {
                                Mark::Count => 1.0,
                                Mark::RhoPower => c.radii()[i].powf(m),
                            });
                        }
                    }
                    Ok(s.value() / w.volume())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SllnRow> = windows
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let vals: Vec<f64> = per_seed.iter().map(|v| v[k]).collect();
            let s = Summary::of(&vals).expect("at least 2 seeds");
            let devs: Vec<f64> = vals.iter().map(|v| (v - target).abs()).collect();
            SllnRow {
                window: l,
                mean: s.mean,
                stderr: s.stderr,
                abs_deviation: (s.mean - target).abs(),
                mean_abs_deviation: Summary::of(&devs).expect("nonempty").mean,
            }
        })
        .collect();
    let last = rows.last().expect("nonempty");
    let band = z_threshold * last.stderr.hypot(target_stderr) + 1e-12 * target.abs();
    let final_within = last.abs_deviation <= band;
    let steps = rows.len() - 1;
    let considered = steps.min(3);
    let need = considered.min(2);
    let nonincreasing = rows[rows.len() - 1 - considered..]
        .windows(2)
        .filter(|w| w[1].mean_abs_deviation <= w[0].mean_abs_deviation * (1.0 + 1e-12) + 1e-15)
        .count();
    let deviation_decreasing = nonincreasing >= need;
    Ok(SllnTable {
        mark,
        target,
        target_stderr,
        rows,
        final_within,
        deviation_decreasing,
        verdict: final_within && deviation_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningRow {
    pub delta: f64,
    /// Ensemble mean of `N_delta` per unit volume.
    pub mean: f64,
    pub stderr: f64,
    /// `lambda exp(-lambda |B_delta|)` for Poisson, the exact value for the
    /// lattice, `None` otherwise.
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningTable {
    pub rows: Vec<ThinningRow>,
    /// Unthinned count per unit volume.
    pub unthinned: Summary,
    /// Realizations in which some `N_delta` decreased as `delta` decreased.
    pub monotonicity_violations: usize,
    pub verdict: bool,
}

/// Mean retained counts of the thinned process in `[0, count_window)^d` as
/// `delta` decreases. The sample window is padded by the largest `delta` so
/// that thinning sees every neighbour of a counted point.
pub fn thinning_limit_test(
    spec: &ProcessSpec,
    deltas: &[f64],
    seeds: &[u64],
    dim: usize,
    count_window: f64,
) -> Result<ThinningTable> {
    spec.validate()?;
    let rev: Vec<f64> = deltas.iter().rev().copied().collect();
    increasing("deltas", &rev, true)?;
    enough_seeds("seeds", seeds)?;
    positive("count_window", count_window)?;
    let pad = deltas[0];
    let window = Aabb::cube(dim, -pad, count_window + pad)?;
    let count_box = Aabb::cube(dim, 0.0, count_window)?;
    let vol = count_box.volume();
    let radii = RadiiSpec::Constant { value: 1.0 };
    let per_seed: Vec<(f64, Vec<f64>, bool)> = seeds
        .par_iter()
        .map(|&seed| {
            let c = sample(spec, &radii, &window, seed)?;
            let n = count_in(&c, &count_box);
            let counts: Vec<usize> = deltas
                .iter()
                .map(|&d| {
                    let mask = thin_mask(c.centers(), dim, d);
                    (0..c.len()).filter(|&i| mask[i] && count_box.contains(c.center(i))).count()
                })
                .collect();
            let monotone = counts.windows(2).all(|w| w[0] <= w[1]) && counts.iter().all(|&k| k <= n);
            Ok((n as f64 / vol, counts.iter().map(|&k| k as f64 / vol).collect(), monotone))
        })
        .collect::<Result<_>>()?;
    let base: Vec<f64> = per_seed.iter().map(|x| x.0).collect();
    let unthinned = Summary::of(&base).expect("at least 2 seeds");
    let ball = unit_ball_volume(dim);
    let rows: Vec<ThinningRow> = deltas
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let vals: Vec<f64> = per_seed.iter().map(|x| x.1[k]).collect();
            let s = Summary::of(&vals).expect("at least 2 seeds");
            let reference = match *spec {
                ProcessSpec::Poisson { intensity } => {
                    Some(intensity * (-intensity * ball * d.powi(dim as i32)).exp())
                }
                ProcessSpec::Periodic => Some(if d <= 1.0 { 1.0 } else { 0.0 }),
                _ => None,
            };
            ThinningRow {
                delta: d,
                mean: s.mean,
                stderr: s.stderr,
                reference,
            }
        })
        .collect();
    let violations = per_seed.iter().filter(|x| !x.2).count();
    let means_monotone = rows.windows(2).all(|w| w[0].mean <= w[1].mean);
    let gap = |r: &ThinningRow| unthinned.mean - r.mean;
    let approaching = gap(rows.last().expect("nonempty")) <= gap(&rows[0]);
    Ok(ThinningTable {
        rows,
        unthinned,
        monotonicity_violations: violations,
        verdict: violations == 0 && means_monotone && approaching,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingRow {
    pub lag: f64,
    /// Empirical `cov(N(Q), N(Q + lag e_1))`.
    pub covariance: f64,
    /// Bootstrap standard error over seeds.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingTable {
    pub rows: Vec<MixingRow>,
    pub verdict: bool,
}

fn covariance(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
    idx.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / (n - 1.0)
}

/// Covariance of the counts in `Q = [0,1)^d` and `Q + lag e_1` across seeds.
/// Passes when the covariance at the largest lag is within `z_threshold`
/// bootstrap standard errors of zero.
pub fn mixing_decay_probe(
    spec: &ProcessSpec,
    lags: &[f64],
    seeds: &[u64],
    dim: usize,
    bootstrap: usize,
    z_threshold: f64,
) -> Result<MixingTable> {
    spec.validate()?;
    increasing("lags", lags, false)?;
    enough_seeds("seeds", seeds)?;
    let lmax = *lags.last().expect("nonempty");
    let mut hi = vec![1.0; dim];
    hi[0] += lmax;
    let window = Aabb::new(vec![0.0; dim], hi)?;
    let q = Aabb::cube(dim, 0.0, 1.0)?;
    let radii = RadiiSpec::Constant { value: 1.0 };
    let counts: Vec<(f64, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let c = sample(spec, &radii, &window, seed)?;
            let n0 = count_in(&c, &q) as f64;
            let shifted = lags
                .iter()
                .map(|&l| {
                    let mut x = vec![0.0; dim];
                    x[0] = l;
                    count_in(&c, &q.translated(&x)) as f64
                })
                .collect();
            Ok((n0, shifted))
        })
        .collect::<Result<_>>()?;
    let n0: Vec<f64> = counts.iter().map(|c| c.0).collect();
    let all: Vec<usize> = (0..seeds.len()).collect();
    let resamples: Vec<Vec<usize>> = (0..bootstrap)
        .map(|b| {
            let mut rng = substream(seeds[0], Stream::Bootstrap, b as u64);
            (0..seeds.len()).map(|_| rng.random_range(0..seeds.len())).collect()
        })
        .collect();
    let rows: Vec<MixingRow> = lags
        .iter()
        .enumerate()
        .map(|(k, &lag)| {
            let nx: Vec<f64> = counts.iter().map(|c| c.1[k]).collect();
            let boot: Vec<f64> = resamples.iter().map(|idx| covariance(&n0, &nx, idx)).collect();
            let spread = Summary::of(&boot).expect("at least 2 resamples");
            MixingRow {
                lag,
                covariance: covariance(&n0, &nx, &all),
                stderr: spread.stderr * (boot.len() as f64).sqrt(),
            }
        })
        .collect();
    let last = rows.last().expect("nonempty");
    let verdict = last.covariance.abs() <= z_threshold * last.stderr;
    Ok(MixingTable { rows, verdict })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub slln: Option<SllnTable>,
    pub thinning: Option<ThinningTable>,
    pub mixing: Option<MixingTable>,
}

impl StatsReport {
    /// Conjunction of the verdicts of the tests that ran.
    pub fn verdict(&self) -> bool {
        self.slln.as_ref().is_none_or(|t| t.verdict)
            && self.thinning.as_ref().is_none_or(|t| t.verdict)
            && self.mixing.as_ref().is_none_or(|t| t.verdict)
    }
}

/// Runs the tests configured in the plan's `stats` section on its process.
pub fn run_stats(plan: &ExperimentPlan) -> Result<StatsReport> {
    plan.validate()?;
    let dim = plan.dim();
    let s = &plan.stats;
    Ok(StatsReport {
        slln: s
            .slln
            .as_ref()
            .map(|p| slln_test(&plan.process, &plan.radii, p.mark, &p.windows, &p.seeds, dim, p.z_threshold))
            .transpose()?,
        thinning: s
            .thinning
            .as_ref()
            .map(|p| thinning_limit_test(&plan.process, &p.deltas, &p.seeds, dim, p.count_window))
            .transpose()?,
        mixing: s
            .mixing
            .as_ref()
            .map(|p| mixing_decay_probe(&plan.process, &p.lags, &p.seeds, dim, p.bootstrap, p.z_threshold))
            .transpose()?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one CSV table per test that ran plus `verdicts.json`.
pub fn write_stats(report: &StatsReport, dir: &Path) -> Result<()> {
    if let Some(t) = &report.slln {
        write_atomic(&dir.join("slln.csv"), |w| {
            writeln!(w, "window,mean,stderr,target,abs_deviation,mean_abs_deviation")?;
            for r in &t.rows {
                writeln!(w, "{},{},{},{},{},{}", r.window, r.mean, r.stderr, t.target, r.abs_deviation, r.mean_abs_deviation)?;
            }
            Ok(())
        })?;
    }
    if let Some(t) = &report.thinning {
        write_atomic(&dir.join("thinning.csv"), |w| {
            writeln!(w, "delta,mean,stderr,reference,unthinned_mean")?;
            for r in &t.rows {
                writeln!(w, "{},{},{},{},{}", r.delta, r.mean, r.stderr, opt(r.reference), t.unthinned.mean)?;
            }
            Ok(())
        })?;
    }
    if let Some(t) = &report.mixing {
        write_atomic(&dir.join("mixing.csv"), |w| {
            writeln!(w, "lag,covariance,stderr")?;
            for r in &t.rows {
                writeln!(w, "{},{},{}", r.lag, r.covariance, r.stderr)?;
            }
            Ok(())
        })?;
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&dir.join("verdicts.json"), |w| Ok(writeln!(w, "{json}")?))
}
