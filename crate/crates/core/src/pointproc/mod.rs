//! Marked point processes: sampling, thinning, counting statistics and
//! snapshot files.

mod neyman_scott;
mod radii;
mod strauss;

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::error::{Error, Result};
pub use crate::measure::unit_ball_volume;
use crate::rng::{substream, Rng, Stream};
use crate::spatial::SpatialHash;

pub use radii::{copula_covariance, RadiiSpec};

/// Center process of the holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProcessSpec {
    /// The integer lattice `Z^d`.
    Periodic,
    Poisson {
        intensity: f64,
    },
    /// Poisson parents; each parent draws `r ~ U(0, R_c)` and scatters
    /// Poisson daughters of intensity `daughter_intensity` in `B_r(parent)`.
    NeymanScott {
        parent_intensity: f64,
        cluster_radius_max: f64,
        daughter_intensity: f64,
    },
    /// Gibbs process with density proportional to `alpha^n beta^R(x)`, where
    /// `R` counts pairs at distance `<= interaction_distance`.
    Strauss {
        intensity: f64,
        inhibition: f64,
        interaction_distance: f64,
        mcmc_sweeps: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessKind {
    Periodic,
    Poisson,
    NeymanScott,
    Strauss,
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProcessKind::Periodic => "Periodic",
            ProcessKind::Poisson => "Poisson",
            ProcessKind::NeymanScott => "NeymanScott",
            ProcessKind::Strauss => "Strauss",
        };
        f.write_str(s)
    }
}

pub const DEFAULT_MCMC_SWEEPS: u64 = 200;

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(path, format!("must be positive and finite, got {v}")))
    }
}

impl ProcessSpec {
    pub fn kind(&self) -> ProcessKind {
        match self {
            ProcessSpec::Periodic => ProcessKind::Periodic,
            ProcessSpec::Poisson { .. } => ProcessKind::Poisson,
            ProcessSpec::NeymanScott { .. } => ProcessKind::NeymanScott,
            ProcessSpec::Strauss { .. } => ProcessKind::Strauss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ProcessSpec::Periodic => Ok(()),
            ProcessSpec::Poisson { intensity } => positive("process.intensity", intensity),
            ProcessSpec::NeymanScott {
                parent_intensity,
                cluster_radius_max,
                daughter_intensity,
            } => {
                positive("process.intensity", parent_intensity)?;
                positive("process.ns_params.cluster_radius_max", cluster_radius_max)?;
                if !(daughter_intensity.is_finite() && daughter_intensity >= 0.0) {
                    return Err(Error::invalid(
                        "process.ns_params.daughter_intensity",
                        format!("must be nonnegative and finite, got {daughter_intensity}"),
                    ));
                }
                Ok(())
            }
            ProcessSpec::Strauss {
                intensity,
                inhibition,
                interaction_distance,
                mcmc_sweeps,
            } => {
                positive("process.intensity", intensity)?;
                if !(0.0..=1.0).contains(&inhibition) {
                    return Err(Error::invalid(
                        "process.strauss_params.inhibition",
                        format!("must lie in [0, 1] (repulsive regime), got {inhibition}"),
                    ));
                }
                positive("process.strauss_params.interaction_distance", interaction_distance)?;
                if mcmc_sweeps == 0 {
                    return Err(Error::invalid(
                        "process.strauss_params.mcmc_sweeps",
                        "must be at least 1",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Closed-form `<N(Q)>` for the unit cube; `None` for Strauss.
    pub fn mean_count(&self, dim: usize) -> Option<f64> {
        match *self {
            ProcessSpec::Periodic => Some(1.0),
            ProcessSpec::Poisson { intensity } => Some(intensity),
            ProcessSpec::NeymanScott {
                parent_intensity,
                cluster_radius_max,
                daughter_intensity,
            } => {
                // E|B_r| = omega_d E[r^d] with r ~ U(0, R_c)
                let ball = unit_ball_volume(dim) * cluster_radius_max.powi(dim as i32)
                    / (dim as f64 + 1.0);
                Some(parent_intensity * daughter_intensity * ball)
            }
            ProcessSpec::Strauss { .. } => None,
        }
    }

    /// Range beyond which the process has no dependence, used to pad windows.
    pub fn padding(&self) -> f64 {
        match *self {
            ProcessSpec::Periodic | ProcessSpec::Poisson { .. } => 0.0,
            ProcessSpec::NeymanScott {
                cluster_radius_max, ..
            } => cluster_radius_max,
            ProcessSpec::Strauss {
                interaction_distance,
                ..
            } => 3.0 * interaction_distance,
        }
    }
}


/// A finite realization `{(z_i, rho_i)}` inside a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfiguration {
    dim: usize,
    window: Aabb,
    centers: Vec<f64>,
    radii: Vec<f64>,
    seed: u64,
    kind: Option<ProcessKind>,
    mcmc_proposals: Option<u64>,
}

impl PointConfiguration {
    pub fn new(window: Aabb, centers: Vec<f64>, radii: Vec<f64>, seed: u64) -> Result<Self> {
        let dim = window.dim();
        if centers.len() != dim * radii.len() {
            return Err(Error::invalid(
                "points",
                format!("{} coordinates for {} radii in dimension {dim}", centers.len(), radii.len()),
            ));
        }
        for (i, c) in centers.chunks_exact(dim).enumerate() {
            if !window.contains(c) {
                return Err(Error::invalid(
                    format!("points[{i}]"),
                    format!("center {c:?} outside the window"),
                ));
            }
        }
        if let Some(i) = radii.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid(
                format!("points[{i}]"),
                format!("radius {} is not a finite nonnegative number", radii[i]),
            ));
        }
        Ok(Self {
            dim,
            window,
            centers,
            radii,
            seed,
            kind: None,
            mcmc_proposals: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> &Aabb {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat coordinate array, `dim` entries per point.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> Option<ProcessKind> {
        self.kind
    }

    /// Number of birth-death proposals used by the Strauss sampler.
    pub fn mcmc_proposals(&self) -> Option<u64> {
        self.mcmc_proposals
    }

    /// Points falling in `sub`, which must lie inside the window.
    pub fn restricted(&self, sub: &Aabb) -> Result<Self> {
        if sub.dim() != self.dim || !self.window.encloses(sub, 1e-12) {
            return Err(Error::WindowTooSmall(format!(
                "window {:?}..{:?} does not contain {:?}..{:?}",
                self.window.min(),
                self.window.max(),
                sub.min(),
                sub.max()
            )));
        }
        Ok(self.select(sub.clone(), |c, _| sub.contains(c)))
    }

    /// Configuration keeping only points with `mask[i]`.
    pub fn filtered(&self, mask: &[bool]) -> Self {
        let mut i = 0;
        self.select(self.window.clone(), |_, _| {
            let keep = mask[i];
            i += 1;
            keep
        })
    }

    /// Reorders points; `perm[k]` is the old index of the new `k`-th point.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.centers = perm.iter().flat_map(|&i| self.center(i).to_vec()).collect();
        out.radii = perm.iter().map(|&i| self.radii[i]).collect();
        out
    }

    fn select(&self, window: Aabb, mut keep: impl FnMut(&[f64], f64) -> bool) -> Self {
        let mut centers = Vec::new();
        let mut radii = Vec::new();
        for (c, &r) in self.centers.chunks_exact(self.dim).zip(&self.radii) {
            if keep(c, r) {
                centers.extend_from_slice(c);
                radii.push(r);
            }
        }
        Self {
            dim: self.dim,
            window,
            centers,
            radii,
            seed: self.seed,
            kind: self.kind,
            mcmc_proposals: self.mcmc_proposals,
        }
    }
}

/// Draws a marked configuration in `window`. Deterministic in all arguments.
pub fn sample(
    spec: &ProcessSpec,
    radii: &RadiiSpec,
    window: &Aabb,
    seed: u64,
) -> Result<PointConfiguration> {
    let dim = window.dim();
    if dim < 3 {
        return Err(Error::invalid(
            "domain",
            format!("dimension must be at least 3, got {dim}"),
        ));
    }
    spec.validate()?;
    radii.validate(dim)?;
    let mut proposals = None;
    let centers = match *spec {
        ProcessSpec::Periodic => lattice_points(window),
        ProcessSpec::Poisson { intensity } => {
            let mut rng = substream(seed, Stream::Centers, 0);
            poisson_points(&mut rng, window, intensity)
        }
        ProcessSpec::NeymanScott {
            parent_intensity,
            cluster_radius_max,
            daughter_intensity,
        } => neyman_scott::sample(
            window,
            parent_intensity,
            cluster_radius_max,
            daughter_intensity,
            seed,
        ),
        ProcessSpec::Strauss {
            intensity,
            inhibition,
            interaction_distance,
            mcmc_sweeps,
        } => {
            let (pts, n) = strauss::sample(
                window,
                intensity,
                inhibition,
                interaction_distance,
                mcmc_sweeps,
                seed,
            );
            proposals = Some(n);
            pts
        }
    };
    let marks = radii.sample_for(&centers, dim, seed);
    Ok(PointConfiguration {
        dim,
        window: window.clone(),
        centers,
        radii: marks,
        seed,
        kind: Some(spec.kind()),
        mcmc_proposals: proposals,
    })
}

fn lattice_points(window: &Aabb) -> Vec<f64> {
    let dim = window.dim();
    let lo: Vec<i64> = window.min().iter().map(|v| v.ceil() as i64).collect();
    let hi: Vec<i64> = window.max().iter().map(|v| v.ceil() as i64).collect();
    if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut z = lo.clone();
    loop {
        out.extend(z.iter().map(|&v| v as f64));
        let mut k = dim;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            z[k] += 1;
            if z[k] < hi[k] {
                break;
            }
            z[k] = lo[k];
        }
    }
}

pub(crate) fn poisson_count(rng: &mut Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let n: f64 = Poisson::new(mean).expect("positive finite mean").sample(rng);
    n as u64
}

pub(crate) fn uniform_in(rng: &mut Rng, window: &Aabb, out: &mut Vec<f64>) {
    for k in 0..window.dim() {
        let (a, b) = (window.min()[k], window.max()[k]);
        // guard the half-open upper face against rounding
        let mut x = a + (b - a) * rng.random::<f64>();
        if x >= b {
            x = a;
        }
        out.push(x);
    }
}

fn poisson_points(rng: &mut Rng, window: &Aabb, intensity: f64) -> Vec<f64> {
    let n = poisson_count(rng, intensity * window.volume());
    let mut out = Vec::with_capacity(n as usize * window.dim());
    for _ in 0..n {
        uniform_in(rng, window, &mut out);
    }
    out
}

/// `keep[i]` iff every other center is at distance `>= delta` from center `i`.
pub fn thin_mask(centers: &[f64], dim: usize, delta: f64) -> Vec<bool> {
    let n = centers.len() / dim;
    if !(delta > 0.0) || n < 2 {
        return vec![true; n];
    }
    let hash = SpatialHash::new(centers, dim, delta);
    let d2max = delta * delta;
    (0..n)
        .map(|i| {
            let mut keep = true;
            hash.for_each_within(hash.point(i), delta, |j, d2| {
                if j != i && d2 < d2max {
                    keep = false;
                }
            });
            keep
        })
        .collect()
}

/// The thinned configuration `Phi_delta`: points whose nearest neighbour is
/// at distance at least `delta`.
pub fn thin(config: &PointConfiguration, delta: f64) -> PointConfiguration {
    config.filtered(&thin_mask(&config.centers, config.dim, delta))
}

/// Counting statistics over the cubes of side `cube_size` tiling the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStatistics {
    pub n_points: usize,
    pub n_cubes: usize,
    /// Mean of `N(Q)/|Q|` over the cubes.
    pub mean_per_unit_cube: f64,
    /// Mean of `(N(Q)/|Q|)^2` over the cubes.
    pub second_moment_per_unit_cube: f64,
    /// Unordered pairs at distance `< cube_size`, in equal-width bins.
    pub empirical_pair_counts: Vec<u64>,
    pub pair_bin_width: f64,
}

pub const PAIR_BINS: usize = 20;

pub fn count_statistics(config: &PointConfiguration, cube_size: f64) -> Result<CountStatistics> {
    if !(cube_size.is_finite() && cube_size > 0.0) {
        return Err(Error::invalid("cube_size", "must be positive and finite"));
    }
    let dim = config.dim;
    let w = &config.window;
    let per_axis: Vec<usize> = (0..dim)
        .map(|k| (w.extent(k) / cube_size * (1.0 + 1e-12)).floor() as usize)
        .collect();
    if per_axis.contains(&0) {
        return Err(Error::CubeTooLarge);
    }
    let n_cubes: usize = per_axis.iter().product();
    let mut counts = vec![0u64; n_cubes];
    for c in config.centers.chunks_exact(dim) {
        let mut flat = 0usize;
        let mut inside = true;
        for k in 0..dim {
            let idx = ((c[k] - w.min()[k]) / cube_size).floor();
            if idx < 0.0 || idx as usize >= per_axis[k] {
                inside = false;
                break;
            }
            flat = flat * per_axis[k] + idx as usize;
        }
        if inside {
            counts[flat] += 1;
        }
    }
    let vol = cube_size.powi(dim as i32);
    let mean = counts.iter().map(|&c| c as f64 / vol).sum::<f64>() / n_cubes as f64;
    let second = counts.iter().map(|&c| (c as f64 / vol).powi(2)).sum::<f64>() / n_cubes as f64;

    let width = cube_size / PAIR_BINS as f64;
    let mut hist = vec![0u64; PAIR_BINS];
    let hash = SpatialHash::new(&config.centers, dim, cube_size);
    for i in 0..config.len() {
        hash.for_each_within(hash.point(i), cube_size, |j, d2| {
            if j > i {
                let b = (d2.sqrt() / width) as usize;
                if b < PAIR_BINS {
                    hist[b] += 1;
                }
            }
        });
    }
    Ok(CountStatistics {
        n_points: config.len(),
        n_cubes,
        mean_per_unit_cube: mean,
        second_moment_per_unit_cube: second,
        empirical_pair_counts: hist,
        pair_bin_width: width,
    })
}

/// Writes the snapshot format: a header `d window_min window_max seed`
/// (per-axis corners when the window is not a cube) and one `z_1 .. z_d rho`
/// line per point.
pub fn write_snapshot(config: &PointConfiguration, mut out: impl Write) -> Result<()> {
    let w = &config.window;
    let mut header = vec![config.dim.to_string()];
    if w.is_cube() {
        header.push(fmt_f64(w.min()[0]));
        header.push(fmt_f64(w.max()[0]));
    } else {
        header.extend(w.min().iter().map(|&v| fmt_f64(v)));
        header.extend(w.max().iter().map(|&v| fmt_f64(v)));
    }
    header.push(config.seed.to_string());
    writeln!(out, "{}", header.join(" "))?;
    for (c, r) in config.centers.chunks_exact(config.dim).zip(&config.radii) {
        let mut line: Vec<String> = c.iter().map(|&v| fmt_f64(v)).collect();
        line.push(fmt_f64(*r));
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("`{tok}`: {e}"),
    })
}

pub fn read_snapshot(input: impl BufRead) -> Result<PointConfiguration> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty snapshot".into(),
    })?;
    let header = header?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let dim: usize = toks
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing dimension".into(),
        })?;
    let window = if toks.len() == 4 {
        Aabb::cube(dim, parse_f64(toks[1], 1)?, parse_f64(toks[2], 1)?)?
    } else if toks.len() == 2 * dim + 2 {
        let v: Vec<f64> = toks[1..=2 * dim]
            .iter()
            .map(|t| parse_f64(t, 1))
            .collect::<Result<_>>()?;
        Aabb::new(v[..dim].to_vec(), v[dim..].to_vec())?
    } else {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {} fields", toks.len()),
        });
    };
    let seed: u64 = toks[toks.len() - 1].parse().map_err(|_| Error::Parse {
        line: 1,
        message: "seed is not an unsigned integer".into(),
    })?;
    let mut centers = Vec::new();
    let mut radii = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_f64(t, i + 1))
            .collect::<Result<_>>()?;
        if v.len() != dim + 1 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {} fields, got {}", dim + 1, v.len()),
            });
        }
        centers.extend_from_slice(&v[..dim]);
        radii.push(v[dim]);
    }
    PointConfiguration::new(window, centers, radii, seed)
}
