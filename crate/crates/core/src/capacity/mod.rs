//! Harmonic capacities, the strange term and the oscillating test function.

mod fd;
mod test_function;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HolePartition, HoleSet};
use crate::pointproc::{sample, ProcessSpec, RadiiSpec};
use crate::Aabb;

pub use crate::measure::sigma_d;
pub use fd::{cap_fd, BoundaryTreatment, FdOptions, InnerBall};
pub use test_function::{build_test_function, Formula, HoleRecord, TestFunctionField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapacityMethod {
    Analytic,
    FdRelaxation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub value: f64,
    pub method: CapacityMethod,
    pub grid_h: Option<f64>,
    pub iterations: Option<usize>,
}

/// `Cap(B_r, B_R) = (d-2) sigma_d / (r^{-(d-2)} - R^{-(d-2)})`; `R` may be
/// infinite and `r = 0` gives 0.
pub fn cap_annulus_analytic(r: f64, outer: f64, dim: usize) -> Result<CapacityResult> {
    if dim < 3 {
        return Err(Error::invalid("dimension", format!("must be at least 3, got {dim}")));
    }
    if !(r >= 0.0 && r.is_finite() && outer > r) {
        return Err(Error::InvalidAnnulus { inner: r, outer });
    }
    let m = dim as i32 - 2;
    let value = if r == 0.0 {
        0.0
    } else {
        (m as f64) * sigma_d(dim) / (r.powi(-m) - outer.powi(-m))
    };
    Ok(CapacityResult {
        value,
        method: CapacityMethod::Analytic,
        grid_h: None,
        iterations: None,
    })
}

/// The radial cell solution: 0 at `|x - c| = r`, 1 at `|x - c| = outer`,
/// harmonic in between, i.e. `1 - (s^{-(d-2)} - R^{-(d-2)})/(r^{-(d-2)} - R^{-(d-2)})`.
/// Clamped to `[0, 1]` outside the annulus.
pub fn cell_function(s: f64, r: f64, outer: f64, dim: usize) -> f64 {
    if s <= r {
        return 0.0;
    }
    if s >= outer {
        return 1.0;
    }
    let m = dim as i32 - 2;
    let num = s.powi(-m) - outer.powi(-m);
    let den = r.powi(-m) - outer.powi(-m);
    (1.0 - num / den).clamp(0.0, 1.0)
}

/// Monte Carlo estimate of `<N(Q)>` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub const STRAUSS_INTENSITY_SEEDS: u64 = 64;
const STRAUSS_INTENSITY_WINDOW: f64 = 5.0;

/// Average of `N(W)/|W|` over `seeds` realizations in the cube `[0, 5)^d`.
pub fn estimate_mean_count(spec: &ProcessSpec, dim: usize, seeds: u64) -> Result<IntensityEstimate> {
    let window = Aabb::cube(dim, 0.0, STRAUSS_INTENSITY_WINDOW)?;
    let radii = RadiiSpec::Constant { value: 1.0 };
    let vol = window.volume();
    let counts = (0..seeds)
        .map(|s| sample(spec, &radii, &window, s).map(|c| c.len() as f64 / vol))
        .collect::<Result<Vec<_>>>()?;
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(IntensityEstimate {
        mean,
        stderr: (var / n).sqrt(),
        samples: counts.len(),
    })
}

/// `<N(Q)>`: closed form, or the Monte Carlo estimate for Strauss.
pub fn mean_count(spec: &ProcessSpec, dim: usize) -> Result<f64> {
    spec.validate()?;
    match spec.mean_count(dim) {
        Some(v) => Ok(v),
        None => Ok(estimate_mean_count(spec, dim, STRAUSS_INTENSITY_SEEDS)?.mean),
    }
}

/// `C_0 = (d-2) sigma_d <N(Q)> <rho^{d-2}>`.
pub fn strange_term(spec: &ProcessSpec, radii: &RadiiSpec, dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(Error::invalid("dimension", format!("must be at least 3, got {dim}")));
    }
    let m = dim as f64 - 2.0;
    let moment = radii.moment(m)?;
    let count = mean_count(spec, dim)?;
    Ok(m * sigma_d(dim) * moment * count)
}

fn good_capacity_sum(partition: &HolePartition, holes: &HoleSet, cap: Option<f64>) -> f64 {
    let dim = holes.dim();
    let scale = crate::geometry::radius_scale(holes.epsilon(), dim);
    partition
        .good()
        .map(|j| {
            let d = partition.clearance(j).expect("good hole has a clearance");
            let r = match cap {
                Some(m) => scale * holes.rho(j).min(m),
                None => holes.radius(j),
            };
            cap_annulus_analytic(r, d, dim).map_or(0.0, |c| c.value)
        })
        .fold(0.0, |a, b| a + b)
}

/// `(1/|D|) sum_{good} Cap(T_j, B(eps z_j, d_j))`, the capacity density of
/// the good holes.
pub fn empirical_strange_density(partition: &HolePartition, holes: &HoleSet) -> f64 {
    good_capacity_sum(partition, holes, None) / holes.domain().volume()
}

/// Effect of truncating the marks at `rho ∧ M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationDiagnostic {
    pub cutoff: f64,
    pub full_density: f64,
    pub truncated_density: f64,
    /// `(d-2) sigma_d <N(Q)> <rho^{d-2} 1{rho >= M}>`, the strange-term mass
    /// carried by marks above the cutoff.
    pub analytic_tail: f64,
}

pub fn truncation_diagnostic(
    partition: &HolePartition,
    holes: &HoleSet,
    spec: &ProcessSpec,
    radii: &RadiiSpec,
    cutoff: f64,
) -> Result<TruncationDiagnostic> {
    let dim = holes.dim();
    let m = dim as f64 - 2.0;
    let vol = holes.domain().volume();
    Ok(TruncationDiagnostic {
        cutoff,
        full_density: good_capacity_sum(partition, holes, None) / vol,
        truncated_density: good_capacity_sum(partition, holes, Some(cutoff)) / vol,
        analytic_tail: m * sigma_d(dim) * mean_count(spec, dim)? * radii.tail_moment(m, cutoff)?,
    })
}

#[cfg(test)]
mod tests;
