//! Axis-aligned boxes in R^d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[min, max)` in `R^d`.
///
/// Membership is half-open so that windows tile without double counting
/// (`Z^3 ∩ [0,4)^3` has exactly 64 points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Aabb {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::WindowDegenerate(format!(
                "corner dimensions differ or are empty ({} vs {})",
                min.len(),
                max.len()
            )));
        }
        for (k, (a, b)) in min.iter().zip(&max).enumerate() {
            if !a.is_finite() || !b.is_finite() || b <= a {
                return Err(Error::WindowDegenerate(format!(
                    "axis {k} has extent [{a}, {b})"
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// The cube `[lo, hi)^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|k| self.extent(k).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Half-open membership test.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (a, b))| *v >= *a && *v < *b)
    }

    /// True if `other` lies inside `self` up to an absolute slack `tol`.
    pub fn encloses(&self, other: &Aabb, tol: f64) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|k| {
                other.min[k] >= self.min[k] - tol && other.max[k] <= self.max[k] + tol
            })
    }

    /// Grow by `pad` on every side.
    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: self.min.iter().map(|v| v - pad).collect(),
            max: self.max.iter().map(|v| v + pad).collect(),
        }
    }

    /// Image under `x -> factor * x`.
    pub fn scaled(&self, factor: f64) -> Aabb {
        Aabb {
            min: self.min.iter().map(|v| v * factor).collect(),
            max: self.max.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Aabb {
        Aabb {
            min: self.min.iter().zip(shift).map(|(v, s)| v + s).collect(),
            max: self.max.iter().zip(shift).map(|(v, s)| v + s).collect(),
        }
    }

    /// True if all axes share the same corners.
    pub fn is_cube(&self) -> bool {
        self.min.iter().all(|v| *v == self.min[0]) && self.max.iter().all(|v| *v == self.max[0])
    }

    /// Euclidean distance from `x` to the closed box (0 inside).
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (a, b))| {
                let d = if v < a {
                    a - v
                } else if v > b {
                    v - b
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Squared Euclidean distance.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}
