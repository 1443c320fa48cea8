//! Mark (radius) distributions.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::aabb::dist;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Distribution of the hole radii `rho_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RadiiSpec {
    Constant {
        value: f64,
    },
    /// Density `p rho_m^p rho^-(p+1)` on `[rho_m, inf)`.
    Pareto {
        scale: f64,
        tail_exponent: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Pareto marginals coupled through a Gaussian copula whose covariance
    /// decays like `|x|^-decay_exponent`.
    CorrelatedPareto {
        scale: f64,
        tail_exponent: f64,
        decay_exponent: f64,
        range: f64,
    },
}

impl RadiiSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let moment = dim as f64 - 2.0;
        let positive = |path: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(path, format!("must be positive and finite, got {v}")))
            }
        };
        match *self {
            RadiiSpec::Constant { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::invalid(
                        "radii.constant_value",
                        format!("must be nonnegative and finite, got {value}"),
                    ));
                }
            }
            RadiiSpec::Pareto {
                scale,
                tail_exponent,
            } => {
                positive("radii.pareto.scale", scale)?;
                positive("radii.pareto.tail_exponent", tail_exponent)?;
                if tail_exponent <= moment {
                    return Err(Error::invalid(
                        "radii.pareto.tail_exponent",
                        format!("must exceed d-2 = {moment} so that <rho^(d-2)> is finite"),
                    ));
                }
            }
            RadiiSpec::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::invalid("radii.lognormal.mu", "must be finite"));
                }
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(Error::invalid("radii.lognormal.sigma", "must be nonnegative"));
                }
            }
            RadiiSpec::CorrelatedPareto {
                scale,
                tail_exponent,
                decay_exponent,
                range,
            } => {
                positive("radii.pareto.scale", scale)?;
                positive("radii.pareto.tail_exponent", tail_exponent)?;
                if tail_exponent <= moment {
                    return Err(Error::invalid(
                        "radii.pareto.tail_exponent",
                        format!("must exceed d-2 = {moment} so that <rho^(d-2)> is finite"),
                    ));
                }
                positive("radii.correlation.range", range)?;
                if !(decay_exponent.is_finite() && decay_exponent > dim as f64) {
                    return Err(Error::invalid(
                        "radii.correlation.decay_exponent",
                        format!("must exceed d = {dim}, got {decay_exponent}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `<rho^order>` in closed form.
    pub fn moment(&self, order: f64) -> Result<f64> {
        match *self {
            RadiiSpec::Constant { value } => Ok(if order == 0.0 { 1.0 } else { value.powf(order) }),
            RadiiSpec::Pareto {
                scale,
                tail_exponent,
            }
            | RadiiSpec::CorrelatedPareto {
                scale,
                tail_exponent,
                ..
            } => {
                if tail_exponent > order {
                    Ok(tail_exponent * scale.powf(order) / (tail_exponent - order))
                } else {
                    Err(Error::InfiniteMoment { order })
                }
            }
            RadiiSpec::LogNormal { mu, sigma } => {
                Ok((order * mu + 0.5 * order * order * sigma * sigma).exp())
            }
        }
    }

    /// `<rho^order 1{rho >= cutoff}>`, the mass lost by truncating marks at `cutoff`.
    pub fn tail_moment(&self, order: f64, cutoff: f64) -> Result<f64> {
        match *self {
            RadiiSpec::Constant { value } => Ok(if value >= cutoff {
                value.powf(order)
            } else {
                0.0
            }),
            RadiiSpec::Pareto {
                scale,
                tail_exponent: p,
            }
            | RadiiSpec::CorrelatedPareto {
                scale,
                tail_exponent: p,
                ..
            } => {
                if p <= order {
                    return Err(Error::InfiniteMoment { order });
                }
                let m = cutoff.max(scale);
                Ok(p * scale.powf(p) * m.powf(order - p) / (p - order))
            }
            RadiiSpec::LogNormal { mu, sigma } => {
                if sigma == 0.0 {
                    let v = mu.exp();
                    return Ok(if v >= cutoff { v.powf(order) } else { 0.0 });
                }
                // E[X^k 1{X>=c}] = e^{k mu + k^2 s^2/2} Phi((mu + k s^2 - ln c)/s)
                let z = (mu + order * sigma * sigma - cutoff.ln()) / sigma;
                Ok(self.moment(order)? * 0.5 * erfc(-z / std::f64::consts::SQRT_2))
            }
        }
    }

    /// Draws one radius per center. Independent marks use one substream per
    /// point index; correlated marks use a Gaussian copula over all centers.
    pub fn sample_for(&self, centers: &[f64], dim: usize, seed: u64) -> Vec<f64> {
        let n = centers.len() / dim;
        match *self {
            RadiiSpec::Constant { value } => vec![value; n],
            RadiiSpec::Pareto {
                scale,
                tail_exponent,
            } => (0..n)
                .map(|i| {
                    let mut rng = substream(seed, Stream::Radii, i as u64);
                    let u: f64 = 1.0 - rng.random::<f64>();
                    scale * u.powf(-1.0 / tail_exponent)
                })
                .collect(),
            RadiiSpec::LogNormal { mu, sigma } => {
                let dist = LogNormal::new(mu, sigma).expect("validated lognormal");
                (0..n)
                    .map(|i| dist.sample(&mut substream(seed, Stream::Radii, i as u64)))
                    .collect()
            }
            RadiiSpec::CorrelatedPareto {
                scale,
                tail_exponent,
                decay_exponent,
                range,
            } => {
                let g = gaussian_field(centers, dim, seed, decay_exponent, range);
                g.iter()
                    .map(|&gi| {
                        // survival probability 1 - Phi(g), computed without cancellation
                        let survival = (0.5 * erfc(gi / std::f64::consts::SQRT_2)).max(1e-300);
                        scale * survival.powf(-1.0 / tail_exponent)
                    })
                    .collect()
            }
        }
    }
}

/// Covariance of the copula field: `(1 + (r/range)^2)^(-gamma/2)`.
pub fn copula_covariance(r: f64, decay_exponent: f64, range: f64) -> f64 {
    (1.0 + (r / range).powi(2)).powf(-0.5 * decay_exponent)
}

fn gaussian_field(centers: &[f64], dim: usize, seed: u64, decay_exponent: f64, range: f64) -> Vec<f64> {
    let n = centers.len() / dim;
    if n == 0 {
        return Vec::new();
    }
    let pts: Vec<&[f64]> = centers.chunks_exact(dim).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let c = copula_covariance(dist(pts[i], pts[j]), decay_exponent, range);
        if i == j {
            c + 1e-10
        } else {
            c
        }
    });
    let chol = cov
        .cholesky()
        .expect("generalized Cauchy covariance is positive definite");
    let z = nalgebra::DVector::from_iterator(
        n,
        (0..n).map(|i| StandardNormal.sample(&mut substream(seed, Stream::Field, i as u64))),
    );
    let g = chol.l() * z;
    g.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pareto_moment_closed_form() {
        let r = RadiiSpec::Pareto {
            scale: 1.0,
            tail_exponent: 1.5,
        };
        assert!((r.moment(1.0).unwrap() - 3.0).abs() < 1e-15);
        assert!(matches!(r.moment(2.0), Err(Error::InfiniteMoment { .. })));
        // tail above M: 1.5 * M^{-0.5} / 0.5
        assert!((r.tail_moment(1.0, 64.0).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn validation_paths() {
        let bad = RadiiSpec::Pareto {
            scale: 1.0,
            tail_exponent: 1.0,
        };
        match bad.validate(3) {
            Err(Error::InvalidSpec { path, .. }) => assert_eq!(path, "radii.pareto.tail_exponent"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RadiiSpec::Constant { value: 0.0 }.validate(3).is_ok());
        assert!(RadiiSpec::CorrelatedPareto {
            scale: 1.0,
            tail_exponent: 1.5,
            decay_exponent: 2.5,
            range: 1.0
        }
        .validate(3)
        .is_err());
    }

    #[test]
    fn pareto_draws_respect_scale() {
        let r = RadiiSpec::Pareto {
            scale: 2.0,
            tail_exponent: 3.0,
        };
        let centers = vec![0.0; 3 * 1000];
        assert!(r.sample_for(&centers, 3, 5).iter().all(|&v| v >= 2.0));
    }

    #[test]
    fn correlated_marks_are_pareto_and_positively_correlated_when_close() {
        let spec = RadiiSpec::CorrelatedPareto {
            scale: 1.0,
            tail_exponent: 3.0,
            decay_exponent: 4.0,
            range: 1.0,
        };
        // pairs of points: close pair (distance 0.05) far away from other pairs
        let mut centers = Vec::new();
        for k in 0..150 {
            let x = 40.0 * k as f64;
            centers.extend_from_slice(&[x, 0.0, 0.0, x + 0.05, 0.0, 0.0]);
        }
        let rho = spec.sample_for(&centers, 3, 11);
        assert!(rho.iter().all(|&v| v >= 1.0));
        let logs: Vec<f64> = rho.iter().map(|v| v.ln()).collect();
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let (mut cxy, mut cxx) = (0.0, 0.0);
        for p in logs.chunks_exact(2) {
            cxy += (p[0] - m) * (p[1] - m);
            cxx += 0.5 * ((p[0] - m).powi(2) + (p[1] - m).powi(2));
        }
        assert!(cxy / cxx > 0.8, "close marks should be strongly correlated");
    }
}
