//! Matrix-free masked Laplacian on a regular grid and Jacobi-preconditioned
//! conjugate gradients.

use crate::error::{Error, Result};

/// Operator `y_i = diag_i x_i - sum_{nbr} x_j` on the unknown nodes of a grid.
///
/// Vectors are full-grid arrays; entries at non-unknown nodes are held at 0,
/// so Dirichlet data enters only through the right-hand side. Unknown nodes
/// never lie on the outermost layer of the grid.
pub struct StencilOperator {
    strides: Vec<usize>,
    diag: Vec<f64>,
    unknown: Vec<usize>,
}

impl StencilOperator {
    /// `diag[i]` is used only where `is_unknown[i]`.
    pub fn new(shape: &[usize], diag: Vec<f64>, is_unknown: &[bool]) -> Self {
        let dim = shape.len();
        let mut strides = vec![1usize; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        let mut unknown = Vec::new();
        let mut idx = vec![0usize; dim];
        for (i, &u) in is_unknown.iter().enumerate() {
            if u {
                debug_assert!(idx.iter().zip(shape).all(|(&a, &n)| a > 0 && a + 1 < n));
                unknown.push(i);
            }
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self {
            strides,
            diag,
            unknown,
        }
    }

    pub fn unknowns(&self) -> &[usize] {
        &self.unknown
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.strides.as_slice() {
            &[s0, s1, s2] => {
                for &i in &self.unknown {
                    let nb = x[i - s0] + x[i + s0] + x[i - s1] + x[i + s1] + x[i - s2] + x[i + s2];
                    y[i] = self.diag[i] * x[i] - nb;
                }
            }
            strides => {
                for &i in &self.unknown {
                    let mut nb = 0.0;
                    for &s in strides {
                        nb += x[i - s] + x[i + s];
                    }
                    y[i] = self.diag[i] * x[i] - nb;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
    // four partial sums keep the reduction order fixed and vectorizable
    let mut acc = [0.0f64; 4];
    let chunks = idx.chunks_exact(4);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..4 {
            acc[k] += a[c[k]] * b[c[k]];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for &i in rest {
        s += a[i] * b[i];
    }
    s
}

/// Solves `A x = b` from the initial guess in `x` until
/// `|b - A x| <= tol |b|` (Euclidean norms over the unknowns).
pub fn pcg(
    op: &StencilOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    cancel: &dyn Fn() -> bool,
) -> Result<CgOutcome> {
    let n = b.len();
    let idx = op.unknowns();
    let bnorm = dot(b, b, idx).sqrt();
    if bnorm == 0.0 {
        for &i in idx {
            x[i] = 0.0;
        }
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    op.apply(x, &mut q);
    for &i in idx {
        r[i] = b[i] - q[i];
    }
    let mut z = vec![0.0; n];
    for &i in idx {
        z[i] = r[i] / op.diag(i);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z, idx);
    let mut rel = dot(&r, &r, idx).sqrt() / bnorm;
    let mut it = 0;
    while rel > tol {
        if it >= max_iter {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: rel,
            });
        }
        if it % 64 == 0 && cancel() {
            return Err(Error::Cancelled);
        }
        op.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q, idx);
        for &i in idx {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] / op.diag(i);
        }
        let rz_new = dot(&r, &z, idx);
        let beta = rz_new / rz;
        rz = rz_new;
        for &i in idx {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        rel = dot(&r, &r, idx).sqrt() / bnorm;
    }
    // report the true residual, not the recursively updated one
    op.apply(x, &mut q);
    let mut true_r = 0.0;
    for &i in idx {
        true_r += (b[i] - q[i]).powi(2);
    }
    Ok(CgOutcome {
        iterations: it,
        relative_residual: true_r.sqrt() / bnorm,
    })
}
