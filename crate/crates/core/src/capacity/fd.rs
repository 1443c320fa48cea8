//! Discrete capacitary potentials on grids aligned with `h Z^d`.

use std::sync::atomic::Ordering;

use super::{CapacityMethod, CapacityResult};
use crate::aabb::dist2;
use crate::error::{Error, Result};
use crate::geometry::SafetyPrimitive;
use crate::pde::cg::{pcg, StencilOperator};
use crate::pde::{CompensatedSum, GridSpec, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct InnerBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Treatment of grid edges crossing the inner or outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTreatment {
    /// Nodes take the boundary value of the region they lie in.
    Staircase,
    /// Edges crossing a boundary at fraction `θ` of their length get
    /// conductance `1/θ`, placing the boundary value on the true surface.
    CutEdge,
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub solve: SolveOptions,
    pub boundary: BoundaryTreatment,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            boundary: BoundaryTreatment::CutEdge,
        }
    }
}

const MIN_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Inner,
    Unknown,
    Outside,
}

/// Solution of the discrete capacitary problem: 1 on the inner balls, 0
/// outside the outer union.
pub(crate) struct Potential {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
}

fn inside_primitive(p: &SafetyPrimitive, x: &[f64]) -> bool {
    match p {
        SafetyPrimitive::Ball { center, radius } => dist2(center, x) < radius * radius,
        SafetyPrimitive::Cube { center, half_width } => {
            center.iter().zip(x).all(|(c, v)| (v - c).abs() < *half_width)
        }
    }
}

fn contains_ball(p: &SafetyPrimitive, b: &InnerBall) -> bool {
    match p {
        SafetyPrimitive::Ball { center, radius } => {
            dist2(center, &b.center).sqrt() + b.radius < *radius
        }
        SafetyPrimitive::Cube { center, half_width } => center
            .iter()
            .zip(&b.center)
            .all(|(c, v)| (v - c).abs() + b.radius < *half_width),
    }
}

/// Smallest `t in [0,1]` with `|a + t (b - a) - c| = r`, given `b` inside.
fn entry_fraction(a: &[f64], b: &[f64], c: &[f64], r: f64) -> f64 {
    let (mut ee, mut ep, mut pp) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        let e = b[k] - a[k];
        let p = a[k] - c[k];
        ee += e * e;
        ep += e * p;
        pp += p * p;
    }
    let disc = (ep * ep - ee * (pp - r * r)).max(0.0);
    ((-ep - disc.sqrt()) / ee).clamp(0.0, 1.0)
}

/// Largest `t in [0,1]` at which the segment from `a` (inside) leaves `p`.
fn exit_fraction(p: &SafetyPrimitive, a: &[f64], b: &[f64]) -> f64 {
    match p {
        SafetyPrimitive::Ball { center, radius } => {
            let (mut ee, mut ep, mut pp) = (0.0, 0.0, 0.0);
            for k in 0..a.len() {
                let e = b[k] - a[k];
                let q = a[k] - center[k];
                ee += e * e;
                ep += e * q;
                pp += q * q;
            }
            let disc = (ep * ep - ee * (pp - radius * radius)).max(0.0);
            ((-ep + disc.sqrt()) / ee).clamp(0.0, 1.0)
        }
        SafetyPrimitive::Cube { center, half_width } => {
            let mut t = 1.0f64;
            for k in 0..a.len() {
                let e = b[k] - a[k];
                if e > 0.0 {
                    t = t.min((center[k] + half_width - a[k]) / e);
                } else if e < 0.0 {
                    t = t.min((center[k] - half_width - a[k]) / e);
                }
            }
            t.clamp(0.0, 1.0)
        }
    }
}

/// Grid with nodes on `anchor + h Z^d` covering the outer primitives with
/// two spare layers.
pub(crate) fn covering_grid(outer: &[SafetyPrimitive], anchor: &[f64], h: f64) -> Result<GridSpec> {
    let dim = anchor.len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in outer {
        let (c, r) = match p {
            SafetyPrimitive::Ball { center, radius } => (center, *radius),
            SafetyPrimitive::Cube { center, half_width } => (center, *half_width),
        };
        for k in 0..dim {
            lo[k] = lo[k].min(c[k] - r);
            hi[k] = hi[k].max(c[k] + r);
        }
    }
    let a: Vec<i64> = (0..dim).map(|k| ((lo[k] - anchor[k]) / h).floor() as i64 - 2).collect();
    let b: Vec<i64> = (0..dim).map(|k| ((hi[k] - anchor[k]) / h).ceil() as i64 + 2).collect();
    let shape = a.iter().zip(&b).map(|(x, y)| (y - x + 1) as usize).collect();
    let origin = (0..dim).map(|k| anchor[k] + a[k] as f64 * h).collect();
    GridSpec::new(h, shape, origin)
}

pub(crate) fn check_inputs(inner: &[InnerBall], outer: &[SafetyPrimitive], h: f64) -> Result<usize> {
    let dim = inner
        .first()
        .map(|b| b.center.len())
        .ok_or_else(|| Error::invalid("inner", "at least one inner ball is required"))?;
    if outer.is_empty() {
        return Err(Error::invalid("outer", "outer region is empty"));
    }
    for b in inner {
        if b.radius < 1.5 * h {
            return Err(Error::UnderResolved { h, radius: b.radius });
        }
        if !outer.iter().any(|p| contains_ball(p, b)) {
            return Err(Error::invalid(
                "inner",
                format!("ball at {:?} radius {} is not strictly inside the outer region", b.center, b.radius),
            ));
        }
    }
    Ok(dim)
}

pub(crate) fn solve_potential(
    grid: GridSpec,
    inner: &[InnerBall],
    outer: &[SafetyPrimitive],
    opts: &FdOptions,
) -> Result<Potential> {
    let dim = grid.dim();
    let n = grid.len();
    let h = grid.h();
    let strides = grid.strides();
    let mut x = vec![0.0; dim];
    let mut kind = vec![Node::Outside; n];
    for (i, slot) in kind.iter_mut().enumerate() {
        grid.coords(i, &mut x);
        if grid.on_boundary(i) {
            continue;
        }
        *slot = if inner.iter().any(|b| dist2(&b.center, &x) <= b.radius * b.radius) {
            Node::Inner
        } else if outer.iter().any(|p| inside_primitive(p, &x)) {
            Node::Unknown
        } else {
            Node::Outside
        };
    }

    // conductance of the edge between unknown node a and fixed node b
    let mut y = vec![0.0; dim];
    let mut weight = |a: usize, b: usize, kb: Node| -> f64 {
        if opts.boundary == BoundaryTreatment::Staircase {
            return 1.0;
        }
        grid.coords(a, &mut x);
        grid.coords(b, &mut y);
        let t = match kb {
            Node::Inner => inner
                .iter()
                .filter(|ball| dist2(&ball.center, &y) <= ball.radius * ball.radius)
                .map(|ball| entry_fraction(&x, &y, &ball.center, ball.radius))
                .fold(1.0, f64::min),
            _ => outer
                .iter()
                .filter(|p| inside_primitive(p, &x))
                .map(|p| exit_fraction(p, &x, &y))
                .fold(0.0, f64::max),
        };
        1.0 / t.max(MIN_FRACTION)
    };

    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut cut: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        if kind[i] != Node::Unknown {
            continue;
        }
        for &s in &strides {
            for j in [i - s, i + s] {
                match kind[j] {
                    Node::Unknown => diag[i] += 1.0,
                    kj => {
                        let w = weight(i, j, kj);
                        diag[i] += w;
                        if kj == Node::Inner {
                            rhs[i] += w;
                        }
                        cut.push((i, j, w));
                    }
                }
            }
        }
    }
    let unknown: Vec<bool> = kind.iter().map(|&k| k == Node::Unknown).collect();
    let op = StencilOperator::new(grid.shape(), diag, &unknown);
    let mut u = vec![0.0; n];
    let cancel = || {
        opts.solve
            .cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::Relaxed))
    };
    let out = pcg(&op, &rhs, &mut u, opts.solve.tolerance, opts.solve.max_iterations, &cancel)?;

    let value_of = |i: usize, u: &[f64]| match kind[i] {
        Node::Inner => 1.0,
        Node::Unknown => u[i],
        Node::Outside => 0.0,
    };
    let mut energy = CompensatedSum::default();
    for i in 0..n {
        for &s in &strides {
            let j = i + s;
            if j >= n {
                continue;
            }
            // edges touching an unknown node are counted through `cut` when
            // the other end is fixed
            let (ki, kj) = (kind[i], kind[j]);
            if (ki == Node::Unknown) != (kj == Node::Unknown) {
                continue;
            }
            let d = value_of(i, &u) - value_of(j, &u);
            if d != 0.0 {
                energy.add(d * d);
            }
        }
    }
    for &(i, j, w) in &cut {
        let d = u[i] - value_of(j, &u);
        energy.add(w * d * d);
    }
    for i in 0..n {
        u[i] = value_of(i, &u);
    }
    Ok(Potential {
        grid,
        values: u,
        energy: energy.value() * h.powi(dim as i32 - 2),
        iterations: out.iterations,
    })
}

/// Capacity of the union of `inner` relative to the union of `outer`:
/// the discrete Dirichlet energy of the discrete capacitary potential.
pub fn cap_fd(
    inner: &[InnerBall],
    outer: &[SafetyPrimitive],
    h: f64,
    opts: &FdOptions,
) -> Result<CapacityResult> {
    let dim = check_inputs(inner, outer, h)?;
    let grid = covering_grid(outer, &vec![0.0; dim], h)?;
    let pot = solve_potential(grid, inner, outer, opts)?;
    Ok(CapacityResult {
        value: pot.energy,
        method: CapacityMethod::FdRelaxation,
        grid_h: Some(h),
        iterations: Some(pot.iterations),
    })
}
