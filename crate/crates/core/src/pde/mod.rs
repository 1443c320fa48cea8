//! Finite-difference solvers for the perforated and homogenized Dirichlet
//! problems, norms, and the grid file format.

pub mod cg;

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::aabb::{dist2, Aabb};
use crate::capacity::cap_annulus_analytic;
use crate::error::{Error, Result};
use crate::geometry::HoleSet;
use crate::pointproc::{fmt_f64, parse_f64};
use cg::{pcg, StencilOperator};

/// Regular grid of nodes `origin + h * index`, row-major with the last axis
/// fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    h: f64,
    shape: Vec<usize>,
    origin: Vec<f64>,
}

impl GridSpec {
    pub fn new(h: f64, shape: Vec<usize>, origin: Vec<f64>) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::GridMismatch(format!("spacing {h} is not positive")));
        }
        if shape.is_empty() || shape.len() != origin.len() || shape.iter().any(|&n| n < 2) {
            return Err(Error::GridMismatch(format!(
                "shape {shape:?} / origin {origin:?} invalid"
            )));
        }
        Ok(Self { h, shape, origin })
    }

    /// Nodes covering the closed box `D`; every extent must be a multiple of `h`.
    pub fn for_domain(domain: &Aabb, h: f64) -> Result<Self> {
        let mut shape = Vec::with_capacity(domain.dim());
        for k in 0..domain.dim() {
            let cells = domain.extent(k) / h;
            let n = cells.round();
            if (cells - n).abs() > 1e-9 * cells.max(1.0) || n < 1.0 {
                return Err(Error::GridMismatch(format!(
                    "extent {} on axis {k} is not a multiple of h = {h}",
                    domain.extent(k)
                )));
            }
            shape.push(n as usize + 1);
        }
        Self::new(h, shape, domain.min().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1usize; d];
        for k in (0..d - 1).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let mut f = flat;
        for k in (0..self.dim()).rev() {
            out[k] = self.origin[k] + self.h * (f % self.shape[k]) as f64;
            f /= self.shape[k];
        }
    }

    pub fn on_boundary(&self, flat: usize) -> bool {
        let mut f = flat;
        for k in (0..self.dim()).rev() {
            let i = f % self.shape[k];
            if i == 0 || i + 1 == self.shape[k] {
                return true;
            }
            f /= self.shape[k];
        }
        false
    }

    /// The closed box spanned by the nodes.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let hi = self
            .origin
            .iter()
            .zip(&self.shape)
            .map(|(o, &n)| o + self.h * (n - 1) as f64)
            .collect();
        (self.origin.clone(), hi)
    }

    /// Node closest to `x`, if `x` lies within half a cell of the grid.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut idx = vec![0usize; self.dim()];
        for k in 0..self.dim() {
            let t = ((x[k] - self.origin[k]) / self.h).round();
            if t < 0.0 || t > (self.shape[k] - 1) as f64 {
                return None;
            }
            idx[k] = t as usize;
        }
        Some(self.flat_index(&idx))
    }

    /// Calls `f(flat, squared_distance)` for nodes with `|x - c| <= radius`.
    pub fn for_each_node_within(&self, c: &[f64], radius: f64, mut f: impl FnMut(usize, f64)) {
        let d = self.dim();
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for k in 0..d {
            let a = ((c[k] - radius - self.origin[k]) / self.h).ceil().max(0.0);
            let b = ((c[k] + radius - self.origin[k]) / self.h)
                .floor()
                .min((self.shape[k] - 1) as f64);
            if a > b {
                return;
            }
            lo[k] = a as usize;
            hi[k] = b as usize;
        }
        let r2 = radius * radius;
        let mut idx = lo.clone();
        let mut x = vec![0.0; d];
        loop {
            for k in 0..d {
                x[k] = self.origin[k] + self.h * idx[k] as f64;
            }
            let d2 = dist2(&x, c);
            if d2 <= r2 {
                f(self.flat_index(&idx), d2);
            }
            let mut k = d;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] <= hi[k] {
                    break;
                }
                idx[k] = lo[k];
            }
        }
    }

    fn compatible(&self, other: &GridSpec) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if self.shape != other.shape
            || !close(self.h, other.h)
            || self.origin.iter().zip(&other.origin).any(|(a, b)| !close(*a, *b))
        {
            return Err(Error::GridMismatch(format!(
                "h {} shape {:?} origin {:?} vs h {} shape {:?} origin {:?}",
                self.h, self.shape, self.origin, other.h, other.shape, other.origin
            )));
        }
        Ok(())
    }

    /// Composite trapezoid weight of a node (product over axes of 1/2 on the
    /// end nodes, 1 otherwise), without the `h^d` factor.
    fn trapezoid_weight(&self, idx: &[usize]) -> f64 {
        idx.iter()
            .zip(&self.shape)
            .map(|(&i, &n)| if i == 0 || i + 1 == n { 0.5 } else { 1.0 })
            .product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Interior,
    HoleDirichlet,
    BoundaryDirichlet,
    Exterior,
}

/// Scalar field on a grid, optionally with the node states of the solve
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub mask: Option<Vec<NodeState>>,
}

impl GridField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            mask: None,
        })
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.coords(i, &mut x);
                f(&x)
            })
            .collect();
        Self {
            grid,
            values,
            mask: None,
        }
    }

    pub fn constant(grid: GridSpec, v: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![v; n],
            mask: None,
        }
    }
}

/// Built-in right-hand sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SourceTerm {
    Constant(f64),
    /// `prod_k sin(pi t_k)` with `t` the node position rescaled to `[0,1]^d`.
    SineBump,
}

impl SourceTerm {
    pub fn sample(&self, grid: &GridSpec) -> GridField {
        match *self {
            SourceTerm::Constant(v) => GridField::constant(grid.clone(), v),
            SourceTerm::SineBump => {
                let (lo, hi) = grid.bounds();
                GridField::from_fn(grid.clone(), |x| sine_bump(x, &lo, &hi))
            }
        }
    }
}

fn sine_bump(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (a, b))| (std::f64::consts::PI * (v - a) / (b - a)).sin())
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveMode {
    /// Every hole masks the nodes strictly inside it.
    Resolved,
    /// Holes with radius below `3h` are replaced by a capacity-equivalent
    /// reaction term at their nearest node.
    CapacityPenalty,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100_000,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub wall_time: Duration,
    pub mode: Option<SolveMode>,
    pub masked_holes: usize,
    pub penalized_holes: usize,
}

/// Node states and diagonal penalties for the perforated problem.
struct Assembly {
    state: Vec<NodeState>,
    penalty: Vec<f64>,
    masked_holes: usize,
    penalized_holes: usize,
}

fn assemble_holes(holes: &HoleSet, grid: &GridSpec, mode: SolveMode) -> Assembly {
    let n = grid.len();
    let h = grid.h();
    let dim = grid.dim();
    let mut state: Vec<NodeState> = (0..n)
        .map(|i| {
            if grid.on_boundary(i) {
                NodeState::BoundaryDirichlet
            } else {
                NodeState::Interior
            }
        })
        .collect();
    let mut penalty = vec![0.0; n];
    let (mut masked, mut penalized) = (0, 0);
    let cell_radius = 0.5 * holes.epsilon();
    for j in 0..holes.len() {
        let c = holes.center(j);
        let r = holes.radius(j);
        if mode == SolveMode::CapacityPenalty && r < 3.0 * h && r < cell_radius {
            if r == 0.0 {
                continue;
            }
            penalized += 1;
            if let Some(i) = grid.nearest_node(c) {
                let cap = cap_annulus_analytic(r, cell_radius, dim)
                    .expect("0 < r < eps/2")
                    .value;
                penalty[i] += cap / h.powi(dim as i32);
            }
            continue;
        }
        masked += 1;
        let r2 = r * r;
        grid.for_each_node_within(c, r, |i, d2| {
            if d2 < r2 && state[i] == NodeState::Interior {
                state[i] = NodeState::HoleDirichlet;
            }
        });
    }
    Assembly {
        state,
        penalty,
        masked_holes: masked,
        penalized_holes: penalized,
    }
}

fn cancel_fn(opts: &SolveOptions) -> impl Fn() -> bool + '_ {
    move || {
        opts.cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

fn solve_masked(
    f: &GridField,
    state: Vec<NodeState>,
    reaction: impl Fn(usize) -> f64,
    opts: &SolveOptions,
) -> Result<(GridField, usize, f64)> {
    let grid = &f.grid;
    let h2 = grid.h() * grid.h();
    let two_d = 2.0 * grid.dim() as f64;
    let unknown: Vec<bool> = state.iter().map(|&s| s == NodeState::Interior).collect();
    let diag: Vec<f64> = (0..grid.len()).map(|i| two_d + h2 * reaction(i)).collect();
    let op = StencilOperator::new(grid.shape(), diag, &unknown);
    let b: Vec<f64> = f
        .values
        .iter()
        .zip(&unknown)
        .map(|(&v, &u)| if u { h2 * v } else { 0.0 })
        .collect();
    let mut x = vec![0.0; grid.len()];
    let out = pcg(&op, &b, &mut x, opts.tolerance, opts.max_iterations, &cancel_fn(opts))?;
    let field = GridField {
        grid: grid.clone(),
        values: x,
        mask: Some(state),
    };
    Ok((field, out.iterations, out.relative_residual))
}

fn check_domain_grid(domain: &Aabb, grid: &GridSpec) -> Result<()> {
    GridSpec::for_domain(domain, grid.h())?.compatible(grid)
}

/// Solves `-Δu = f` in `D` minus the holes with `u = 0` on the boundary and in
/// the holes.
pub fn solve_perforated(
    holes: &HoleSet,
    f: &GridField,
    mode: SolveMode,
    opts: &SolveOptions,
) -> Result<(GridField, SolveReport)> {
    check_domain_grid(holes.domain(), &f.grid)?;
    let start = Instant::now();
    let asm = assemble_holes(holes, &f.grid, mode);
    let penalty = asm.penalty;
    let (u, iterations, residual) = solve_masked(f, asm.state, |i| penalty[i], opts)?;
    Ok((
        u,
        SolveReport {
            iterations,
            final_relative_residual: residual,
            wall_time: start.elapsed(),
            mode: Some(mode),
            masked_holes: asm.masked_holes,
            penalized_holes: asm.penalized_holes,
        },
    ))
}

/// Solves `(-Δ + c0) u = f` in `D` with `u = 0` on the boundary. The grid
/// is taken as the node set of `D`.
pub fn solve_homogenized(c0: f64, f: &GridField, opts: &SolveOptions) -> Result<(GridField, SolveReport)> {
    if !(c0.is_finite() && c0 >= 0.0) {
        return Err(Error::invalid("c0", format!("must be nonnegative, got {c0}")));
    }
    let start = Instant::now();
    let grid = &f.grid;
    let state = (0..grid.len())
        .map(|i| {
            if grid.on_boundary(i) {
                NodeState::BoundaryDirichlet
            } else {
                NodeState::Interior
            }
        })
        .collect();
    let (u, iterations, residual) = solve_masked(f, state, |_| c0, opts)?;
    Ok((
        u,
        SolveReport {
            iterations,
            final_relative_residual: residual,
            wall_time: start.elapsed(),
            mode: None,
            masked_holes: 0,
            penalized_holes: 0,
        },
    ))
}

/// Neumaier-compensated sum.
#[derive(Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2_error: f64,
    pub h1_seminorm_error: f64,
    pub l2_norm_u: f64,
    pub energy_u: f64,
}

/// Trapezoid integral of `f(i)` over the grid.
pub fn integrate(grid: &GridSpec, f: impl Fn(usize) -> f64) -> f64 {
    let mut idx = vec![0usize; grid.dim()];
    let mut acc = CompensatedSum::default();
    for i in 0..grid.len() {
        grid.multi_index(i, &mut idx);
        acc.add(grid.trapezoid_weight(&idx) * f(i));
    }
    acc.value() * grid.h().powi(grid.dim() as i32)
}

/// `∫ ∇a · ∇b` with forward differences along each axis, weighted by the
/// trapezoid rule in the transverse directions.
pub fn gradient_pairing(grid: &GridSpec, a: &[f64], b: &[f64]) -> f64 {
    let d = grid.dim();
    let strides = grid.strides();
    let mut idx = vec![0usize; d];
    let mut acc = CompensatedSum::default();
    for i in 0..grid.len() {
        grid.multi_index(i, &mut idx);
        for k in 0..d {
            if idx[k] + 1 == grid.shape()[k] {
                continue;
            }
            let j = i + strides[k];
            let mut w = 1.0;
            for (m, (&im, &nm)) in idx.iter().zip(grid.shape()).enumerate() {
                if m != k && (im == 0 || im + 1 == nm) {
                    w *= 0.5;
                }
            }
            acc.add(w * (a[j] - a[i]) * (b[j] - b[i]));
        }
    }
    acc.value() * grid.h().powi(d as i32 - 2)
}

pub fn norms(u: &GridField, v: &GridField) -> Result<Norms> {
    u.grid.compatible(&v.grid)?;
    let e: Vec<f64> = u.values.iter().zip(&v.values).map(|(a, b)| a - b).collect();
    Ok(Norms {
        l2_error: integrate(&u.grid, |i| e[i] * e[i]).sqrt(),
        h1_seminorm_error: gradient_pairing(&u.grid, &e, &e).sqrt(),
        l2_norm_u: integrate(&u.grid, |i| u.values[i] * u.values[i]).sqrt(),
        energy_u: gradient_pairing(&u.grid, &u.values, &u.values),
    })
}

/// `|∫ ∇(u - v) · ∇φ|` for the fixed bump `φ = prod_k sin(pi t_k)`.
pub fn weak_indicator(u: &GridField, v: &GridField) -> Result<f64> {
    u.grid.compatible(&v.grid)?;
    let phi = SourceTerm::SineBump.sample(&u.grid);
    let e: Vec<f64> = u.values.iter().zip(&v.values).map(|(a, b)| a - b).collect();
    Ok(gradient_pairing(&u.grid, &e, &phi.values).abs())
}

/// Writes the header `d h n_1..n_d origin_1..origin_d` and one value per line.
pub fn write_grid(field: &GridField, mut out: impl Write) -> Result<()> {
    let g = &field.grid;
    let mut header = vec![g.dim().to_string(), fmt_f64(g.h())];
    header.extend(g.shape().iter().map(|n| n.to_string()));
    header.extend(g.origin().iter().map(|&v| fmt_f64(v)));
    writeln!(out, "{}", header.join(" "))?;
    for &v in &field.values {
        writeln!(out, "{}", fmt_f64(v))?;
    }
    Ok(())
}

pub fn read_grid(input: impl BufRead) -> Result<GridField> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty grid file".into(),
    })??;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let d: usize = toks
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing dimension".into(),
        })?;
    if toks.len() != 2 + 2 * d {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected {} header fields, got {}", 2 + 2 * d, toks.len()),
        });
    }
    let h = parse_f64(toks[1], 1)?;
    let shape = toks[2..2 + d]
        .iter()
        .map(|t| {
            t.parse::<usize>().map_err(|e| Error::Parse {
                line: 1,
                message: format!("`{t}`: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let origin = toks[2 + d..]
        .iter()
        .map(|t| parse_f64(t, 1))
        .collect::<Result<Vec<_>>>()?;
    let grid = GridSpec::new(h, shape, origin)?;
    let mut values = Vec::with_capacity(grid.len());
    for (i, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            values.push(parse_f64(t, i + 2)?);
        }
    }
    GridField::new(grid, values)
}

#[cfg(test)]
mod tests;
