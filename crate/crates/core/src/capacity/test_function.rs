//! The oscillating test function `w_eps = w_1 ∧ w_2` on a grid.

use serde::{Deserialize, Serialize};

use super::cap_annulus_analytic;
use super::fd::{covering_grid, solve_potential, FdOptions, InnerBall};
use crate::error::Result;
use crate::geometry::{HolePartition, HoleSet, SafetyPrimitive};
use crate::pde::{gradient_pairing, GridField, GridSpec};
use crate::spatial::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formula {
    /// Explicit radial cell solution on the annulus around a good hole.
    CellExplicit,
    /// Discrete capacitary potential of a bad cluster inside `D_b`.
    CapacitaryFd,
    /// Hole below grid resolution: field left at 1, energy tracked analytically.
    Unity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoleRecord {
    pub index: usize,
    pub formula: Formula,
}

#[derive(Debug, Clone)]
pub struct TestFunctionField {
    pub field: GridField,
    pub log: Vec<HoleRecord>,
    /// Discrete Dirichlet energy of the good-hole factor `w_2`.
    pub good_energy: f64,
    /// Annulus capacities of good holes below grid resolution.
    pub good_energy_analytic: f64,
    /// Discrete Dirichlet energy of the resolved bad-cluster factor `w_1`.
    pub bad_energy: f64,
    /// `Cap(B_r, B_2r)` summed over bad holes in unresolved clusters.
    pub bad_energy_analytic: f64,
}

fn resolvable(r: f64, h: f64) -> bool {
    r >= 1.5 * h
}

fn primitives_touch(a: &SafetyPrimitive, b: &SafetyPrimitive, gap: f64) -> bool {
    use SafetyPrimitive::*;
    match (a, b) {
        (Ball { center: c1, radius: r1 }, Ball { center: c2, radius: r2 }) => {
            crate::aabb::dist(c1, c2) <= r1 + r2 + gap
        }
        (Cube { center, half_width }, other) | (other, Cube { center, half_width }) => {
            // conservative: compare against the cube's circumscribed ball
            let r = half_width * (center.len() as f64).sqrt();
            other.distance(center) <= r + gap
        }
    }
}

pub fn build_test_function(
    partition: &HolePartition,
    holes: &HoleSet,
    grid: &GridSpec,
    opts: &FdOptions,
) -> Result<TestFunctionField> {
    let n_nodes = grid.len();
    let h = grid.h();
    let dim = grid.dim();
    let mut w2 = vec![1.0f64; n_nodes];
    let mut w1 = vec![1.0f64; n_nodes];
    let mut log = Vec::with_capacity(holes.len());
    let mut good_energy_analytic = 0.0;

    for j in partition.good() {
        let r = holes.radius(j);
        let d = partition.clearance(j).expect("good hole has a clearance");
        if resolvable(r, h) {
            grid.for_each_node_within(holes.center(j), d, |i, d2| {
                w2[i] = w2[i].min(super::cell_function(d2.sqrt(), r, d, dim));
            });
            log.push(HoleRecord {
                index: j,
                formula: Formula::CellExplicit,
            });
        } else {
            good_energy_analytic += cap_annulus_analytic(r, d, dim)?.value;
            log.push(HoleRecord {
                index: j,
                formula: Formula::Unity,
            });
        }
    }
    let good_energy = gradient_pairing(grid, &w2, &w2);

    // bad clusters: connected components of the safety-layer primitives
    let prims = partition.safety_layer();
    let mut uf = UnionFind::new(prims.len());
    for a in 0..prims.len() {
        for b in 0..a {
            if primitives_touch(&prims[a], &prims[b], h) {
                uf.union(a, b);
            }
        }
    }
    let mut bad_energy = 0.0;
    let mut bad_energy_analytic = 0.0;
    let bad: Vec<usize> = partition.bad().collect();
    let components = uf.components();
    let mut owner = vec![usize::MAX; bad.len()];
    for (k, comp) in components.iter().enumerate() {
        for (b, &j) in bad.iter().enumerate() {
            if owner[b] == usize::MAX
                && comp.iter().any(|&p| prims[p].distance(holes.center(j)) == 0.0)
            {
                owner[b] = k;
            }
        }
    }
    for (k, comp) in components.iter().enumerate() {
        let members: Vec<usize> = (0..bad.len()).filter(|&b| owner[b] == k).map(|b| bad[b]).collect();
        if members.is_empty() {
            continue;
        }
        let all_resolved = members.iter().all(|&j| resolvable(holes.radius(j), h));
        if !all_resolved {
            for &j in &members {
                let r = holes.radius(j);
                if r > 0.0 {
                    bad_energy_analytic += cap_annulus_analytic(r, 2.0 * r, dim)?.value;
                }
                log.push(HoleRecord {
                    index: j,
                    formula: Formula::Unity,
                });
            }
            continue;
        }
        let outer: Vec<SafetyPrimitive> = comp.iter().map(|&p| prims[p].clone()).collect();
        let inner: Vec<InnerBall> = members
            .iter()
            .map(|&j| InnerBall {
                center: holes.center(j).to_vec(),
                radius: holes.radius(j),
            })
            .collect();
        let sub = covering_grid(&outer, grid.origin(), h)?;
        let pot = solve_potential(sub, &inner, &outer, opts)?;
        bad_energy += pot.energy;
        // transfer onto the main grid
        let mut x = vec![0.0; dim];
        for (i, &v) in pot.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            pot.grid.coords(i, &mut x);
            if let Some(g) = grid.nearest_node(&x) {
                w1[g] = w1[g].min(1.0 - v);
            }
        }
        for &j in &members {
            log.push(HoleRecord {
                index: j,
                formula: Formula::CapacitaryFd,
            });
        }
    }
    // bad holes outside every primitive (radius 0) still need a record
    for (b, &j) in bad.iter().enumerate() {
        if owner[b] == usize::MAX {
            log.push(HoleRecord {
                index: j,
                formula: Formula::Unity,
            });
        }
    }
    log.sort_by_key(|r| r.index);

    let mut values: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a.min(*b)).collect();
    for j in 0..holes.len() {
        let r = holes.radius(j);
        grid.for_each_node_within(holes.center(j), r, |i, d2| {
            if d2 < r * r {
                values[i] = 0.0;
            }
        });
    }
    Ok(TestFunctionField {
        field: GridField::new(grid.clone(), values)?,
        log,
        good_energy,
        good_energy_analytic,
        bad_energy,
        bad_energy_analytic,
    })
}
