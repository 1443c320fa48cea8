//! Birth-death Metropolis-Hastings sampler for the Strauss process.

use rand::Rng as _;

use super::uniform_in;
use crate::aabb::{dist2, Aabb};
use crate::rng::{substream, Stream};

const MAX_CELLS: usize = 1 << 22;

/// Dynamic cell list with cells no smaller than the interaction distance.
struct CellList {
    dim: usize,
    origin: Vec<f64>,
    cell: f64,
    shape: Vec<usize>,
    cells: Vec<Vec<u32>>,
    points: Vec<f64>,
    cell_of: Vec<usize>,
}

impl CellList {
    fn new(window: &Aabb, interaction: f64) -> Self {
        let dim = window.dim();
        let mut cell = interaction;
        let shape = loop {
            let shape: Vec<usize> = (0..dim)
                .map(|k| ((window.extent(k) / cell).ceil() as usize).max(1))
                .collect();
            if shape.iter().product::<usize>() <= MAX_CELLS {
                break shape;
            }
            cell *= 1.5;
        };
        let total = shape.iter().product();
        Self {
            dim,
            origin: window.min().to_vec(),
            cell,
            shape,
            cells: vec![Vec::new(); total],
            points: Vec::new(),
            cell_of: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.cell_of.len()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn coords(&self, x: &[f64]) -> Vec<usize> {
        (0..self.dim)
            .map(|k| (((x[k] - self.origin[k]) / self.cell) as usize).min(self.shape[k] - 1))
            .collect()
    }

    fn flat(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.shape).fold(0, |acc, (&ci, &s)| acc * s + ci)
    }

    /// Points other than `skip` at distance `<= r` from `x`.
    fn neighbours(&self, x: &[f64], r: f64, skip: Option<usize>) -> u32 {
        let r2 = r * r;
        let base = self.coords(x);
        let mut count = 0;
        let mut off = vec![-1i64; self.dim];
        let mut c = vec![0usize; self.dim];
        'outer: loop {
            let mut valid = true;
            for k in 0..self.dim {
                let v = base[k] as i64 + off[k];
                if v < 0 || v >= self.shape[k] as i64 {
                    valid = false;
                    break;
                }
                c[k] = v as usize;
            }
            if valid {
                for &j in &self.cells[self.flat(&c)] {
                    let j = j as usize;
                    if Some(j) != skip && dist2(self.point(j), x) <= r2 {
                        count += 1;
                    }
                }
            }
            let mut k = 0;
            loop {
                if k == self.dim {
                    break 'outer;
                }
                off[k] += 1;
                if off[k] <= 1 {
                    break;
                }
                off[k] = -1;
                k += 1;
            }
        }
        count
    }

    fn insert(&mut self, x: &[f64]) {
        let i = self.len();
        let f = self.flat(&self.coords(x));
        self.points.extend_from_slice(x);
        self.cells[f].push(i as u32);
        self.cell_of.push(f);
    }

    fn remove(&mut self, i: usize) {
        let last = self.len() - 1;
        let f = self.cell_of[i];
        let pos = self.cells[f].iter().position(|&j| j as usize == i).expect("indexed point");
        self.cells[f].swap_remove(pos);
        if i != last {
            let g = self.cell_of[last];
            let pos = self.cells[g].iter().position(|&j| j as usize == last).expect("indexed point");
            self.cells[g][pos] = i as u32;
            for k in 0..self.dim {
                self.points[i * self.dim + k] = self.points[last * self.dim + k];
            }
            self.cell_of[i] = g;
        }
        self.points.truncate(last * self.dim);
        self.cell_of.pop();
    }
}

/// Runs the chain from the empty configuration on the window padded by three
/// interaction distances and crops. Returns the points and the proposal count.
pub(super) fn sample(
    window: &Aabb,
    intensity: f64,
    inhibition: f64,
    interaction: f64,
    sweeps: u64,
    seed: u64,
) -> (Vec<f64>, u64) {
    let padded = window.padded(3.0 * interaction);
    let mass = intensity * padded.volume();
    let proposals = sweeps.saturating_mul((mass.round() as u64).max(1));
    let mut rng = substream(seed, Stream::Mcmc, 0);
    let mut state = CellList::new(&padded, interaction);
    let mut x = Vec::with_capacity(padded.dim());
    for _ in 0..proposals {
        let n = state.len();
        if rng.random::<bool>() {
            x.clear();
            uniform_in(&mut rng, &padded, &mut x);
            let k = state.neighbours(&x, interaction, None);
            let ratio = mass * inhibition.powi(k as i32) / (n as f64 + 1.0);
            if ratio >= 1.0 || rng.random::<f64>() < ratio {
                state.insert(&x);
            }
        } else if n > 0 {
            let i = rng.random_range(0..n);
            let k = state.neighbours(state.point(i), interaction, Some(i));
            // beta^-k is infinite for a hard core with k > 0, i.e. always accept
            let ratio = if k == 0 {
                n as f64 / mass
            } else if inhibition == 0.0 {
                f64::INFINITY
            } else {
                n as f64 * inhibition.powi(-(k as i32)) / mass
            };
            if ratio >= 1.0 || rng.random::<f64>() < ratio {
                state.remove(i);
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..state.len() {
        let p = state.point(i);
        if window.contains(p) {
            out.extend_from_slice(p);
        }
    }
    (out, proposals)
}
