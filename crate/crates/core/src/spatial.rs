//! Uniform-cell spatial hashing and a disjoint-set forest.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::aabb::dist2;

/// Static spatial hash over a flat coordinate array (`n * dim` values).
///
/// Queries scan the cells overlapping the query ball; when that would touch
/// more cells than there are points the query falls back to a linear scan.
pub struct SpatialHash<'a> {
    dim: usize,
    cell: f64,
    points: Cow<'a, [f64]>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: impl Into<Cow<'a, [f64]>>, dim: usize, cell: f64) -> Self {
        let points = points.into();
        assert!(dim > 0 && points.len() % dim == 0);
        let cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.chunks_exact(dim).enumerate() {
            buckets.entry(key_of(p, cell)).or_default().push(i);
        }
        Self {
            dim,
            cell,
            points,
            buckets,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Calls `f(index, squared_distance)` for every point with `|p - x| <= radius`.
    pub fn for_each_within(&self, x: &[f64], radius: f64, mut f: impl FnMut(usize, f64)) {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let span = (2 * reach + 1) as f64;
        if !radius.is_finite() || span.powi(self.dim as i32) > self.len() as f64 {
            for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
                let d2 = dist2(p, x);
                if d2 <= r2 {
                    f(i, d2);
                }
            }
            return;
        }
        let center = key_of(x, self.cell);
        let mut key = vec![0i64; self.dim];
        let mut offset = vec![-reach; self.dim];
        loop {
            for k in 0..self.dim {
                key[k] = center[k] + offset[k];
            }
            if let Some(bucket) = self.buckets.get(&key) {
                for &i in bucket {
                    let d2 = dist2(self.point(i), x);
                    if d2 <= r2 {
                        f(i, d2);
                    }
                }
            }
            // odometer increment over the (2 reach + 1)^d block
            let mut k = 0;
            loop {
                if k == self.dim {
                    return;
                }
                offset[k] += 1;
                if offset[k] <= reach {
                    break;
                }
                offset[k] = -reach;
                k += 1;
            }
        }
    }

    /// Distance from point `i` to its nearest other point, if closer than `limit`.
    pub fn nearest_other_within(&self, i: usize, limit: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        self.for_each_within(self.point(i), limit, |j, d2| {
            if j != i && d2 < best {
                best = d2;
            }
        });
        best.is_finite().then(|| best.sqrt())
    }
}

fn key_of(p: &[f64], cell: f64) -> Vec<i64> {
    p.iter().map(|v| (v / cell).floor() as i64).collect()
}

/// Disjoint-set forest with path halving and union by size.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Components as sorted index lists, ordered by their smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn union_find_merges() {
        let mut uf = UnionFind::new(5);
        uf.union(0, 1);
        uf.union(3, 4);
        uf.union(1, 4);
        assert_eq!(uf.components(), vec![vec![0, 1, 3, 4], vec![2]]);
    }

    proptest! {
        #[test]
        fn hash_query_matches_brute_force(
            pts in prop::collection::vec(-5.0f64..5.0, 3 * 40),
            q in prop::collection::vec(-5.0f64..5.0, 3),
            radius in 0.0f64..4.0,
            cell in 0.2f64..3.0,
        ) {
            let hash = SpatialHash::new(&pts, 3, cell);
            let mut got = Vec::new();
            hash.for_each_within(&q, radius, |i, _| got.push(i));
            got.sort();
            let want: Vec<usize> = pts
                .chunks_exact(3)
                .enumerate()
                .filter(|(_, p)| dist2(p, &q) <= radius * radius)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(got, want);
        }
    }
}
