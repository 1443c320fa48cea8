//! Scaled hole sets and their good/bad partitions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aabb::{dist, Aabb};
use crate::error::{Error, Result};
use crate::measure::sigma_d;
use crate::pointproc::{fmt_f64, thin_mask, PointConfiguration, ProcessKind};
use crate::spatial::{SpatialHash, UnionFind};

/// Holes `B(eps z_j, eps^{d/(d-2)} rho_j)` for `z_j` in `Phi ∩ (1/eps)D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleSet {
    epsilon: f64,
    domain: Aabb,
    /// Unscaled centers `z_j`.
    lattice: Vec<f64>,
    /// Unscaled marks `rho_j`.
    rho: Vec<f64>,
    centers: Vec<f64>,
    radii: Vec<f64>,
    source: Vec<usize>,
    kind: Option<ProcessKind>,
}

/// `eps^{d/(d-2)}`, the critical radius scaling.
pub fn radius_scale(epsilon: f64, dim: usize) -> f64 {
    epsilon.powf(dim as f64 / (dim as f64 - 2.0))
}

pub fn build_holes(config: &PointConfiguration, epsilon: f64, domain: &Aabb) -> Result<HoleSet> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let dim = config.dim();
    if domain.dim() != dim {
        return Err(Error::invalid("domain", "dimension differs from the configuration"));
    }
    let scaled = domain.scaled(1.0 / epsilon);
    if !config.window().encloses(&scaled, 1e-9) {
        return Err(Error::WindowTooSmall(format!(
            "window {:?}..{:?} vs (1/eps)D = {:?}..{:?}",
            config.window().min(),
            config.window().max(),
            scaled.min(),
            scaled.max()
        )));
    }
    let scale = radius_scale(epsilon, dim);
    let mut out = HoleSet {
        epsilon,
        domain: domain.clone(),
        lattice: Vec::new(),
        rho: Vec::new(),
        centers: Vec::new(),
        radii: Vec::new(),
        source: Vec::new(),
        kind: config.kind(),
    };
    for i in 0..config.len() {
        let z = config.center(i);
        if !scaled.contains(z) {
            continue;
        }
        out.lattice.extend_from_slice(z);
        out.centers.extend(z.iter().map(|v| epsilon * v));
        out.rho.push(config.radii()[i]);
        out.radii.push(scale * config.radii()[i]);
        out.source.push(i);
    }
    Ok(out)
}

impl HoleSet {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.centers[j * d..(j + 1) * d]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn radius(&self, j: usize) -> f64 {
        self.radii[j]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn rho(&self, j: usize) -> f64 {
        self.rho[j]
    }

    pub fn unscaled_center(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.lattice[j * d..(j + 1) * d]
    }

    /// Index of hole `j` in the source configuration.
    pub fn source_index(&self, j: usize) -> usize {
        self.source[j]
    }

    pub fn kind(&self) -> Option<ProcessKind> {
        self.kind
    }

    /// Copy with every mark multiplied by `factor`.
    pub fn with_scaled_marks(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.rho.iter_mut().for_each(|r| *r *= factor);
        out.radii.iter_mut().for_each(|r| *r *= factor);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HoleClass {
    Good,
    /// `J_b`: radius above the admissible threshold.
    Oversized,
    /// `K_b`: removed by the thinning at scale `2 r_eps`.
    Crowded,
    /// `Ĩ_b`: near a doubled oversized ball.
    Contaminated,
}

impl HoleClass {
    pub fn tag(self) -> &'static str {
        match self {
            HoleClass::Good => "GOOD",
            HoleClass::Oversized => "JB",
            HoleClass::Crowded => "KB",
            HoleClass::Contaminated => "ITILDE",
        }
    }

    pub fn is_bad(self) -> bool {
        self != HoleClass::Good
    }
}

/// Piece of the safety layer `D_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SafetyPrimitive {
    /// Closed cube `|x - center|_inf <= half_width`.
    Cube { center: Vec<f64>, half_width: f64 },
    /// Closed ball.
    Ball { center: Vec<f64>, radius: f64 },
}

impl SafetyPrimitive {
    /// Euclidean distance from `x` to the primitive (0 inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            SafetyPrimitive::Cube { center, half_width } => center
                .iter()
                .zip(x)
                .map(|(c, v)| ((v - c).abs() - half_width).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
            SafetyPrimitive::Ball { center, radius } => (dist(center, x) - radius).max(0.0),
        }
    }

    /// Radius of a ball around the center enclosing the primitive.
    fn bounding_radius(&self) -> f64 {
        match self {
            SafetyPrimitive::Cube { center, half_width } => half_width * (center.len() as f64).sqrt(),
            SafetyPrimitive::Ball { radius, .. } => *radius,
        }
    }

    fn center(&self) -> &[f64] {
        match self {
            SafetyPrimitive::Cube { center, .. } | SafetyPrimitive::Ball { center, .. } => center,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Periodic { delta: f64 },
    General { alpha: f64 },
}

/// Classification of the holes into good holes with clearances and bad holes
/// wrapped in the safety layer `D_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolePartition {
    scheme: PartitionScheme,
    epsilon: f64,
    classes: Vec<HoleClass>,
    clearance: Vec<Option<f64>>,
    safety_layer: Vec<SafetyPrimitive>,
    r_eps: Option<f64>,
    cap_bad_upper: f64,
}

impl HolePartition {
    pub fn scheme(&self) -> PartitionScheme {
        self.scheme
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn classes(&self) -> &[HoleClass] {
        &self.classes
    }

    pub fn class(&self, j: usize) -> HoleClass {
        self.classes[j]
    }

    /// `d_j^eps` for good holes, `None` for bad ones.
    pub fn clearance(&self, j: usize) -> Option<f64> {
        self.clearance[j]
    }

    pub fn good(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes.len()).filter(|&j| !self.classes[j].is_bad())
    }

    pub fn bad(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes.len()).filter(|&j| self.classes[j].is_bad())
    }

    pub fn count(&self, class: HoleClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn n_good(&self) -> usize {
        self.count(HoleClass::Good)
    }

    pub fn n_bad(&self) -> usize {
        self.classes.len() - self.n_good()
    }

    pub fn safety_layer(&self) -> &[SafetyPrimitive] {
        &self.safety_layer
    }

    pub fn r_eps(&self) -> Option<f64> {
        self.r_eps
    }

    /// `sum_{j in I_b} (d-2) sigma_d eps^d rho_j^{d-2} / (1 - 2^{-(d-2)})`.
    pub fn cap_bad_upper(&self) -> f64 {
        self.cap_bad_upper
    }

    /// Distance from `x` to `D_b` (infinite when `D_b` is empty).
    pub fn distance_to_safety_layer(&self, x: &[f64]) -> f64 {
        self.safety_layer
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Guaranteed separation between good holes and `D_b`.
    pub fn separation(&self) -> f64 {
        match self.scheme {
            PartitionScheme::Periodic { .. } => 0.5 * self.epsilon,
            PartitionScheme::General { .. } => {
                0.5 * self.epsilon * self.r_eps.expect("general partition has r_eps")
            }
        }
    }
}

fn bad_capacity_bound(holes: &HoleSet, classes: &[HoleClass]) -> f64 {
    let d = holes.dim();
    let m = d as f64 - 2.0;
    let eps_d = holes.epsilon.powi(d as i32);
    let factor = m * sigma_d(d) / (1.0 - 0.5f64.powf(m));
    (0..holes.len())
        .filter(|&j| classes[j].is_bad())
        .map(|j| factor * eps_d * holes.rho[j].powf(m))
        .fold(0.0, |a, b| a + b)
}

pub(crate) fn check_exponent(path: &str, v: f64, dim: usize) -> Result<()> {
    let hi = 2.0 / (dim as f64 - 2.0);
    if v > 0.0 && v < hi {
        Ok(())
    } else {
        Err(Error::invalid(path, format!("must lie in (0, {hi}), got {v}")))
    }
}

/// Default `delta = alpha = 1/(d-2)`, the midpoint of the admissible interval.
pub fn default_exponent(dim: usize) -> f64 {
    1.0 / (dim as f64 - 2.0)
}

/// Partition of a lattice configuration: oversized holes are those with
/// radius `>= eps^{1+delta}`; every lattice cell (closed cube of side `eps`)
/// meeting a doubled oversized ball joins the bad set and `D_b`.
pub fn partition_periodic(holes: &HoleSet, delta: f64) -> Result<HolePartition> {
    let dim = holes.dim();
    check_exponent("partition.delta", delta, dim)?;
    if let Some(kind) = holes.kind {
        if kind != ProcessKind::Periodic {
            return Err(Error::WrongProcessKind(kind.to_string()));
        }
    }
    if holes.lattice.iter().any(|v| (v - v.round()).abs() > 1e-9) {
        return Err(Error::WrongProcessKind("centers off the integer lattice".into()));
    }
    let eps = holes.epsilon;
    if 2.0 * eps.powf(1.0 + delta) > eps {
        return Err(Error::EpsilonTooLarge {
            epsilon: eps,
            reason: format!("need 2 eps^(1+delta) <= eps, i.e. eps^delta <= 1/2 (delta = {delta})"),
        });
    }
    let threshold = eps.powf(1.0 + delta);
    let half = 0.5 * eps;
    let tie = 1e-12 * eps;
    let mut classes = vec![HoleClass::Good; holes.len()];
    let oversized: Vec<usize> = (0..holes.len()).filter(|&j| holes.radii[j] >= threshold).collect();
    for &j in &oversized {
        classes[j] = HoleClass::Oversized;
    }

    // cells reachable from the domain; farther cells affect nothing
    let lo: Vec<i64> = holes.domain.min().iter().map(|v| (v / eps).floor() as i64 - 1).collect();
    let hi: Vec<i64> = holes.domain.max().iter().map(|v| (v / eps).ceil() as i64 + 1).collect();
    let mut bad_cells: std::collections::BTreeSet<Vec<i64>> = Default::default();
    for &j in &oversized {
        let c = holes.center(j);
        let r2 = 2.0 * holes.radii[j];
        let a: Vec<i64> = (0..dim).map(|k| (((c[k] - r2) / eps - 0.5).floor() as i64).max(lo[k])).collect();
        let b: Vec<i64> = (0..dim).map(|k| (((c[k] + r2) / eps + 0.5).ceil() as i64).min(hi[k])).collect();
        if a.iter().zip(&b).any(|(x, y)| x > y) {
            continue;
        }
        let mut z = a.clone();
        loop {
            let cube = SafetyPrimitive::Cube {
                center: z.iter().map(|&v| v as f64 * eps).collect(),
                half_width: half,
            };
            if cube.distance(c) <= r2 + tie {
                bad_cells.insert(z.clone());
            }
            let mut k = 0;
            loop {
                if k == dim {
                    break;
                }
                z[k] += 1;
                if z[k] <= b[k] {
                    break;
                }
                z[k] = a[k];
                k += 1;
            }
            if k == dim {
                break;
            }
        }
    }
    for j in 0..holes.len() {
        if classes[j] == HoleClass::Good {
            let key: Vec<i64> = holes.unscaled_center(j).iter().map(|v| v.round() as i64).collect();
            if bad_cells.contains(&key) {
                classes[j] = HoleClass::Contaminated;
            }
        }
    }
    let clearance = classes
        .iter()
        .map(|c| (!c.is_bad()).then_some(half))
        .collect();
    let safety_layer = bad_cells
        .into_iter()
        .map(|z| SafetyPrimitive::Cube {
            center: z.iter().map(|&v| v as f64 * eps).collect(),
            half_width: half,
        })
        .collect();
    let cap_bad_upper = bad_capacity_bound(holes, &classes);
    Ok(HolePartition {
        scheme: PartitionScheme::Periodic { delta },
        epsilon: eps,
        classes,
        clearance,
        safety_layer,
        r_eps: None,
        cap_bad_upper,
    })
}

/// `r_eps = (eps^{d/(d-2)} max rho)^{1/d} ∨ eps^{alpha/4}`.
pub fn r_eps(holes: &HoleSet, alpha: f64) -> f64 {
    let d = holes.dim() as f64;
    let max_radius = holes.radii.iter().copied().fold(0.0, f64::max);
    max_radius.powf(1.0 / d).max(holes.epsilon.powf(0.25 * alpha))
}

/// Partition for an arbitrary configuration. With `eta = eps r_eps`:
/// oversized holes have radius `>= eta/2`; crowded holes are the remaining
/// ones removed by thinning the unscaled centers at `2 r_eps`; contaminated
/// holes are the rest whose `B_eta` meets a doubled oversized ball.
/// `D_b` is the union of the doubled bad balls.
///
/// Rejects configurations with `r_eps > 1`: then `eta > eps` and the
/// clearance `d_j <= eps` no longer dominates the good radii.
pub fn partition_general(holes: &HoleSet, alpha: f64) -> Result<HolePartition> {
    let dim = holes.dim();
    check_exponent("partition.alpha", alpha, dim)?;
    if holes.is_empty() {
        return Err(Error::EmptyConfiguration);
    }
    let eps = holes.epsilon;
    let r = r_eps(holes, alpha);
    if r > 1.0 {
        return Err(Error::EpsilonTooLarge {
            epsilon: eps,
            reason: format!("r_eps = {r} exceeds 1 (largest hole too large for this eps)"),
        });
    }
    let eta = eps * r;
    let n = holes.len();
    let mut classes = vec![HoleClass::Good; n];
    let oversized: Vec<usize> = (0..n).filter(|&j| holes.radii[j] >= 0.5 * eta).collect();
    for &j in &oversized {
        classes[j] = HoleClass::Oversized;
    }
    let kept = thin_mask(&holes.lattice, dim, 2.0 * r);
    for j in 0..n {
        if !kept[j] && classes[j] == HoleClass::Good {
            classes[j] = HoleClass::Crowded;
        }
    }
    let hash = SpatialHash::new(&holes.centers, dim, eta.max(1e-300));
    for &i in &oversized {
        let reach = eta + 2.0 * holes.radii[i];
        hash.for_each_within(holes.center(i), reach, |j, _| {
            if classes[j] == HoleClass::Good {
                classes[j] = HoleClass::Contaminated;
            }
        });
    }

    let safety_layer: Vec<SafetyPrimitive> = (0..n)
        .filter(|&j| classes[j].is_bad())
        .map(|j| SafetyPrimitive::Ball {
            center: holes.center(j).to_vec(),
            radius: 2.0 * holes.radii[j],
        })
        .collect();
    let layer = SafetyIndex::new(&safety_layer, dim, eps);
    let center_hash = SpatialHash::new(&holes.centers, dim, eps);
    let clearance = (0..n)
        .map(|j| {
            if classes[j].is_bad() {
                return None;
            }
            let c = holes.center(j);
            let half_nn = center_hash
                .nearest_other_within(j, 2.0 * eps)
                .map_or(f64::INFINITY, |v| 0.5 * v);
            Some(layer.distance_capped(c, eps).min(half_nn).min(eps))
        })
        .collect();
    let cap_bad_upper = bad_capacity_bound(holes, &classes);
    Ok(HolePartition {
        scheme: PartitionScheme::General { alpha },
        epsilon: eps,
        classes,
        clearance,
        safety_layer,
        r_eps: Some(r),
        cap_bad_upper,
    })
}

/// Distance queries against a list of primitives, exact below a cap.
pub(crate) struct SafetyIndex<'a> {
    prims: &'a [SafetyPrimitive],
    hash: SpatialHash<'static>,
    small_ids: Vec<usize>,
    large: Vec<usize>,
    bound: f64,
}

impl<'a> SafetyIndex<'a> {
    /// Primitives with bounding radius above `bound` are scanned directly.
    pub(crate) fn new(prims: &'a [SafetyPrimitive], dim: usize, bound: f64) -> Self {
        let mut small_centers = Vec::new();
        let mut small_ids = Vec::new();
        let mut large = Vec::new();
        for (i, p) in prims.iter().enumerate() {
            if p.bounding_radius() <= bound {
                small_centers.extend_from_slice(p.center());
                small_ids.push(i);
            } else {
                large.push(i);
            }
        }
        Self {
            prims,
            hash: SpatialHash::new(small_centers, dim, bound),
            small_ids,
            large,
            bound,
        }
    }

    /// `min(dist(x, union), cap)`; exact whenever the result is below `cap`.
    pub(crate) fn distance_capped(&self, x: &[f64], cap: f64) -> f64 {
        let mut best = cap;
        for &i in &self.large {
            best = best.min(self.prims[i].distance(x));
        }
        self.hash.for_each_within(x, cap + self.bound, |k, _| {
            best = best.min(self.prims[self.small_ids[k]].distance(x));
        });
        best
    }
}

/// Connected components of the overlap graph (`|c_i - c_j| < r_i + r_j`),
/// singletons included, each sorted and listed by smallest member.
pub fn detect_overlaps(holes: &HoleSet) -> Vec<Vec<usize>> {
    let n = holes.len();
    let dim = holes.dim();
    let mut uf = UnionFind::new(n);
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = holes.radii.clone();
    sorted.sort_by(f64::total_cmp);
    // radius separating "typical" holes, hashed, from the few large ones
    let cut = sorted[(9 * n) / 10].max(f64::MIN_POSITIVE);
    let small: Vec<usize> = (0..n).filter(|&j| holes.radii[j] <= cut).collect();
    let large: Vec<usize> = (0..n).filter(|&j| holes.radii[j] > cut).collect();
    let pts: Vec<f64> = small.iter().flat_map(|&j| holes.center(j).to_vec()).collect();
    let hash = SpatialHash::new(&pts, dim, 2.0 * cut);
    for (a, &i) in small.iter().enumerate() {
        hash.for_each_within(holes.center(i), 2.0 * cut, |b, d2| {
            let j = small[b];
            let s = holes.radii[i] + holes.radii[j];
            if b > a && d2 < s * s {
                uf.union(i, j);
            }
        });
    }
    for &i in &large {
        for j in 0..n {
            let s = holes.radii[i] + holes.radii[j];
            if j != i && crate::aabb::dist2(holes.center(i), holes.center(j)) < s * s {
                uf.union(i, j);
            }
        }
    }
    uf.components()
}

/// Writes one `index CLASS center.. radius clearance` line per hole (the
/// clearance is `-` for bad holes) followed by `#` summary lines.
pub fn write_partition_dump(
    holes: &HoleSet,
    partition: &HolePartition,
    mut out: impl Write,
) -> Result<()> {
    for j in 0..holes.len() {
        let mut fields = vec![j.to_string(), partition.class(j).tag().to_string()];
        fields.extend(holes.center(j).iter().map(|&v| fmt_f64(v)));
        fields.push(fmt_f64(holes.radius(j)));
        fields.push(partition.clearance(j).map_or("-".to_string(), fmt_f64));
        writeln!(out, "{}", fields.join(" "))?;
    }
    let scheme = match partition.scheme {
        PartitionScheme::Periodic { delta } => format!("periodic delta={delta}"),
        PartitionScheme::General { alpha } => format!("general alpha={alpha}"),
    };
    writeln!(out, "# scheme {scheme}")?;
    writeln!(out, "# epsilon {}", fmt_f64(partition.epsilon))?;
    if let Some(r) = partition.r_eps {
        writeln!(out, "# r_eps {}", fmt_f64(r))?;
    }
    writeln!(out, "# n_holes {}", holes.len())?;
    for class in [HoleClass::Good, HoleClass::Oversized, HoleClass::Crowded, HoleClass::Contaminated] {
        writeln!(out, "# n_{} {}", class.tag(), partition.count(class))?;
    }
    writeln!(out, "# safety_primitives {}", partition.safety_layer.len())?;
    writeln!(out, "# cap_bad_upper {}", fmt_f64(partition.cap_bad_upper))?;
    Ok(())
}
