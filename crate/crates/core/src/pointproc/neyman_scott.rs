//! Neyman-Scott cluster process with uniformly random cluster radii.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{poisson_count, uniform_in, unit_ball_volume};
use crate::aabb::Aabb;
use crate::rng::{substream, Stream};

pub(super) fn sample(
    window: &Aabb,
    parent_intensity: f64,
    cluster_radius_max: f64,
    daughter_intensity: f64,
    seed: u64,
) -> Vec<f64> {
    let dim = window.dim();
    let padded = window.padded(cluster_radius_max);
    let mut rng = substream(seed, Stream::Centers, 0);
    let n_parents = poisson_count(&mut rng, parent_intensity * padded.volume());
    let mut parents = Vec::with_capacity(n_parents as usize * dim);
    for _ in 0..n_parents {
        uniform_in(&mut rng, &padded, &mut parents);
    }
    let ball = unit_ball_volume(dim);
    let mut out = Vec::new();
    let mut x = vec![0.0f64; dim];
    for (i, parent) in parents.chunks_exact(dim).enumerate() {
        let mut rng = substream(seed, Stream::Clusters, i as u64);
        let r = cluster_radius_max * rng.random::<f64>();
        let n = poisson_count(&mut rng, daughter_intensity * ball * r.powi(dim as i32));
        for _ in 0..n {
            // uniform in the ball: isotropic direction, radius r U^{1/d}
            let mut norm2 = 0.0f64;
            for v in x.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
                norm2 += *v * *v;
            }
            let s = r * rng.random::<f64>().powf(1.0 / dim as f64) / norm2.sqrt().max(f64::MIN_POSITIVE);
            for (v, p) in x.iter_mut().zip(parent) {
                *v = p + s * *v;
            }
            if window.contains(&x) {
                out.extend_from_slice(&x);
            }
        }
    }
    out
}
