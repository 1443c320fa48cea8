//! Surface area and volume of the unit ball.

/// `sigma_d = |S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)`, evaluated through the
/// recurrence `sigma_d = 2 pi sigma_{d-2} / (d-2)` so that `sigma_3 = 4 pi`
/// holds bit for bit.
pub fn sigma_d(dim: usize) -> f64 {
    assert!(dim >= 1, "sphere dimension must be positive");
    let mut s = if dim % 2 == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
    let mut k = if dim % 2 == 1 { 1 } else { 2 };
    while k < dim {
        s *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    s
}

/// `omega_d = sigma_d / d`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    sigma_d(dim) / dim as f64
}
