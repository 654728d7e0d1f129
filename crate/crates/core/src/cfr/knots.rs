//! Residual-driven knot placement and positivity offsets.

/// Picks up to `k` sample indices for new knots.
///
/// Samples are visited in order of decreasing absolute residual (lower index
/// first on ties). The first is always accepted; after that a sample is only
/// accepted when its residual sign differs from the last accepted one. Zero
/// counts as positive.
pub fn select_knots(residuals: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&a, &b| {
        residuals[b]
            .abs()
            .total_cmp(&residuals[a].abs())
            .then(a.cmp(&b))
    });

    let mut picked = Vec::with_capacity(k);
    let mut current: Option<bool> = None;
    for i in order {
        if picked.len() >= k {
            break;
        }
        let positive = residuals[i] >= 0.0;
        if current != Some(positive) {
            current = Some(positive);
            picked.push(i);
        }
    }
    picked
}

/// Shift that makes every residual at least `epsilon` once added.
pub fn compute_offset(residuals: &[f64], epsilon: f64) -> f64 {
    let min = residuals.iter().copied().fold(f64::INFINITY, f64::min);
    if min.is_finite() {
        min.abs() + epsilon
    } else {
        epsilon
    }
}
