//! Order statistics for run summaries.

/// Linear-interpolation quantile (the "type 7" rule) of `values`.
/// `+inf` entries sort last, so diverged runs only move the upper quantiles.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        Some(sorted[lo])
    } else {
        Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}
