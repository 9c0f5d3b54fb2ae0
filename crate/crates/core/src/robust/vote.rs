use super::RobustError;

/// Silverman's rule of thumb, floored at 0.5% of the median magnitude.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let std = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let q = |p: f64| {
        let x = p * (n - 1.0);
        let lo = x.floor() as usize;
        let hi = x.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (x - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let h = 0.9 * spread * n.powf(-0.2);
    let median = q(0.5).abs();
    h.max(0.005 * median).max(f64::MIN_POSITIVE)
}

fn density(sorted: &[f64], x: f64, h: f64) -> f64 {
    sorted
        .iter()
        .map(|s| (-0.5 * ((x - s) / h).powi(2)).exp())
        .sum()
}

/// Mode of the Gaussian kernel density of `samples`. The density is
/// evaluated on 512 points spanning `[min, max]` and the best grid point is
/// refined by three golden-section steps. Ties go to the lower value.
/// `bandwidth = None` selects [`silverman_bandwidth`].
pub fn kernel_vote(samples: &[f64], bandwidth: Option<f64>) -> Result<f64, RobustError> {
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(RobustError::EmptyInput);
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if sorted.len() == 1 || hi == lo {
        return Ok(lo);
    }
    let h = bandwidth
        .filter(|b| *b > 0.0 && b.is_finite())
        .unwrap_or_else(|| silverman_bandwidth(&sorted));
    const GRID: usize = 512;
    let step = (hi - lo) / (GRID - 1) as f64;
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..GRID {
        let v = density(&sorted, lo + step * i as f64, h);
        if v > best * (1.0 + 1e-12) {
            best = v;
            best_i = i;
        }
    }
    // Golden-section on the bracket around the best grid point.
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..3 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if density(&sorted, c, h) >= density(&sorted, d, h) {
            b = d;
        } else {
            a = c;
        }
    }
    let refined = 0.5 * (a + b);
    let grid_x = lo + step * best_i as f64;
    Ok(if density(&sorted, refined, h) >= best {
        refined
    } else {
        grid_x
    })
}
