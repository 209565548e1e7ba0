//! Binned 2-D occupancy entropy, the coverage metric for exploration.

/// Entropy (nats) of the visit distribution over an `xbins` x `ybins`
/// grid. Depends only on visit counts, so it is invariant to episode
/// and point order.
pub fn occupancy_entropy(
    points: impl Iterator<Item = (f64, f64)>,
    x_range: (f64, f64),
    y_range: (f64, f64),
    xbins: usize,
    ybins: usize,
) -> f64 {
    let mut counts = vec![0u64; xbins * ybins];
    let mut total = 0u64;
    for (x, y) in points {
        let fx = ((x - x_range.0) / (x_range.1 - x_range.0)).clamp(0.0, 1.0);
        let fy = ((y - y_range.0) / (y_range.1 - y_range.0)).clamp(0.0, 1.0);
        let ix = ((fx * xbins as f64) as usize).min(xbins - 1);
        let iy = ((fy * ybins as f64) as usize).min(ybins - 1);
        counts[iy * xbins + ix] += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_visits_maximize_entropy() {
        let pts: Vec<(f64, f64)> = (0..20)
            .flat_map(|i| (0..10).map(move |j| (i as f64 / 10.0 + 0.05, j as f64 / 10.0 + 0.05)))
            .collect();
        let h = occupancy_entropy(pts.into_iter(), (0.0, 2.0), (0.0, 1.0), 20, 10);
        assert!((h - (200f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn single_cell_has_zero_entropy() {
        let pts = vec![(0.1, 0.1); 50];
        let h = occupancy_entropy(pts.into_iter(), (0.0, 2.0), (0.0, 1.0), 20, 10);
        assert_eq!(h, 0.0);
    }
}
