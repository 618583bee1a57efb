//! Independent reference implementations used as test oracles.

/// Fractional rank by counting: 1 + (values strictly below) + half of the
/// other values that are equal.
pub fn counted_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let below = values.iter().filter(|&&w| w < v).count() as f64;
            let equal = values.iter().filter(|&&w| w == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation of two samples.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// Spearman's ρ as Pearson correlation of counted ranks.
pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&counted_ranks(x), &counted_ranks(y))
}

/// Sort every cell by (cost, row, column) and take each whose row and
/// column are still free.
pub fn sort_and_scan(costs: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut cells: Vec<(f64, usize, usize)> = costs
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(k, &v)| (v, i, k)))
        .collect();
    cells.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut rows = vec![false; costs.len()];
    let mut cols = vec![false; costs[0].len()];
    let mut out = Vec::new();
    for (_, i, k) in cells {
        if !rows[i] && !cols[k] {
            rows[i] = true;
            cols[k] = true;
            out.push((i, k));
        }
    }
    out
}
