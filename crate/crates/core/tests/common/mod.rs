//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use errcast_core::dataset::Table;
use errcast_core::network::Network;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Direct child-SSE of one candidate split, recomputed from scratch.
pub fn split_sse(x: &Table, y: &Table, feature: usize, threshold: f64) -> f64 {
    let (left, right): (Vec<usize>, Vec<usize>) =
        (0..x.rows()).partition(|&r| x.get(r, feature) <= threshold);
    group_sse(y, &left) + group_sse(y, &right)
}

pub fn group_sse(y: &Table, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..y.cols() {
        let mean = rows.iter().map(|&r| y.get(r, j)).sum::<f64>() / rows.len() as f64;
        total += rows.iter().map(|&r| (y.get(r, j) - mean).powi(2)).sum::<f64>();
    }
    total
}

/// Every admissible (feature, threshold, sse) over all rows, in feature then
/// threshold order.
pub fn enumerate_splits(x: &Table, y: &Table, min_leaf: usize) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for f in 0..x.cols() {
        let mut values: Vec<f64> = x.column(f);
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let threshold = (w[0] + w[1]) / 2.0;
            let n_left = (0..x.rows()).filter(|&r| x.get(r, f) <= threshold).count();
            if n_left < min_leaf || x.rows() - n_left < min_leaf {
                continue;
            }
            out.push((f, threshold, split_sse(x, y, f, threshold)));
        }
    }
    out
}

pub fn random_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Table {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(lo..hi)).collect())
        .collect();
    Table::from_rows(&data).unwrap()
}

/// Loss of `net` on every row (mean over samples and outputs), using only the
/// forward pass.
pub fn batch_loss(net: &Network, x: &Table, y: &Table) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..x.rows() {
        let out = net.forward(x.row(r));
        for (o, t) in out.iter().zip(y.row(r)) {
            total += (o - t).powi(2);
            count += 1;
        }
    }
    total / count as f64
}

/// Central finite-difference gradient of [`batch_loss`].
pub fn finite_difference_gradient(net: &Network, x: &Table, y: &Table, step: f64) -> Vec<f64> {
    let base = net.parameters();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.set_parameters(&p);
        let up = batch_loss(&probe, x, y);
        p[i] = base[i] - step;
        probe.set_parameters(&p);
        let down = batch_loss(&probe, x, y);
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Largest componentwise relative difference, with an absolute floor for
/// components that are themselves near zero.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Spearman correlation via average ranks, computed independently of the
/// library's metric.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut ranks = vec![0.0; v.len()];
    for i in 0..v.len() {
        let less = v.iter().filter(|&&w| w < v[i]).count() as f64;
        let equal = v.iter().filter(|&&w| w == v[i]).count() as f64;
        ranks[i] = less + (equal + 1.0) / 2.0;
    }
    ranks
}
