//! Helpers shared by the integration tests.
#![allow(dead_code)]

use bayes_align::MatchingMatrix;

/// Kolmogorov distance between the empirical law of `draws` and `cdf`.
pub fn ks_distance(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Tabulated CDF of an unnormalised log density on `[lo, hi]`, built with the
/// trapezoid rule on `cells` cells and linearly interpolated.
pub struct GridCdf {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl GridCdf {
    pub fn new(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> Self {
        let step = (hi - lo) / cells as f64;
        let logs: Vec<f64> = (0..=cells).map(|i| log_density(lo + i as f64 * step)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let mut values = vec![0.0; cells + 1];
        for i in 1..=cells {
            values[i] = values[i - 1] + 0.5 * step * (dens[i - 1] + dens[i]);
        }
        let total = values[cells];
        values.iter_mut().for_each(|v| *v /= total);
        Self { lo, step, values }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let pos = (t - self.lo) / self.step;
        if pos <= 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return 1.0;
        }
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Every injective partial matching between `m` and `n` points.
pub fn all_matchings(m: usize, n: usize) -> Vec<MatchingMatrix> {
    fn extend(j: usize, m: usize, n: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<MatchingMatrix>) {
        if j == m {
            out.push(MatchingMatrix::from_pairs(m, n, cur).unwrap());
            return;
        }
        extend(j + 1, m, n, used, cur, out);
        for k in 0..n {
            if !used[k] {
                used[k] = true;
                cur.push((j, k));
                extend(j + 1, m, n, used, cur, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(0, m, n, &mut vec![false; n], &mut Vec::new(), &mut out);
    out
}

/// Stable key for a matching.
pub fn key(m: &MatchingMatrix) -> Vec<(usize, usize)> {
    let mut p = m.pairs();
    p.sort();
    p
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
