//! Posterior summaries and the loss-optimal matching.
//!
//! Under additive per-pair losses the posterior expected loss of declaring
//! `M̂` is, up to a constant, `-(ℓ10 + ℓ01 - ℓ11 - ℓ00) Σ_{(j,k) ∈ M̂} (p_jk - K)`,
//! so the optimal declaration maximises `Σ (p_jk - K)` over valid matchings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{polar_rotation_mean, GeometryError};
use crate::model::{Losses, LossSpec, MatchingMatrix, Matrix, ModelError, Point, TransformMode};
use crate::sampler::Trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("trace has no retained samples")]
    EmptyTrace,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Posterior match probabilities `p_jk`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchProbabilityTable {
    pub m: usize,
    pub n: usize,
    pub p: Vec<f64>,
    pub sample_count: usize,
}

impl MatchProbabilityTable {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == n), "ragged probability table");
        Self {
            m,
            n,
            p: rows.iter().flatten().cloned().collect(),
            sample_count: 0,
        }
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.p[j * self.n + k]
    }

    pub fn set(&mut self, j: usize, k: usize, value: f64) {
        self.p[j * self.n + k] = value;
    }

    /// All pairs with positive probability, most probable first; ties in
    /// `(j, k)` order.
    pub fn ranked(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = (0..self.m)
            .flat_map(|j| (0..self.n).map(move |k| (j, k)))
            .map(|(j, k)| (j, k, self.get(j, k)))
            .filter(|e| e.2 > 0.0)
            .collect();
        out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        out
    }

    /// `Σ_{(j,k) ∈ M} (p_jk - K)`.
    pub fn objective(&self, matching: &MatchingMatrix, k: f64) -> f64 {
        matching.iter().map(|(j, kk)| self.get(j, kk) - k).sum()
    }
}

/// Empirical frequency of each pair over the retained samples.
pub fn match_probabilities<const D: usize>(
    trace: &Trace<D>,
) -> Result<MatchProbabilityTable, EstimationError> {
    if trace.samples.is_empty() {
        return Err(EstimationError::EmptyTrace);
    }
    let mut counts = vec![0u64; trace.m * trace.n];
    for s in &trace.samples {
        for &(j, k) in &s.pairs {
            counts[j * trace.n + k] += 1;
        }
    }
    let total = trace.samples.len() as f64;
    Ok(MatchProbabilityTable {
        m: trace.m,
        n: trace.n,
        p: counts.into_iter().map(|c| c as f64 / total).collect(),
        sample_count: trace.samples.len(),
    })
}

/// Maximum-weight assignment on a square matrix of non-negative weights
/// (Hungarian algorithm, shortest augmenting paths with potentials).
/// Returns `assignment[row] = column`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let size = weights.len();
    if size == 0 {
        return Vec::new();
    }
    // Minimise cost = -weight. Arrays are 1-based with a virtual column 0.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut row_of_col = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; size];
    for j in 1..=size {
        assignment[row_of_col[j] - 1] = j - 1;
    }
    assignment
}

/// The matching over pairs with `p_jk > K` maximising `Σ (p_jk - K)`,
/// solved exactly by bipartite assignment.
pub fn optimal_matching_by_assignment(table: &MatchProbabilityTable, k: f64) -> MatchingMatrix {
    let size = table.m.max(table.n);
    let weights: Vec<Vec<f64>> = (0..size)
        .map(|j| {
            (0..size)
                .map(|kk| {
                    if j < table.m && kk < table.n {
                        (table.get(j, kk) - k).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = max_weight_assignment(&weights);
    let pairs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .filter(|&(j, &kk)| j < table.m && kk < table.n && table.get(j, kk) > k)
        .map(|(j, &kk)| (j, kk))
        .collect();
    MatchingMatrix::from_pairs(table.m, table.n, &pairs).expect("assignment is injective")
}

/// Pairs strictly above `K`, if they form a valid matching.
pub fn threshold_matching(table: &MatchProbabilityTable, k: f64) -> Option<MatchingMatrix> {
    let pairs: Vec<(usize, usize)> = (0..table.m)
        .flat_map(|j| (0..table.n).map(move |kk| (j, kk)))
        .filter(|&(j, kk)| table.get(j, kk) > k)
        .collect();
    MatchingMatrix::from_pairs(table.m, table.n, &pairs).ok()
}

/// Loss-optimal point estimate of the matching for cost ratio `K`.
///
/// When the pairs above `K` share no index they are exactly the optimum;
/// otherwise an exact assignment is solved over those pairs.
pub fn optimal_matching(table: &MatchProbabilityTable, loss: LossSpec) -> MatchingMatrix {
    threshold_matching(table, loss.k())
        .unwrap_or_else(|| optimal_matching_by_assignment(table, loss.k()))
}

/// Posterior expected loss of declaring `m_hat`, excluding the additive
/// constant that does not depend on `m_hat` (so the empty declaration scores 0).
pub fn expected_loss(
    m_hat: &MatchingMatrix,
    table: &MatchProbabilityTable,
    losses: Losses,
) -> Result<f64, EstimationError> {
    let scale = losses.scale()?;
    let k = LossSpec::from_losses(losses)?.k();
    Ok(-scale * table.objective(m_hat, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary<const D: usize> {
    pub tau_mean: Point<D>,
    pub tau_cov: Matrix<D>,
    pub sigma_mean: f64,
    pub sigma_var: f64,
    /// Polar part of the mean sampled rotation; `None` when `A` was fixed.
    pub a_hat: Option<Matrix<D>>,
    /// Posterior pmf of the match count over `0..=min(m, n)`.
    pub l_pmf: Vec<f64>,
    pub l_mean: f64,
    pub sample_count: usize,
}

/// Moments of the retained draws. Covariances use the `N - 1` denominator
/// (zero when only one sample is retained).
pub fn summarize<const D: usize>(trace: &Trace<D>) -> Result<PosteriorSummary<D>, EstimationError> {
    let samples = &trace.samples;
    if samples.is_empty() {
        return Err(EstimationError::EmptyTrace);
    }
    let count = samples.len() as f64;
    let denom = (count - 1.0).max(1.0);
    let tau_mean = samples.iter().map(|s| s.tau).sum::<Point<D>>() / count;
    let tau_cov = samples
        .iter()
        .map(|s| (s.tau - tau_mean) * (s.tau - tau_mean).transpose())
        .sum::<Matrix<D>>()
        / denom;
    let sigma_mean = samples.iter().map(|s| s.sigma).sum::<f64>() / count;
    let sigma_var = samples
        .iter()
        .map(|s| (s.sigma - sigma_mean).powi(2))
        .sum::<f64>()
        / denom;
    let a_hat = match trace.mode {
        TransformMode::Fixed => None,
        TransformMode::Rotation => {
            let mats: Vec<Matrix<D>> = samples.iter().map(|s| s.a).collect();
            Some(polar_rotation_mean(&mats)?)
        }
    };
    let mut l_pmf = vec![0.0; trace.m.min(trace.n) + 1];
    for s in samples {
        l_pmf[s.pairs.len()] += 1.0 / count;
    }
    let l_mean = samples.iter().map(|s| s.pairs.len() as f64).sum::<f64>() / count;
    Ok(PosteriorSummary {
        tau_mean,
        tau_cov,
        sigma_mean,
        sigma_var,
        a_hat,
        l_pmf,
        l_mean,
        sample_count: samples.len(),
    })
}
