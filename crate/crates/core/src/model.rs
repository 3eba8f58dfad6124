//! The hierarchical Poisson alignment model.
//!
//! Hidden true locations form a homogeneous Poisson process; each is seen in
//! neither, one, or both configurations. Integrating the hidden points out
//! leaves a joint density over the matching `M`, the linear part `A`, the
//! translation `τ` and the noise scale `σ`:
//!
//! ```text
//! p(M, A, τ, σ | x, y) ∝ |A|ⁿ p(A) p(τ) p(σ) Π_{(j,k) ∈ M} κ φ_d((x_j - A y_k - τ)/σ√2) / (σ√2)^d
//! ```
//!
//! with `κ = ρ/λ` (`kappa_match`). The region volume `v` cancels, so only the
//! standalone analysis of the prior on the match count uses `ρ/(λv)`.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::geometry::{determinant, rotation_matrix_2d, VonMisesParams};

pub type Point<const D: usize> = SVector<f64, D>;
pub type Matrix<const D: usize> = SMatrix<f64, D, D>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unsupported dimension {0}; only 2 and 3 are allowed")]
    UnsupportedDimension(usize),
    #[error("colour list has {colours} entries but configuration has {points} points")]
    ColourLength { points: usize, colours: usize },
    #[error("matching has an out-of-range pair ({0}, {1})")]
    PairOutOfRange(usize, usize),
    #[error("index used twice in matching: {0}")]
    NotInjective(String),
    #[error("prior guess must lie strictly between 0 and {max}, got {got}")]
    ElicitationOutOfRange { got: f64, max: usize },
    #[error("invalid loss specification: {0}")]
    InvalidLoss(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
}

/// One observed point configuration, optionally coloured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration<const D: usize> {
    pub points: Vec<Point<D>>,
    pub colours: Option<Vec<String>>,
}

impl<const D: usize> Configuration<D> {
    pub fn new(points: Vec<Point<D>>) -> Result<Self, ModelError> {
        Self::with_colours(points, None)
    }

    pub fn with_colours(
        points: Vec<Point<D>>,
        colours: Option<Vec<String>>,
    ) -> Result<Self, ModelError> {
        if D != 2 && D != 3 {
            return Err(ModelError::UnsupportedDimension(D));
        }
        if let Some(c) = &colours {
            if c.len() != points.len() {
                return Err(ModelError::ColourLength {
                    points: points.len(),
                    colours: c.len(),
                });
            }
        }
        Ok(Self { points, colours })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn colour(&self, i: usize) -> Option<&str> {
        self.colours.as_ref().map(|c| c[i].as_str())
    }

    pub fn centroid(&self) -> Point<D> {
        if self.points.is_empty() {
            return Point::<D>::zeros();
        }
        self.points.iter().sum::<Point<D>>() / self.points.len() as f64
    }
}

/// Index set supporting O(1) insert, remove and uniform choice.
#[derive(Debug, Clone, PartialEq, Eq)]
struct FreeList {
    items: Vec<usize>,
    slot: Vec<usize>,
}

impl FreeList {
    const ABSENT: usize = usize::MAX;

    fn full(n: usize) -> Self {
        Self {
            items: (0..n).collect(),
            slot: (0..n).collect(),
        }
    }

    fn remove(&mut self, i: usize) {
        let s = self.slot[i];
        debug_assert_ne!(s, Self::ABSENT);
        let last = *self.items.last().expect("non-empty");
        self.items.swap_remove(s);
        if last != i {
            self.slot[last] = s;
        }
        self.slot[i] = Self::ABSENT;
    }

    fn insert(&mut self, i: usize) {
        debug_assert_eq!(self.slot[i], Self::ABSENT);
        self.slot[i] = self.items.len();
        self.items.push(i);
    }
}

/// A one-to-one partial correspondence between x-indices and y-indices.
///
/// Indices are zero-based internally.
#[derive(Debug, Clone)]
pub struct MatchingMatrix {
    match_of_x: Vec<Option<usize>>,
    match_of_y: Vec<Option<usize>>,
    free_x: FreeList,
    free_y: FreeList,
}

impl PartialEq for MatchingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.match_of_x == other.match_of_x && self.match_of_y.len() == other.match_of_y.len()
    }
}

impl Eq for MatchingMatrix {}

impl MatchingMatrix {
    pub fn empty(m: usize, n: usize) -> Self {
        Self {
            match_of_x: vec![None; m],
            match_of_y: vec![None; n],
            free_x: FreeList::full(m),
            free_y: FreeList::full(n),
        }
    }

    pub fn from_pairs(m: usize, n: usize, pairs: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut out = Self::empty(m, n);
        for &(j, k) in pairs {
            if j >= m || k >= n {
                return Err(ModelError::PairOutOfRange(j, k));
            }
            if out.match_of_x[j].is_some() {
                return Err(ModelError::NotInjective(format!("x {j}")));
            }
            if out.match_of_y[k].is_some() {
                return Err(ModelError::NotInjective(format!("y {k}")));
            }
            out.add(j, k);
        }
        Ok(out)
    }

    pub fn m(&self) -> usize {
        self.match_of_x.len()
    }

    pub fn n(&self) -> usize {
        self.match_of_y.len()
    }

    /// Number of matched pairs `L`.
    pub fn len(&self) -> usize {
        self.m() - self.free_x.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn match_of_x(&self, j: usize) -> Option<usize> {
        self.match_of_x[j]
    }

    pub fn match_of_y(&self, k: usize) -> Option<usize> {
        self.match_of_y[k]
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        self.match_of_x[j] == Some(k)
    }

    pub fn unmatched_x(&self) -> &[usize] {
        &self.free_x.items
    }

    pub fn unmatched_y(&self) -> &[usize] {
        &self.free_y.items
    }

    /// `n_u`, the number of unmatched y points.
    pub fn n_unmatched_y(&self) -> usize {
        self.free_y.items.len()
    }

    pub fn n_unmatched_x(&self) -> usize {
        self.free_x.items.len()
    }

    /// Matched pairs sorted by x-index.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.match_of_x
            .iter()
            .enumerate()
            .filter_map(|(j, k)| k.map(|k| (j, k)))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.match_of_x
            .iter()
            .enumerate()
            .filter_map(|(j, k)| k.map(|k| (j, k)))
    }

    /// Adds `(j, k)`; both must currently be unmatched.
    pub fn add(&mut self, j: usize, k: usize) {
        assert!(
            self.match_of_x[j].is_none() && self.match_of_y[k].is_none(),
            "add would break injectivity"
        );
        self.match_of_x[j] = Some(k);
        self.match_of_y[k] = Some(j);
        self.free_x.remove(j);
        self.free_y.remove(k);
    }

    pub fn remove(&mut self, j: usize, k: usize) {
        assert_eq!(self.match_of_x[j], Some(k), "pair not matched");
        self.match_of_x[j] = None;
        self.match_of_y[k] = None;
        self.free_x.insert(j);
        self.free_y.insert(k);
    }

    /// Checks the internal bookkeeping and injectivity.
    pub fn is_consistent(&self) -> bool {
        let mut seen = vec![false; self.n()];
        for (j, k) in self.iter() {
            if k >= self.n() || seen[k] || self.match_of_y[k] != Some(j) {
                return false;
            }
            seen[k] = true;
        }
        let ys = self.match_of_y.iter().filter(|k| k.is_some()).count();
        ys == self.len()
            && self.free_x.items.len() + self.len() == self.m()
            && self.free_y.items.len() + self.len() == self.n()
    }
}

impl Serialize for MatchingMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.m(), self.n(), self.pairs()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatchingMatrix {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let (m, n, pairs): (usize, usize, Vec<(usize, usize)>) = Deserialize::deserialize(d)?;
        Self::from_pairs(m, n, &pairs).map_err(serde::de::Error::custom)
    }
}

/// Geometric and noise state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams<const D: usize> {
    pub a: Matrix<D>,
    pub tau: Point<D>,
    pub sigma: f64,
}

impl<const D: usize> PoseParams<D> {
    pub fn new(a: Matrix<D>, tau: Point<D>, sigma: f64) -> Self {
        Self { a, tau, sigma }
    }

    /// `x - A y - τ`.
    #[inline]
    pub fn residual(&self, x: &Point<D>, y: &Point<D>) -> Point<D> {
        x - self.a * y - self.tau
    }
}

/// Whether `A` is held fixed or sampled as a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformMode {
    Fixed,
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<const D: usize> {
    /// `ρ/λ`: weight of one match, in units of volume.
    pub kappa_match: f64,
    /// `ρ/(λv)`: only used when analysing the prior on the match count.
    pub prior_count_ratio: Option<f64>,
    /// Matrix Fisher concentration `F₀`; zero means a uniform prior.
    pub f0: Matrix<D>,
    pub mu_tau: Point<D>,
    pub sigma_tau: f64,
    /// Shape of the Gamma prior on `σ⁻²`.
    pub alpha: f64,
    /// Rate of the Gamma prior on `σ⁻²`.
    pub beta: f64,
    /// Log affinity for like-coloured matches.
    pub gamma: f64,
    /// Log affinity for unlike-coloured matches.
    pub delta: f64,
    /// Probability of proposing a deletion for a matched point.
    pub p_star: f64,
}

impl<const D: usize> Hyperparams<D> {
    pub fn new(kappa_match: f64) -> Self {
        Self {
            kappa_match,
            prior_count_ratio: None,
            f0: Matrix::<D>::zeros(),
            mu_tau: Point::<D>::zeros(),
            sigma_tau: 20.0,
            alpha: 1.0,
            beta: 16.0,
            gamma: 0.0,
            delta: 0.0,
            p_star: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidHyper(what.to_string()));
        if !(self.kappa_match > 0.0 && self.kappa_match.is_finite()) {
            return bad("kappa_match must be positive and finite");
        }
        if let Some(r) = self.prior_count_ratio {
            if !(r > 0.0) {
                return bad("prior_count_ratio must be positive");
            }
        }
        if !(self.sigma_tau > 0.0) {
            return bad("sigma_tau must be positive");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("alpha and beta must be positive");
        }
        if !(self.p_star > 0.0 && self.p_star < 1.0) {
            return bad("p_star must lie in (0, 1)");
        }
        if self.gamma.is_nan() || self.delta.is_nan() {
            return bad("gamma and delta must be numbers");
        }
        if self.f0.iter().any(|v| !v.is_finite()) || self.mu_tau.iter().any(|v| !v.is_finite()) {
            return bad("F0 and mu_tau must be finite");
        }
        Ok(())
    }

    /// Colour contribution to a pair's log weight.
    pub fn colour_term(&self, cx: Option<&str>, cy: Option<&str>) -> f64 {
        match (cx, cy) {
            (Some(a), Some(b)) if a == b => self.gamma,
            (Some(_), Some(_)) => self.delta,
            _ => 0.0,
        }
    }
}

impl Hyperparams<2> {
    /// Sets `F₀ = κ/2 · R(ν)`, so that `tr(F₀ᵀ A(θ)) = κ cos(θ - ν)`.
    pub fn with_von_mises_prior(mut self, prior: VonMisesParams) -> Self {
        self.f0 = rotation_matrix_2d(prior.nu) * (prior.kappa / 2.0);
        self
    }
}

/// The decision-theoretic cost ratio `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    k: f64,
}

impl LossSpec {
    pub fn new(k: f64) -> Result<Self, ModelError> {
        if k > 0.0 && k <= 1.0 {
            Ok(Self { k })
        } else {
            Err(ModelError::InvalidLoss(format!("K must lie in (0, 1], got {k}")))
        }
    }

    /// `K = (ℓ01 - ℓ00) / (ℓ10 + ℓ01 - ℓ11 - ℓ00)`.
    pub fn from_losses(losses: Losses) -> Result<Self, ModelError> {
        let scale = losses.scale()?;
        Self::new((losses.l01 - losses.l00) / scale)
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

/// Per-pair losses `ℓ_ab` for truth `a` and declaration `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub l00: f64,
    pub l01: f64,
    pub l10: f64,
    pub l11: f64,
}

impl Losses {
    pub fn new(l00: f64, l01: f64, l10: f64, l11: f64) -> Self {
        Self { l00, l01, l10, l11 }
    }

    /// `ℓ10 + ℓ01 - ℓ11 - ℓ00`, validated positive along with `ℓ01 - ℓ00`.
    pub fn scale(&self) -> Result<f64, ModelError> {
        let scale = self.l10 + self.l01 - self.l11 - self.l00;
        if !(scale > 0.0) {
            return Err(ModelError::InvalidLoss(
                "l10 + l01 - l11 - l00 must be positive".into(),
            ));
        }
        if !(self.l01 - self.l00 > 0.0) {
            return Err(ModelError::InvalidLoss("l01 - l00 must be positive".into()));
        }
        Ok(scale)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Prior pmf of the match count `L` given `m`, `n`:
/// `p(L) ∝ d^L / ((m-L)! (n-L)! L!)` with `d = ρ/(λv)`.
pub fn prior_match_count_pmf(m: usize, n: usize, d_ratio: f64) -> Vec<f64> {
    assert!(d_ratio > 0.0, "d_ratio must be positive");
    let ln_d = d_ratio.ln();
    let logs: Vec<f64> = (0..=m.min(n))
        .map(|l| {
            l as f64 * ln_d
                - ln_factorial((m - l) as u64)
                - ln_factorial((n - l) as u64)
                - ln_factorial(l as u64)
        })
        .collect();
    let norm = log_sum_exp(&logs);
    logs.iter().map(|v| (v - norm).exp()).collect()
}

/// `ρ/(λv)` placing the prior mode of `L` within one of `l_bar`.
pub fn elicit_d_ratio(m: usize, n: usize, l_bar: f64) -> Result<f64, ModelError> {
    let max = m.min(n);
    if !(l_bar > 0.0 && l_bar < max as f64) {
        return Err(ModelError::ElicitationOutOfRange { got: l_bar, max });
    }
    Ok(l_bar / ((m as f64 - l_bar) * (n as f64 - l_bar)))
}

/// Log of a single match's factor in the joint density, including colours.
pub fn pair_log_weight<const D: usize>(
    x: &Point<D>,
    y: &Point<D>,
    pose: &PoseParams<D>,
    hyper: &Hyperparams<D>,
    colour_x: Option<&str>,
    colour_y: Option<&str>,
) -> f64 {
    let z = pose.residual(x, y);
    geometric_log_weight(D, z.norm_squared(), pose.sigma, hyper.kappa_match)
        + hyper.colour_term(colour_x, colour_y)
}

/// `ln κ + ln φ_d(z/σ√2) - d ln(σ√2)` given `‖z‖²`.
#[inline]
pub(crate) fn geometric_log_weight(dim: usize, z_sq: f64, sigma: f64, kappa_match: f64) -> f64 {
    let s2 = 2.0 * sigma * sigma;
    kappa_match.ln() - 0.5 * dim as f64 * (2.0 * PI * s2).ln() - z_sq / (2.0 * s2)
}

/// `log p(τ)` for `τ ~ N_d(μ_τ, σ_τ² I)`.
pub fn log_prior_tau<const D: usize>(tau: &Point<D>, hyper: &Hyperparams<D>) -> f64 {
    let v = hyper.sigma_tau * hyper.sigma_tau;
    -0.5 * D as f64 * (2.0 * PI * v).ln() - (tau - hyper.mu_tau).norm_squared() / (2.0 * v)
}

/// Density of `σ` on `(0, ∞)` induced by `σ⁻² ~ Gamma(α, β)` (rate `β`),
/// including the Jacobian `|dσ⁻²/dσ| = 2σ⁻³`.
pub fn log_prior_sigma(sigma: f64, alpha: f64, beta: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let precision = 1.0 / (sigma * sigma);
    alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * precision.ln() - beta * precision
        + std::f64::consts::LN_2
        - 3.0 * sigma.ln()
}

/// `log p(A) = tr(F₀ᵀ A)` up to its normalising constant.
pub fn log_prior_rotation<const D: usize>(a: &Matrix<D>, hyper: &Hyperparams<D>) -> f64 {
    hyper.f0.dot(a)
}

/// Joint log density of `(M, A, τ, σ)` given the data, up to one additive
/// constant that depends only on the data sizes and hyperparameters.
///
/// In [`TransformMode::Fixed`] no `p(A)` term is included.
pub fn log_joint<const D: usize>(
    matching: &MatchingMatrix,
    pose: &PoseParams<D>,
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    mode: TransformMode,
) -> f64 {
    let mut total = y.len() as f64 * determinant(&pose.a).abs().ln()
        + log_prior_tau(&pose.tau, hyper)
        + log_prior_sigma(pose.sigma, hyper.alpha, hyper.beta);
    if mode == TransformMode::Rotation {
        total += log_prior_rotation(&pose.a, hyper);
    }
    for (j, k) in matching.iter() {
        total += pair_log_weight(
            &x.points[j],
            &y.points[k],
            pose,
            hyper,
            x.colour(j),
            y.colour(k),
        );
    }
    total
}

/// `log Σ_ℓ ℓ! C(m,ℓ) C(n,ℓ) d^ℓ`, the normaliser of the matching prior.
pub fn log_matching_normaliser(m: usize, n: usize, d_ratio: f64) -> f64 {
    let ln_d = d_ratio.ln();
    let terms: Vec<f64> = (0..=m.min(n))
        .map(|l| {
            ln_factorial(m as u64) - ln_factorial((m - l) as u64) + ln_factorial(n as u64)
                - ln_factorial((n - l) as u64)
                - ln_factorial(l as u64)
                + l as f64 * ln_d
        })
        .collect();
    log_sum_exp(&terms)
}

/// `log p(M) = L ln d - log Σ_ℓ ℓ! C(m,ℓ) C(n,ℓ) d^ℓ` with `d = ρ/(λv)`.
pub fn log_prior_matching(matching: &MatchingMatrix, d_ratio: f64) -> f64 {
    matching.len() as f64 * d_ratio.ln()
        - log_matching_normaliser(matching.m(), matching.n(), d_ratio)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    /// Every injective partial matching of `m` x-points to `n` y-points.
    pub(crate) fn all_matchings(m: usize, n: usize) -> Vec<MatchingMatrix> {
        fn rec(
            j: usize,
            m: usize,
            n: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            out: &mut Vec<Vec<(usize, usize)>>,
        ) {
            if j == m {
                out.push(cur.clone());
                return;
            }
            rec(j + 1, m, n, used, cur, out);
            for k in 0..n {
                if !used[k] {
                    used[k] = true;
                    cur.push((j, k));
                    rec(j + 1, m, n, used, cur, out);
                    cur.pop();
                    used[k] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(0, m, n, &mut vec![false; n], &mut Vec::new(), &mut out);
        out.into_iter()
            .map(|p| MatchingMatrix::from_pairs(m, n, &p).unwrap())
            .collect()
    }

    fn pose2(tau: (f64, f64), sigma: f64) -> PoseParams<2> {
        PoseParams::new(Matrix2::identity(), Vector2::new(tau.0, tau.1), sigma)
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(all_matchings(3, 3).len(), 34);
        assert_eq!(all_matchings(2, 1).len(), 3);
        assert_eq!(all_matchings(0, 4).len(), 1);
    }

    #[test]
    fn pmf_small_cases() {
        let p = prior_match_count_pmf(1, 1, 1.0);
        assert!((p[0] - 0.5).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
        let p = prior_match_count_pmf(2, 1, 1.0);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-14 && (p[1] - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(prior_match_count_pmf(0, 5, 2.0), vec![1.0]);
    }

    #[test]
    fn pmf_active_site_mode() {
        let d = elicit_d_ratio(40, 63, 35.0).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        let p = prior_match_count_pmf(40, 63, d);
        let mode = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!((mode as i64 - 35).abs() <= 1);
    }

    #[test]
    fn pmf_large_sizes_are_finite() {
        let p = prior_match_count_pmf(10_000, 9_000, 0.01);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn elicitation_examples_and_errors() {
        assert_eq!(elicit_d_ratio(2, 2, 1.0).unwrap(), 1.0);
        assert!(elicit_d_ratio(5, 3, 0.0).is_err());
        assert!(elicit_d_ratio(5, 3, 3.0).is_err());
    }

    #[test]
    fn elicitation_round_trip_exhaustive() {
        for m in 2..=80 {
            for n in 2..=80 {
                for l_bar in 1..m.min(n) {
                    let d = elicit_d_ratio(m, n, l_bar as f64).unwrap();
                    let p = prior_match_count_pmf(m, n, d);
                    let mode = p
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    assert!((mode as i64 - l_bar as i64).abs() <= 1, "{m} {n} {l_bar}");
                }
            }
        }
    }

    #[test]
    fn pair_weight_at_zero_residual() {
        let hyper = Hyperparams::<2>::new(1.0);
        let w = pair_log_weight(
            &Vector2::zeros(),
            &Vector2::zeros(),
            &pose2((0.0, 0.0), 1.0),
            &hyper,
            None,
            None,
        );
        assert!((w - (1.0 / (4.0 * PI)).ln()).abs() < 1e-12);
        assert!((w + 2.53102).abs() < 1e-5);
    }

    #[test]
    fn colour_terms() {
        let mut hyper = Hyperparams::<2>::new(1.0);
        let pose = pose2((0.3, -0.2), 1.4);
        let (a, b) = (Vector2::new(1.0, 2.0), Vector2::new(0.5, 1.0));
        let plain = pair_log_weight(&a, &b, &pose, &hyper, None, None);
        let neutral = pair_log_weight(&a, &b, &pose, &hyper, Some("polar"), Some("charged"));
        assert_eq!(plain, neutral);
        hyper.gamma = 1.0;
        hyper.delta = -0.5;
        let like = pair_log_weight(&a, &b, &pose, &hyper, Some("polar"), Some("polar"));
        let unlike = pair_log_weight(&a, &b, &pose, &hyper, Some("polar"), Some("charged"));
        assert!((like - unlike - 1.5).abs() < 1e-12);
        assert_eq!(pair_log_weight(&a, &b, &pose, &hyper, Some("polar"), None), plain);
    }

    #[test]
    fn log_joint_empty_matching_is_priors_only() {
        let x = Configuration::new(vec![Vector2::new(1.0, 0.0)]).unwrap();
        let y = Configuration::new(vec![Vector2::new(0.0, 1.0)]).unwrap();
        let hyper = Hyperparams::<2>::new(2.0);
        let pose = pose2((0.5, 0.5), 1.3);
        let lj = log_joint(
            &MatchingMatrix::empty(1, 1),
            &pose,
            &x,
            &y,
            &hyper,
            TransformMode::Fixed,
        );
        let expect = log_prior_tau(&pose.tau, &hyper) + log_prior_sigma(1.3, 1.0, 16.0);
        assert!((lj - expect).abs() < 1e-12);
    }

    #[test]
    fn sigma_prior_integrates_to_one() {
        // Trapezoid on a log-spaced grid.
        let (alpha, beta) = (2.0, 3.0);
        let grid: Vec<f64> = (0..40_000).map(|i| (-6.0 + i as f64 * 1e-3_f64 * 0.4).exp()).collect();
        let mut total = 0.0;
        for w in grid.windows(2) {
            let f0 = log_prior_sigma(w[0], alpha, beta).exp();
            let f1 = log_prior_sigma(w[1], alpha, beta).exp();
            total += 0.5 * (f0 + f1) * (w[1] - w[0]);
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn matching_prior_sums_to_one() {
        let all = all_matchings(3, 3);
        let s: f64 = all.iter().map(|m| log_prior_matching(m, 0.7).exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        let p: Vec<f64> = all_matchings(1, 1)
            .iter()
            .map(|m| log_prior_matching(m, 1.0).exp())
            .collect();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-14));
        assert!((log_prior_matching(&MatchingMatrix::empty(3, 3), 1e-12).exp() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn aggregation_identity() {
        for m in 0..=4 {
            for n in 0..=4 {
                for d in [0.1, 1.0, 10.0] {
                    let pmf = prior_match_count_pmf(m, n, d);
                    let mut agg = vec![0.0; m.min(n) + 1];
                    for mm in all_matchings(m, n) {
                        agg[mm.len()] += log_prior_matching(&mm, d).exp();
                    }
                    for (a, b) in agg.iter().zip(&pmf) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matching_rejects_duplicates() {
        assert!(MatchingMatrix::from_pairs(2, 2, &[(0, 1), (1, 1)]).is_err());
        assert!(MatchingMatrix::from_pairs(2, 2, &[(0, 1), (0, 0)]).is_err());
        assert!(MatchingMatrix::from_pairs(2, 2, &[(0, 2)]).is_err());
    }

    #[test]
    fn loss_spec_from_losses() {
        let k = LossSpec::from_losses(Losses::new(0.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(k.k(), 0.5);
        assert!(LossSpec::from_losses(Losses::new(0.0, -1.0, 1.0, 0.0)).is_err());
        assert!(LossSpec::new(0.0).is_err());
        assert!(LossSpec::new(1.0).is_ok());
    }

    #[test]
    fn configuration_checks() {
        assert!(Configuration::<2>::with_colours(vec![Vector2::zeros()], Some(vec![])).is_err());
        assert!(Configuration::<4>::new(vec![]).is_err());
    }

    fn random_instance() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<(f64, f64)>, Vec<usize>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
            (
                prop::collection::vec((-5.0..5.0, -5.0..5.0), m),
                prop::collection::vec((-5.0..5.0, -5.0..5.0), n),
                prop::collection::vec(0usize..3, m + n),
            )
        })
    }

    fn build(
        xs: &[(f64, f64)],
        ys: &[(f64, f64)],
        labels: &[usize],
        coloured: bool,
    ) -> (Configuration<2>, Configuration<2>) {
        let names = ["h", "c", "p"];
        let cx = coloured.then(|| labels[..xs.len()].iter().map(|&l| names[l].to_string()).collect());
        let cy = coloured.then(|| labels[xs.len()..].iter().map(|&l| names[l].to_string()).collect());
        (
            Configuration::with_colours(xs.iter().map(|p| Vector2::new(p.0, p.1)).collect(), cx).unwrap(),
            Configuration::with_colours(ys.iter().map(|p| Vector2::new(p.0, p.1)).collect(), cy).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn log_joint_is_additive_over_matches(
            (xs, ys, labels) in random_instance(),
            theta in -3.0f64..3.0,
            sigma in 0.3f64..3.0,
        ) {
            let (x, y) = build(&xs, &ys, &labels, true);
            let mut hyper = Hyperparams::<2>::new(5.0);
            hyper.gamma = 0.8;
            hyper.delta = -0.3;
            let pose = PoseParams::new(rotation_matrix_2d(theta), Vector2::new(0.2, -0.1), sigma);
            let mode = TransformMode::Rotation;
            let pairs: Vec<(usize, usize)> = (0..xs.len().min(ys.len())).map(|i| (i, ys.len() - 1 - i)).collect();
            let mut mm = MatchingMatrix::from_pairs(xs.len(), ys.len(), &pairs).unwrap();
            let start = log_joint(&mm, &pose, &x, &y, &hyper, mode);
            let mut running = start;
            for &(j, k) in &pairs {
                running -= pair_log_weight(&x.points[j], &y.points[k], &pose, &hyper, x.colour(j), y.colour(k));
                mm.remove(j, k);
                prop_assert!((running - log_joint(&mm, &pose, &x, &y, &hyper, mode)).abs() < 1e-9);
            }
            for &(j, k) in &pairs {
                running += pair_log_weight(&x.points[j], &y.points[k], &pose, &hyper, x.colour(j), y.colour(k));
                mm.add(j, k);
            }
            prop_assert!((running - start).abs() < 1e-9);
            prop_assert!((log_joint(&mm, &pose, &x, &y, &hyper, mode) - start).abs() < 1e-9);
        }

        #[test]
        fn neutral_colours_reduce_to_plain_model(
            (xs, ys, labels) in random_instance(),
            sigma in 0.3f64..3.0,
        ) {
            let (xc, yc) = build(&xs, &ys, &labels, true);
            let (xp, yp) = build(&xs, &ys, &labels, false);
            let hyper = Hyperparams::<2>::new(3.0);
            let pose = pose2((0.1, 0.4), sigma);
            let pairs: Vec<(usize, usize)> = (0..xs.len().min(ys.len())).map(|i| (i, i)).collect();
            let mm = MatchingMatrix::from_pairs(xs.len(), ys.len(), &pairs).unwrap();
            prop_assert_eq!(
                log_joint(&mm, &pose, &xc, &yc, &hyper, TransformMode::Fixed),
                log_joint(&mm, &pose, &xp, &yp, &hyper, TransformMode::Fixed)
            );
        }

        #[test]
        fn pmf_sums_to_one(m in 0usize..200, n in 0usize..200, d in 0.001f64..100.0) {
            let p = prior_match_count_pmf(m, n, d);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matching_bookkeeping_stays_consistent(ops in prop::collection::vec((0usize..6, 0usize..5), 0..60)) {
            let mut mm = MatchingMatrix::empty(6, 5);
            for (j, k) in ops {
                match (mm.match_of_x(j), mm.match_of_y(k)) {
                    (None, None) => mm.add(j, k),
                    (Some(k2), _) => mm.remove(j, k2),
                    (None, Some(j2)) => mm.remove(j2, k),
                }
                prop_assert!(mm.is_consistent());
                prop_assert_eq!(mm.n_unmatched_y(), 5 - mm.len());
            }
        }
    }
}
