//! Forward simulation from the generative model.
//!
//! Hidden points are a homogeneous Poisson process on a union of
//! axis-aligned boxes.
//! Each one independently yields neither, an `x` point, a `y` point, or both,
//! with probabilities `(1 - p_x - p_y - ρ p_x p_y, p_x, p_y, ρ p_x p_y)`.
//! Observations carry independent `N(0, σ² I)` noise and `y` is expressed in
//! its own frame, `A y + τ = μ + ε`. Noise is never clipped to the box.

use nalgebra::SVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Configuration, MatchingMatrix, ModelError, Point, PoseParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("category probabilities infeasible: {0}")]
    Infeasible(String),
    #[error("invalid region: {0}")]
    Region(String),
    #[error("invalid colour model: {0}")]
    Colour(String),
    #[error("transformation A is singular")]
    SingularTransform,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion<const D: usize> {
    pub lower: Point<D>,
    pub upper: Point<D>,
}

impl<const D: usize> BoxRegion<D> {
    pub fn new(lower: Point<D>, upper: Point<D>) -> Result<Self, SyntheticError> {
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(u > l)) {
            return Err(SyntheticError::Region("upper must exceed lower on every axis".into()));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[-side/2, side/2]^d`.
    pub fn centred_cube(side: f64) -> Result<Self, SyntheticError> {
        let h = Point::<D>::repeat(side / 2.0);
        Self::new(-h, h)
    }

    pub fn volume(&self) -> f64 {
        (self.upper - self.lower).iter().product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point<D> {
        Point::<D>::from_fn(|i, _| rng.random_range(self.lower[i]..self.upper[i]))
    }

    fn overlaps(&self, other: &Self) -> bool {
        (0..D).all(|i| self.lower[i] < other.upper[i] && other.lower[i] < self.upper[i])
    }
}

/// A union of axis-aligned boxes with disjoint interiors.
///
/// A single box is symmetric under several rotations, and those symmetries
/// show up as spurious posterior modes when the rotation is unknown; an
/// irregular union avoids them while keeping the uniform draw exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region<const D: usize> {
    parts: Vec<BoxRegion<D>>,
}

impl<const D: usize> Region<D> {
    pub fn union(parts: Vec<BoxRegion<D>>) -> Result<Self, SyntheticError> {
        if parts.is_empty() {
            return Err(SyntheticError::Region("region needs at least one box".into()));
        }
        for i in 0..parts.len() {
            for j in 0..i {
                if parts[i].overlaps(&parts[j]) {
                    return Err(SyntheticError::Region(format!("boxes {j} and {i} overlap")));
                }
            }
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[BoxRegion<D>] {
        &self.parts
    }

    pub fn volume(&self) -> f64 {
        self.parts.iter().map(BoxRegion::volume).sum()
    }

    pub fn contains(&self, p: &Point<D>) -> bool {
        self.parts
            .iter()
            .any(|b| (0..D).all(|i| p[i] >= b.lower[i] && p[i] <= b.upper[i]))
    }

    /// Uniform draw: a box chosen with probability proportional to its
    /// volume, then a uniform point inside it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point<D> {
        if self.parts.len() == 1 {
            return self.parts[0].sample(rng);
        }
        let mut u = rng.random_range(0.0..self.volume());
        for b in &self.parts {
            u -= b.volume();
            if u < 0.0 {
                return b.sample(rng);
            }
        }
        self.parts[self.parts.len() - 1].sample(rng)
    }
}

impl<const D: usize> From<BoxRegion<D>> for Region<D> {
    fn from(b: BoxRegion<D>) -> Self {
        Self { parts: vec![b] }
    }
}

/// Colour labels. Unmatched points draw from `pi_x` or `pi_y`; a matched
/// pair draws `(r, s)` with probability proportional to
/// `π_x(r) π_y(s) exp(γ I[r = s] + δ I[r ≠ s])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColourModel {
    pub labels: Vec<String>,
    pub pi_x: Vec<f64>,
    pub pi_y: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
}

impl ColourModel {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let r = self.labels.len();
        if r == 0 || self.pi_x.len() != r || self.pi_y.len() != r {
            return Err(SyntheticError::Colour(
                "need one probability per label on each side".into(),
            ));
        }
        for pi in [&self.pi_x, &self.pi_y] {
            if pi.iter().any(|p| !(*p >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SyntheticError::Colour(
                    "label probabilities must be non-negative and sum to 1".into(),
                ));
            }
        }
        if !(self.gamma.is_finite() && self.delta.is_finite()) {
            return Err(SyntheticError::Colour("gamma and delta must be finite".into()));
        }
        Ok(())
    }

    /// Normalised joint label distribution of a matched pair, row-major.
    pub fn pair_joint(&self) -> Vec<f64> {
        let r = self.labels.len();
        let mut w = Vec::with_capacity(r * r);
        for a in 0..r {
            for b in 0..r {
                let tilt = if a == b { self.gamma } else { self.delta };
                w.push(self.pi_x[a] * self.pi_y[b] * tilt.exp());
            }
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec<const D: usize> {
    /// Hidden points per unit volume.
    pub lambda_rate: f64,
    pub region: Region<D>,
    pub p_x: f64,
    pub p_y: f64,
    pub rho: f64,
    pub pose: PoseParams<D>,
    pub colours: Option<ColourModel>,
    /// Minimum spacing between hidden points, applied by [`hardcore_thin`].
    pub min_spacing: Option<f64>,
}

impl<const D: usize> GenerativeSpec<D> {
    /// Probabilities of neither, x only, y only, both.
    pub fn category_probabilities(&self) -> [f64; 4] {
        let both = self.rho * self.p_x * self.p_y;
        [1.0 - self.p_x - self.p_y - both, self.p_x, self.p_y, both]
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if !(self.lambda_rate > 0.0 && self.lambda_rate.is_finite()) {
            return Err(SyntheticError::Infeasible("lambda must be positive".into()));
        }
        if !(self.p_x >= 0.0 && self.p_x < 1.0 && self.p_y >= 0.0 && self.p_y < 1.0) {
            return Err(SyntheticError::Infeasible("p_x and p_y must lie in [0, 1)".into()));
        }
        if !(self.rho > 0.0) {
            return Err(SyntheticError::Infeasible("rho must be positive".into()));
        }
        if self.category_probabilities().iter().any(|p| *p < 0.0) {
            return Err(SyntheticError::Infeasible(
                "1 - p_x - p_y - rho p_x p_y is negative".into(),
            ));
        }
        if !(self.pose.sigma > 0.0) {
            return Err(SyntheticError::Infeasible("sigma must be positive".into()));
        }
        if let Some(s) = self.min_spacing {
            if !(s >= 0.0) {
                return Err(SyntheticError::Infeasible("min_spacing must be non-negative".into()));
            }
        }
        if let Some(c) = &self.colours {
            c.validate()?;
        }
        Ok(())
    }

    /// `ρ/λ`, the match weight the model should use for this spec.
    pub fn kappa_match(&self) -> f64 {
        self.rho / self.lambda_rate
    }

    /// `ρ/(λv)`, the match-count prior ratio.
    pub fn prior_count_ratio(&self) -> f64 {
        self.rho / (self.lambda_rate * self.region.volume())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Neither,
    XOnly,
    YOnly,
    Both,
}

/// A hidden point and where (if anywhere) it appears after shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenPoint<const D: usize> {
    pub mu: Point<D>,
    pub category: Category,
    pub x_index: Option<usize>,
    pub y_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstance<const D: usize> {
    pub x: Configuration<D>,
    pub y: Configuration<D>,
    pub truth: MatchingMatrix,
    pub hidden: Vec<HiddenPoint<D>>,
}

fn gaussian<const D: usize, R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Point<D> {
    SVector::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Draws one instance from `spec`.
pub fn generate<const D: usize, R: Rng + ?Sized>(
    spec: &GenerativeSpec<D>,
    rng: &mut R,
) -> Result<SyntheticInstance<D>, SyntheticError> {
    spec.validate()?;
    let a_inv = spec.pose.a.try_inverse().ok_or(SyntheticError::SingularTransform)?;
    let mean = spec.lambda_rate * spec.region.volume();
    let count = Poisson::new(mean)
        .map_err(|e| SyntheticError::Infeasible(e.to_string()))?
        .sample(rng) as usize;
    let mut mus: Vec<Point<D>> = (0..count).map(|_| spec.region.sample(rng)).collect();
    if let Some(s) = spec.min_spacing {
        mus = hardcore_thin(&mus, s);
    }

    let probs = spec.category_probabilities();
    let categories = [Category::Neither, Category::XOnly, Category::YOnly, Category::Both];
    let category_dist =
        WeightedIndex::new(probs).map_err(|e| SyntheticError::Infeasible(e.to_string()))?;
    let colour_dists = match &spec.colours {
        Some(c) => Some((
            WeightedIndex::new(&c.pi_x).map_err(|e| SyntheticError::Colour(e.to_string()))?,
            WeightedIndex::new(&c.pi_y).map_err(|e| SyntheticError::Colour(e.to_string()))?,
            WeightedIndex::new(c.pair_joint()).map_err(|e| SyntheticError::Colour(e.to_string()))?,
        )),
        None => None,
    };

    struct Obs<const D: usize> {
        point: Point<D>,
        colour: Option<usize>,
        hidden: usize,
    }
    let mut xs: Vec<Obs<D>> = Vec::new();
    let mut ys: Vec<Obs<D>> = Vec::new();
    let mut hidden = Vec::with_capacity(mus.len());
    for (i, mu) in mus.into_iter().enumerate() {
        let category = categories[category_dist.sample(rng)];
        let (cx, cy) = match (&colour_dists, category) {
            (None, _) | (_, Category::Neither) => (None, None),
            (Some((dx, _, _)), Category::XOnly) => (Some(dx.sample(rng)), None),
            (Some((_, dy, _)), Category::YOnly) => (None, Some(dy.sample(rng))),
            (Some((_, _, joint)), Category::Both) => {
                let r = spec.colours.as_ref().map_or(1, |c| c.labels.len());
                let cell = joint.sample(rng);
                (Some(cell / r), Some(cell % r))
            }
        };
        if matches!(category, Category::XOnly | Category::Both) {
            xs.push(Obs {
                point: mu + gaussian::<D, R>(spec.pose.sigma, rng),
                colour: cx,
                hidden: i,
            });
        }
        if matches!(category, Category::YOnly | Category::Both) {
            let noisy = mu + gaussian::<D, R>(spec.pose.sigma, rng);
            ys.push(Obs {
                point: a_inv * (noisy - spec.pose.tau),
                colour: cy,
                hidden: i,
            });
        }
        hidden.push(HiddenPoint {
            mu,
            category,
            x_index: None,
            y_index: None,
        });
    }
    xs.shuffle(rng);
    ys.shuffle(rng);
    for (j, o) in xs.iter().enumerate() {
        hidden[o.hidden].x_index = Some(j);
    }
    for (k, o) in ys.iter().enumerate() {
        hidden[o.hidden].y_index = Some(k);
    }
    let pairs: Vec<(usize, usize)> = hidden
        .iter()
        .filter_map(|h| Some((h.x_index?, h.y_index?)))
        .collect();

    let build = |obs: &[Obs<D>]| -> Result<Configuration<D>, ModelError> {
        let colours = spec.colours.as_ref().map(|c| {
            obs.iter()
                .map(|o| c.labels[o.colour.expect("coloured spec labels every point")].clone())
                .collect()
        });
        Configuration::with_colours(obs.iter().map(|o| o.point).collect(), colours)
    };
    let x = build(&xs)?;
    let y = build(&ys)?;
    let truth = MatchingMatrix::from_pairs(x.len(), y.len(), &pairs)?;
    Ok(SyntheticInstance { x, y, truth, hidden })
}

/// Sequential inhibition: visits points in order and keeps each one that is
/// at least `min_spacing` from every point already kept.
pub fn hardcore_thin<const D: usize>(points: &[Point<D>], min_spacing: f64) -> Vec<Point<D>> {
    assert!(min_spacing >= 0.0, "min_spacing must be non-negative");
    if min_spacing == 0.0 {
        return points.to_vec();
    }
    let r2 = min_spacing * min_spacing;
    let mut kept: Vec<Point<D>> = Vec::new();
    for p in points {
        if kept.iter().all(|q| (p - q).norm_squared() >= r2) {
            kept.push(*p);
        }
    }
    kept
}
