//! MCMC over matchings, translation, noise scale and rotation.
//!
//! A sweep makes several Metropolis–Hastings moves on the matching, then
//! Gibbs draws for `τ` and `σ`, then (when enabled) a rotation update: an
//! exact von Mises draw in the plane, or in space a von Mises Gibbs step on
//! `θ12`, a random-walk Metropolis step on `θ13` and a von Mises Gibbs step on
//! `θ23`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
use thiserror::Error;

use crate::geometry::{
    determinant, euler_angles_from_matrix, euler_conditional_coeffs, orthogonality_residual,
    rotation_matrix_2d, rotation_matrix_3d, sample_uniform_angle, sample_uniform_rotation_3d,
    EulerAngles3, EulerAxis, VonMisesParams,
};
use crate::model::{
    geometric_log_weight, log_joint, Configuration, Hyperparams, MatchingMatrix, Matrix,
    ModelError, Point, PoseParams, TransformMode,
};

/// Cached log joint must agree with a fresh evaluation to this tolerance.
pub const CACHE_TOLERANCE: f64 = 1e-6;

/// Sweeps between cache consistency checks.
pub const CACHE_CHECK_INTERVAL: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("initial transform is not a rotation (orthogonality residual {0:e})")]
    NotARotation(f64),
    #[error("cached log joint drifted by {0:e}")]
    CacheDrift(f64),
}

/// Parameterisation of the linear part of the transformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RotationState {
    Fixed,
    Planar(f64),
    Euler(EulerAngles3),
}

impl RotationState {
    pub fn mode(&self) -> TransformMode {
        match self {
            RotationState::Fixed => TransformMode::Fixed,
            _ => TransformMode::Rotation,
        }
    }

    /// Angles in reporting order: `θ` in the plane, `(θ12, θ13, θ23)` in space.
    pub fn angles(&self) -> Vec<f64> {
        match self {
            RotationState::Fixed => Vec::new(),
            RotationState::Planar(t) => vec![*t],
            RotationState::Euler(e) => vec![e.theta12, e.theta13, e.theta23],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState<const D: usize> {
    pub matching: MatchingMatrix,
    pub pose: PoseParams<D>,
    pub rotation: RotationState,
    pub log_joint: f64,
}

impl<const D: usize> ChainState<D> {
    /// `n_u`.
    pub fn n_unmatched_y(&self) -> usize {
        self.matching.n_unmatched_y()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub m_updates_per_sweep: usize,
    pub sample_rotation: bool,
    /// Total sweeps, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl SweepSchedule {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.m_updates_per_sweep == 0 {
            return Err(SamplerError::InvalidSchedule(
                "m_updates_per_sweep must be at least 1".into(),
            ));
        }
        if self.thin == 0 {
            return Err(SamplerError::InvalidSchedule("thin must be at least 1".into()));
        }
        if self.burn_in > self.sweeps {
            return Err(SamplerError::InvalidSchedule(
                "burn_in cannot exceed sweeps".into(),
            ));
        }
        Ok(())
    }
}

/// Proposal and acceptance counts for one move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCount {
    pub proposed: u64,
    pub accepted: u64,
}

impl MoveCount {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub add: MoveCount,
    pub delete: MoveCount,
    pub switch: MoveCount,
    pub theta13: MoveCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Add,
    Delete,
    Switch,
}

/// Result of one matching move. `null` marks a proposal that could not be
/// made because no unmatched partner existed; it counts as rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
    pub null: bool,
}

impl AcceptanceStats {
    pub fn record(&mut self, outcome: MoveOutcome) {
        match outcome.kind {
            MoveKind::Add => self.add.record(outcome.accepted),
            MoveKind::Delete => self.delete.record(outcome.accepted),
            MoveKind::Switch => self.switch.record(outcome.accepted),
        }
    }
}

/// One random-walk Metropolis step for `θ13`, whose conditional density is
/// `∝ exp(a cos θ + b sin θ) cos θ` on `(-π/2, π/2)`.
pub fn theta13_metropolis_step<R: Rng + ?Sized>(
    theta: f64,
    a: f64,
    b: f64,
    half_width: f64,
    rng: &mut R,
) -> (f64, bool) {
    let proposal = theta + rng.random_range(-half_width..=half_width);
    if proposal.abs() >= FRAC_PI_2 {
        return (theta, false);
    }
    let log_target = |t: f64| a * t.cos() + b * t.sin() + t.cos().ln();
    let log_ratio = log_target(proposal) - log_target(theta);
    if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
        (proposal, true)
    } else {
        (theta, false)
    }
}

fn embed<const D: usize, const E: usize>(m: &nalgebra::SMatrix<f64, E, E>) -> Matrix<D> {
    assert_eq!(D, E);
    Matrix::<D>::from_fn(|i, j| m[(i, j)])
}

fn as_matrix3<const D: usize>(m: &Matrix<D>) -> Matrix3<f64> {
    assert_eq!(D, 3);
    Matrix3::from_fn(|i, j| m[(i, j)])
}

fn as_matrix2<const D: usize>(m: &Matrix<D>) -> Matrix2<f64> {
    assert_eq!(D, 2);
    Matrix2::from_fn(|i, j| m[(i, j)])
}

/// Holds the data, hyperparameters and precomputed colour affinities for one
/// alignment problem, and implements every update of the chain.
#[derive(Debug, Clone)]
pub struct Sampler<'a, const D: usize> {
    pub x: &'a Configuration<D>,
    pub y: &'a Configuration<D>,
    pub hyper: &'a Hyperparams<D>,
    colour: Option<Vec<f64>>,
    /// Half-width of the uniform `θ13` random-walk perturbation.
    pub theta13_half_width: f64,
}

impl<'a, const D: usize> Sampler<'a, D> {
    pub fn new(
        x: &'a Configuration<D>,
        y: &'a Configuration<D>,
        hyper: &'a Hyperparams<D>,
    ) -> Result<Self, SamplerError> {
        if D != 2 && D != 3 {
            return Err(ModelError::UnsupportedDimension(D).into());
        }
        hyper.validate()?;
        let n = y.len();
        let colour = (x.colours.is_some() || y.colours.is_some()).then(|| {
            let mut table = vec![0.0; x.len() * n];
            for j in 0..x.len() {
                for k in 0..n {
                    table[j * n + k] = hyper.colour_term(x.colour(j), y.colour(k));
                }
            }
            table
        });
        Ok(Self {
            x,
            y,
            hyper,
            colour,
            theta13_half_width: 0.1,
        })
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Log factor contributed by matching `x_j` with `y_k` under `pose`.
    #[inline]
    pub fn pair_weight(&self, j: usize, k: usize, pose: &PoseParams<D>) -> f64 {
        let z = pose.residual(&self.x.points[j], &self.y.points[k]);
        let colour = self.colour.as_ref().map_or(0.0, |c| c[j * self.n() + k]);
        geometric_log_weight(D, z.norm_squared(), pose.sigma, self.hyper.kappa_match) + colour
    }

    pub fn log_joint(&self, state: &ChainState<D>) -> f64 {
        log_joint(
            &state.matching,
            &state.pose,
            self.x,
            self.y,
            self.hyper,
            state.rotation.mode(),
        )
    }

    fn refresh(&self, state: &mut ChainState<D>) {
        state.log_joint = self.log_joint(state);
    }

    /// Default starting point: empty matching, the given or a Haar-uniform
    /// rotation, `τ` aligning the centroids and `σ` at its prior median.
    pub fn initial_state<R: Rng + ?Sized>(
        &self,
        transform: Option<Matrix<D>>,
        sample_rotation: bool,
        rng: &mut R,
    ) -> Result<ChainState<D>, SamplerError> {
        let (a, rotation) = match (transform, sample_rotation) {
            (Some(a), false) => (a, RotationState::Fixed),
            (None, false) => (Matrix::<D>::identity(), RotationState::Fixed),
            (Some(a), true) => (a, self.rotation_from_matrix(&a)?),
            (None, true) => {
                if D == 2 {
                    let t = sample_uniform_angle(rng);
                    (embed::<D, 2>(&rotation_matrix_2d(t)), RotationState::Planar(t))
                } else {
                    let e = sample_uniform_rotation_3d(rng);
                    (embed::<D, 3>(&rotation_matrix_3d(&e)), RotationState::Euler(e))
                }
            }
        };
        let tau = self.x.centroid() - a * self.y.centroid();
        let median_precision = GammaDist::new(self.hyper.alpha, self.hyper.beta)
            .expect("validated gamma parameters")
            .inverse_cdf(0.5);
        let pose = PoseParams::new(a, tau, median_precision.powf(-0.5));
        let mut state = ChainState {
            matching: MatchingMatrix::empty(self.m(), self.n()),
            pose,
            rotation,
            log_joint: 0.0,
        };
        self.refresh(&mut state);
        Ok(state)
    }

    fn rotation_from_matrix(&self, a: &Matrix<D>) -> Result<RotationState, SamplerError> {
        let resid = orthogonality_residual(a);
        if resid > 1e-8 || determinant(a) < 0.0 {
            return Err(SamplerError::NotARotation(resid));
        }
        Ok(if D == 2 {
            RotationState::Planar(a[(1, 0)].atan2(a[(0, 0)]))
        } else {
            RotationState::Euler(euler_angles_from_matrix(&as_matrix3(a)))
        })
    }

    /// Reconciles a user-supplied state with the schedule's rotation flag.
    pub fn prepare_state(
        &self,
        mut state: ChainState<D>,
        sample_rotation: bool,
    ) -> Result<ChainState<D>, SamplerError> {
        if state.matching.m() != self.m() || state.matching.n() != self.n() {
            return Err(SamplerError::InvalidSchedule(
                "initial matching does not fit the configurations".into(),
            ));
        }
        match (sample_rotation, state.rotation) {
            (true, RotationState::Fixed) => {
                state.rotation = self.rotation_from_matrix(&state.pose.a)?;
            }
            (false, RotationState::Planar(_) | RotationState::Euler(_)) => {
                state.rotation = RotationState::Fixed;
            }
            _ => {}
        }
        self.refresh(&mut state);
        Ok(state)
    }

    /// Gibbs draw of `τ` from its normal full conditional.
    pub fn gibbs_update_tau<R: Rng + ?Sized>(&self, state: &mut ChainState<D>, rng: &mut R) {
        let hyper = self.hyper;
        let pose = &state.pose;
        let two_s2 = 2.0 * pose.sigma * pose.sigma;
        let mut sum = Point::<D>::zeros();
        for (j, k) in state.matching.iter() {
            sum += self.x.points[j] - pose.a * self.y.points[k];
        }
        let prior_prec = 1.0 / (hyper.sigma_tau * hyper.sigma_tau);
        let prec = prior_prec + state.matching.len() as f64 / two_s2;
        let mean = (hyper.mu_tau * prior_prec + sum / two_s2) / prec;
        let sd = prec.recip().sqrt();
        let noise = Point::<D>::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        state.pose.tau = mean + noise * sd;
        self.refresh(state);
    }

    /// Gibbs draw of `σ⁻² ~ Gamma(α + dL/2, β + ¼ Σ ‖x_j - A y_k - τ‖²)`.
    pub fn gibbs_update_sigma<R: Rng + ?Sized>(&self, state: &mut ChainState<D>, rng: &mut R) {
        let pose = &state.pose;
        let ss: f64 = state
            .matching
            .iter()
            .map(|(j, k)| pose.residual(&self.x.points[j], &self.y.points[k]).norm_squared())
            .sum();
        let shape = self.hyper.alpha + 0.5 * D as f64 * state.matching.len() as f64;
        let rate = self.hyper.beta + 0.25 * ss;
        let precision: f64 = Gamma::new(shape, 1.0 / rate)
            .expect("positive gamma parameters")
            .sample(rng);
        state.pose.sigma = precision.powf(-0.5);
        self.refresh(state);
    }

    /// Posterior matrix Fisher parameter `F₀ + (1/2σ²) Σ (x_j - τ) y_kᵀ`.
    pub fn rotation_concentration(&self, state: &ChainState<D>) -> Matrix<D> {
        let pose = &state.pose;
        let scale = 1.0 / (2.0 * pose.sigma * pose.sigma);
        let mut s = Matrix::<D>::zeros();
        for (j, k) in state.matching.iter() {
            s += (self.x.points[j] - pose.tau) * self.y.points[k].transpose();
        }
        self.hyper.f0 + s * scale
    }

    /// Exact Gibbs draw of the planar rotation angle.
    pub fn update_rotation_2d<R: Rng + ?Sized>(&self, state: &mut ChainState<D>, rng: &mut R) {
        assert_eq!(D, 2, "planar rotation update needs d = 2");
        let f = as_matrix2(&self.rotation_concentration(state));
        let vm = VonMisesParams::from_coefficients(f[(0, 0)] + f[(1, 1)], f[(1, 0)] - f[(0, 1)]);
        let theta = vm.sample(rng);
        state.rotation = RotationState::Planar(theta);
        state.pose.a = embed::<D, 2>(&rotation_matrix_2d(theta));
        self.refresh(state);
    }

    /// Euler-angle sweep for a spatial rotation. Returns whether the `θ13`
    /// proposal was accepted.
    pub fn update_rotation_3d<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState<D>,
        rng: &mut R,
    ) -> bool {
        assert_eq!(D, 3, "Euler-angle update needs d = 3");
        let f = as_matrix3(&self.rotation_concentration(state));
        let mut angles = match state.rotation {
            RotationState::Euler(e) => e,
            _ => euler_angles_from_matrix(&as_matrix3(&state.pose.a)),
        };

        let (a, b) = euler_conditional_coeffs(&f, &angles, EulerAxis::A12);
        angles.theta12 = VonMisesParams::from_coefficients(a, b).sample(rng);

        let (a, b) = euler_conditional_coeffs(&f, &angles, EulerAxis::A13);
        let (t13, accepted) =
            theta13_metropolis_step(angles.theta13, a, b, self.theta13_half_width, rng);
        angles.theta13 = t13;

        let (a, b) = euler_conditional_coeffs(&f, &angles, EulerAxis::A23);
        angles.theta23 = VonMisesParams::from_coefficients(a, b).sample(rng);

        state.rotation = RotationState::Euler(angles);
        state.pose.a = embed::<D, 3>(&rotation_matrix_3d(&angles));
        self.refresh(state);
        accepted
    }

    /// One Metropolis–Hastings move on the matching with pose held fixed.
    ///
    /// A point is chosen uniformly from all `m + n`. Unmatched: propose adding
    /// a match to a uniformly chosen unmatched point on the other side.
    /// Matched: with probability `p★` propose deleting the match, otherwise
    /// propose switching it to a uniformly chosen unmatched point.
    pub fn update_matching<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState<D>,
        rng: &mut R,
    ) -> MoveOutcome {
        let (m, n) = (self.m(), self.n());
        let p_star = self.hyper.p_star;
        if m + n == 0 {
            return MoveOutcome {
                kind: MoveKind::Add,
                accepted: false,
                null: true,
            };
        }
        let pick = rng.random_range(0..m + n);
        let from_x = pick < m;
        let idx = if from_x { pick } else { pick - m };
        let partner = if from_x {
            state.matching.match_of_x(idx)
        } else {
            state.matching.match_of_y(idx)
        };
        // Orient every move as (j, k) regardless of which side was picked.
        let orient = |i: usize, o: usize| if from_x { (i, o) } else { (o, i) };
        let free_other = |mm: &MatchingMatrix, i: usize| -> usize {
            if from_x {
                mm.unmatched_y()[i]
            } else {
                mm.unmatched_x()[i]
            }
        };
        let n_free = if from_x {
            state.matching.n_unmatched_y()
        } else {
            state.matching.n_unmatched_x()
        };

        let accept = |log_ratio: f64, rng: &mut R| {
            log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
        };

        match partner {
            None => {
                if n_free == 0 {
                    return MoveOutcome {
                        kind: MoveKind::Add,
                        accepted: false,
                        null: true,
                    };
                }
                let other = free_other(&state.matching, rng.random_range(0..n_free));
                let (j, k) = orient(idx, other);
                let w = self.pair_weight(j, k, &state.pose);
                let log_ratio = w + p_star.ln() + (n_free as f64).ln();
                let accepted = accept(log_ratio, rng);
                if accepted {
                    state.matching.add(j, k);
                    state.log_joint += w;
                }
                MoveOutcome {
                    kind: MoveKind::Add,
                    accepted,
                    null: false,
                }
            }
            Some(current) => {
                let (j, k) = orient(idx, current);
                if rng.random::<f64>() < p_star {
                    let w = self.pair_weight(j, k, &state.pose);
                    let log_ratio = -w - p_star.ln() - ((n_free + 1) as f64).ln();
                    let accepted = accept(log_ratio, rng);
                    if accepted {
                        state.matching.remove(j, k);
                        state.log_joint -= w;
                    }
                    MoveOutcome {
                        kind: MoveKind::Delete,
                        accepted,
                        null: false,
                    }
                } else {
                    if n_free == 0 {
                        return MoveOutcome {
                            kind: MoveKind::Switch,
                            accepted: false,
                            null: true,
                        };
                    }
                    let other = free_other(&state.matching, rng.random_range(0..n_free));
                    let (j2, k2) = orient(idx, other);
                    let w_old = self.pair_weight(j, k, &state.pose);
                    let w_new = self.pair_weight(j2, k2, &state.pose);
                    let accepted = accept(w_new - w_old, rng);
                    if accepted {
                        state.matching.remove(j, k);
                        state.matching.add(j2, k2);
                        state.log_joint += w_new - w_old;
                    }
                    MoveOutcome {
                        kind: MoveKind::Switch,
                        accepted,
                        null: false,
                    }
                }
            }
        }
    }

    /// One full sweep: matching moves, then `τ`, `σ` and the rotation.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState<D>,
        m_updates: usize,
        stats: &mut AcceptanceStats,
        rng: &mut R,
    ) {
        for _ in 0..m_updates {
            let outcome = self.update_matching(state, rng);
            stats.record(outcome);
        }
        self.gibbs_update_tau(state, rng);
        self.gibbs_update_sigma(state, rng);
        match state.rotation {
            RotationState::Fixed => {}
            RotationState::Planar(_) => self.update_rotation_2d(state, rng),
            RotationState::Euler(_) => {
                let accepted = self.update_rotation_3d(state, rng);
                stats.theta13.record(accepted);
            }
        }
    }
}

/// One retained state of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample<const D: usize> {
    pub sweep: usize,
    pub pairs: Vec<(usize, usize)>,
    pub tau: Point<D>,
    pub sigma: f64,
    pub a: Matrix<D>,
    pub angles: Vec<f64>,
    pub log_joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace<const D: usize> {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub mode: TransformMode,
    pub samples: Vec<ChainSample<D>>,
    /// Cumulative over every sweep of the run, burn-in included.
    pub stats: AcceptanceStats,
}

impl<const D: usize> Trace<D> {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// A running chain: state, random source and counters.
#[derive(Debug, Clone)]
pub struct Chain<'a, const D: usize> {
    pub sampler: Sampler<'a, D>,
    pub state: ChainState<D>,
    pub rng: ChaCha8Rng,
    pub stats: AcceptanceStats,
    pub m_updates_per_sweep: usize,
    sweeps_done: usize,
    seed: u64,
}

impl<'a, const D: usize> Chain<'a, D> {
    pub fn new(
        sampler: Sampler<'a, D>,
        schedule: &SweepSchedule,
        init: Option<ChainState<D>>,
    ) -> Result<Self, SamplerError> {
        schedule.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        let state = match init {
            Some(s) => sampler.prepare_state(s, schedule.sample_rotation)?,
            None => sampler.initial_state(None, schedule.sample_rotation, &mut rng)?,
        };
        Ok(Self {
            sampler,
            state,
            rng,
            stats: AcceptanceStats::default(),
            m_updates_per_sweep: schedule.m_updates_per_sweep,
            sweeps_done: 0,
            seed: schedule.seed,
        })
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    fn snapshot(&self) -> ChainSample<D> {
        ChainSample {
            sweep: self.sweeps_done,
            pairs: self.state.matching.pairs(),
            tau: self.state.pose.tau,
            sigma: self.state.pose.sigma,
            a: self.state.pose.a,
            angles: self.state.rotation.angles(),
            log_joint: self.state.log_joint,
        }
    }

    /// Runs `sweeps` more sweeps, retaining every `thin`-th after `burn_in`.
    /// Retained sweep numbers count from the start of the chain.
    pub fn advance(
        &mut self,
        sweeps: usize,
        burn_in: usize,
        thin: usize,
    ) -> Result<Trace<D>, SamplerError> {
        if thin == 0 || burn_in > sweeps {
            return Err(SamplerError::InvalidSchedule(
                "thin must be positive and burn_in at most sweeps".into(),
            ));
        }
        let mut samples = Vec::with_capacity((sweeps - burn_in) / thin + 1);
        for s in 0..sweeps {
            self.sampler.sweep(
                &mut self.state,
                self.m_updates_per_sweep,
                &mut self.stats,
                &mut self.rng,
            );
            self.sweeps_done += 1;
            if self.sweeps_done % CACHE_CHECK_INTERVAL == 0 {
                self.check_cache()?;
            }
            debug_assert!(self.state.matching.is_consistent());
            if s >= burn_in && (s - burn_in) % thin == thin - 1 {
                samples.push(self.snapshot());
            }
        }
        Ok(Trace {
            m: self.sampler.m(),
            n: self.sampler.n(),
            seed: self.seed,
            mode: self.state.rotation.mode(),
            samples,
            stats: self.stats,
        })
    }

    pub fn check_cache(&mut self) -> Result<(), SamplerError> {
        let fresh = self.sampler.log_joint(&self.state);
        let drift = (fresh - self.state.log_joint).abs();
        if drift > CACHE_TOLERANCE {
            return Err(SamplerError::CacheDrift(drift));
        }
        self.state.log_joint = fresh;
        Ok(())
    }
}

/// Runs one chain according to `schedule`.
pub fn run_chain<const D: usize>(
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    schedule: &SweepSchedule,
    init: Option<ChainState<D>>,
) -> Result<Trace<D>, SamplerError> {
    let sampler = Sampler::new(x, y, hyper)?;
    let mut chain = Chain::new(sampler, schedule, init)?;
    chain.advance(schedule.sweeps, schedule.burn_in, schedule.thin)
}
