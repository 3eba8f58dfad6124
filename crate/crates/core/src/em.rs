//! Approximate EM baseline.
//!
//! Dropping the one-to-one constraint makes every pair an independent
//! Bernoulli indicator with odds `w_jk`, the pair's factor in the joint
//! density. The E-step is then `p_jk = w_jk / (1 + w_jk)` and EM ascends the
//! relaxed log posterior
//!
//! ```text
//! Φ(A, τ, σ) = log[|A|ⁿ p(A) p(τ) p(σ)] + Σ_jk log(1 + w_jk(A, τ, σ)).
//! ```
//!
//! The M-step is block coordinate ascent; each block has a closed form
//! (normal mean for `τ`, a root of a scalar stationarity equation for `σ`,
//! and the orthogonal Procrustes solution for a rotation).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::determinant;
use crate::model::{
    log_prior_rotation, log_prior_sigma, log_prior_tau, pair_log_weight, Configuration,
    Hyperparams, Matrix, Point, PoseParams, TransformMode,
};

/// Objective improvements smaller than this end the iteration.
pub const EM_TOLERANCE: f64 = 1e-8;

const MAX_INNER_ITERATIONS: usize = 1000;

/// Soft responsibilities, row-major `m × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMatchTable {
    pub m: usize,
    pub n: usize,
    pub p: Vec<f64>,
}

impl SoftMatchTable {
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.p[j * self.n + k]
    }

    /// Pairs with responsibility above `threshold`.
    pub fn hard_pairs(&self, threshold: f64) -> Vec<(usize, usize)> {
        (0..self.m)
            .flat_map(|j| (0..self.n).map(move |k| (j, k)))
            .filter(|&(j, k)| self.get(j, k) > threshold)
            .collect()
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn log_weights<const D: usize>(
    pose: &PoseParams<D>,
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * y.len());
    for j in 0..x.len() {
        for k in 0..y.len() {
            out.push(pair_log_weight(
                &x.points[j],
                &y.points[k],
                pose,
                hyper,
                x.colour(j),
                y.colour(k),
            ));
        }
    }
    out
}

fn log_prior_terms<const D: usize>(
    pose: &PoseParams<D>,
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
    total
}

/// The relaxed log posterior `Φ` that EM ascends.
pub fn em_objective<const D: usize>(
    pose: &PoseParams<D>,
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    mode: TransformMode,
) -> f64 {
    log_prior_terms(pose, y, hyper, mode)
        + log_weights(pose, x, y, hyper).into_iter().map(softplus).sum::<f64>()
}

/// `p_jk = w_jk / (1 + w_jk)`.
pub fn em_e_step<const D: usize>(
    pose: &PoseParams<D>,
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
) -> SoftMatchTable {
    SoftMatchTable {
        m: x.len(),
        n: y.len(),
        p: log_weights(pose, x, y, hyper).into_iter().map(logistic).collect(),
    }
}

/// The expected complete-data log posterior maximised by the M-step.
pub fn em_m_objective<const D: usize>(
    table: &SoftMatchTable,
    pose: &PoseParams<D>,
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    mode: TransformMode,
) -> f64 {
    log_prior_terms(pose, y, hyper, mode)
        + log_weights(pose, x, y, hyper)
            .iter()
            .zip(&table.p)
            .map(|(lw, p)| p * lw)
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStepResult<const D: usize> {
    pub pose: PoseParams<D>,
    pub iterations: usize,
    /// False when the inner iteration cap was hit before convergence.
    pub converged: bool,
}

fn best_rotation<const D: usize>(f: &Matrix<D>) -> Matrix<D> {
    let svd = DMatrix::from_column_slice(D, D, f.as_slice()).svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut correction = DMatrix::<f64>::identity(D, D);
    if (&u * &v_t).determinant() < 0.0 {
        correction[(D - 1, D - 1)] = -1.0;
    }
    Matrix::<D>::from_column_slice((u * correction * v_t).as_slice())
}

/// Block coordinate ascent on the M-step objective for fixed responsibilities.
pub fn em_m_step<const D: usize>(
    table: &SoftMatchTable,
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    current: &PoseParams<D>,
    mode: TransformMode,
) -> MStepResult<D> {
    let mut pose = current.clone();
    let total_p: f64 = table.p.iter().sum();
    let d = D as f64;
    let mut value = em_m_objective(table, &pose, x, y, hyper, mode);
    for iteration in 1..=MAX_INNER_ITERATIONS {
        // τ: weighted normal mean.
        let two_s2 = 2.0 * pose.sigma * pose.sigma;
        let mut sum = Point::<D>::zeros();
        for j in 0..table.m {
            for k in 0..table.n {
                sum += (x.points[j] - pose.a * y.points[k]) * table.get(j, k);
            }
        }
        let prior_prec = 1.0 / (hyper.sigma_tau * hyper.sigma_tau);
        pose.tau = (hyper.mu_tau * prior_prec + sum / two_s2) / (prior_prec + total_p / two_s2);

        // σ: stationary point of -(2α + 1 + dP) ln σ - (β + R/4)/σ².
        let resid: f64 = (0..table.m)
            .flat_map(|j| (0..table.n).map(move |k| (j, k)))
            .map(|(j, k)| table.get(j, k) * pose.residual(&x.points[j], &y.points[k]).norm_squared())
            .sum();
        let sigma2 = 2.0 * (hyper.beta + resid / 4.0) / (2.0 * hyper.alpha + 1.0 + d * total_p);
        pose.sigma = sigma2.sqrt();

        if mode == TransformMode::Rotation {
            let scale = 1.0 / (2.0 * pose.sigma * pose.sigma);
            let mut f = hyper.f0;
            for j in 0..table.m {
                for k in 0..table.n {
                    f += (x.points[j] - pose.tau) * y.points[k].transpose() * (table.get(j, k) * scale);
                }
            }
            pose.a = best_rotation(&f);
        }

        let next = em_m_objective(table, &pose, x, y, hyper, mode);
        let gain = next - value;
        value = next;
        if gain < EM_TOLERANCE {
            return MStepResult {
                pose,
                iterations: iteration,
                converged: true,
            };
        }
    }
    MStepResult {
        pose,
        iterations: MAX_INNER_ITERATIONS,
        converged: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult<const D: usize> {
    pub pose: PoseParams<D>,
    pub table: SoftMatchTable,
    /// `Φ` at the initial pose and after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates E and M steps until `Φ` improves by less than [`EM_TOLERANCE`]
/// or `max_iters` iterations have run.
pub fn run_em<const D: usize>(
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    init: &PoseParams<D>,
    mode: TransformMode,
    max_iters: usize,
) -> EmResult<D> {
    let mut pose = init.clone();
    let mut objective = vec![em_objective(&pose, x, y, hyper, mode)];
    let mut converged = false;
    let mut iterations = 0;
    let mut inner_ok = true;
    while iterations < max_iters {
        let table = em_e_step(&pose, x, y, hyper);
        let step = em_m_step(&table, x, y, hyper, &pose, mode);
        inner_ok &= step.converged;
        pose = step.pose;
        iterations += 1;
        let value = em_objective(&pose, x, y, hyper, mode);
        let gain = value - objective.last().copied().unwrap_or(f64::NEG_INFINITY);
        objective.push(value);
        if gain < EM_TOLERANCE {
            converged = inner_ok;
            break;
        }
    }
    EmResult {
        table: em_e_step(&pose, x, y, hyper),
        pose,
        objective,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_matrix_2d, sample_uniform_rotation_3d};
    use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn e_step_edge_values() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) < 1e-300);
        let mut last = 0.0;
        for i in -50..50 {
            let p = logistic(i as f64 * 0.3);
            assert!(p > last);
            last = p;
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
    }

    #[test]
    fn unit_weight_gives_half() {
        // Pick κ so that the single pair's weight is exactly one.
        let x = Configuration::new(vec![Vector2::new(0.0, 0.0)]).unwrap();
        let y = Configuration::new(vec![Vector2::new(0.0, 0.0)]).unwrap();
        let pose = PoseParams::new(Matrix2::identity(), Vector2::zeros(), 1.0);
        let hyper = Hyperparams::<2>::new(4.0 * std::f64::consts::PI);
        let t = em_e_step(&pose, &x, &y, &hyper);
        assert!((t.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_pair_translation_optimum() {
        let x = Configuration::new(vec![Vector2::new(3.0, -1.0)]).unwrap();
        let y = Configuration::new(vec![Vector2::new(1.0, 1.0)]).unwrap();
        let mut hyper = Hyperparams::<2>::new(1.0);
        hyper.sigma_tau = 1e9;
        let table = SoftMatchTable { m: 1, n: 1, p: vec![1.0] };
        let pose = PoseParams::new(Matrix2::identity(), Vector2::zeros(), 1.0);
        let step = em_m_step(&table, &x, &y, &hyper, &pose, TransformMode::Fixed);
        assert!((step.pose.tau - Vector2::new(2.0, -2.0)).norm() < 1e-8);
    }

    #[test]
    fn procrustes_block_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = sample_uniform_rotation_3d(&mut rng).matrix();
        let ys: Vec<Vector3<f64>> = (0..10)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)))
            .collect();
        let f: Matrix3<f64> = ys.iter().map(|y| (r * y) * y.transpose()).sum();
        assert!((best_rotation(&f) - r).abs().max() < 1e-10);
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Configuration<2>, Configuration<2>, PoseParams<2>) {
        let theta = rng.random_range(-3.0..3.0);
        let a = rotation_matrix_2d(theta);
        let tau = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let ys: Vec<Vector2<f64>> = (0..8)
            .map(|_| Vector2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let xs: Vec<Vector2<f64>> = ys
            .iter()
            .take(6)
            .map(|y| a * y + tau + Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect();
        let start = PoseParams::new(
            rotation_matrix_2d(theta + rng.random_range(-0.3..0.3)),
            tau + Vector2::new(1.0, -1.0),
            2.0,
        );
        (Configuration::new(xs).unwrap(), Configuration::new(ys).unwrap(), start)
    }

    #[test]
    fn objective_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (x, y, init) = random_instance(&mut rng);
            let hyper = Hyperparams::<2>::new(50.0);
            let res = run_em(&x, &y, &hyper, &init, TransformMode::Rotation, 200);
            for w in res.objective.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn zero_iterations_returns_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y, init) = random_instance(&mut rng);
        let res = run_em(&x, &y, &Hyperparams::<2>::new(5.0), &init, TransformMode::Rotation, 0);
        assert_eq!(res.pose, init);
        assert_eq!(res.objective.len(), 1);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (x, y, init) = random_instance(&mut rng);
        let hyper = Hyperparams::<2>::new(50.0);
        let res = run_em(&x, &y, &hyper, &init, TransformMode::Rotation, 500);
        let again = run_em(&x, &y, &hyper, &res.pose, TransformMode::Rotation, 1);
        assert!((again.objective[1] - again.objective[0]).abs() < 1e-6);
    }
}
