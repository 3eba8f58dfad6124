mod common;

use std::collections::HashMap;
use std::f64::consts::PI;

use bayes_align::diagnostics::multistart;
use bayes_align::geometry::{
    polar_rotation_mean, rotation_matrix_3d, sample_uniform_rotation_3d, sample_von_mises,
    EulerAngles3, VonMisesParams,
};
use bayes_align::model::log_joint;
use bayes_align::sampler::{AcceptanceStats, RotationState};
use bayes_align::{
    run_chain, Chain, ChainState, Configuration, Hyperparams, MatchingMatrix, PoseParams, Sampler,
    SweepSchedule, TransformMode,
};
use common::{all_matchings, key, ks_distance, log_sum_exp, GridCdf};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_instance() -> (Configuration<2>, Configuration<2>, Hyperparams<2>) {
    let x = Configuration::new(vec![
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.2),
        Vector2::new(0.1, 1.4),
    ])
    .unwrap();
    let y = Configuration::new(vec![
        Vector2::new(0.1, -0.1),
        Vector2::new(0.9, 0.5),
        Vector2::new(2.0, 2.0),
    ])
    .unwrap();
    (x, y, Hyperparams::new(3.0))
}

fn fixed_state(sampler: &Sampler<'_, 2>, pairs: &[(usize, usize)]) -> ChainState<2> {
    let matching = MatchingMatrix::from_pairs(sampler.m(), sampler.n(), pairs).unwrap();
    let state = ChainState {
        matching,
        pose: PoseParams::new(Matrix2::identity(), Vector2::zeros(), 0.5),
        rotation: RotationState::Fixed,
        log_joint: 0.0,
    };
    sampler.prepare_state(state, false).unwrap()
}

/// Transition probabilities of one matching move, written out from the move
/// definitions with the pose held fixed.
fn exact_kernel(
    from: &MatchingMatrix,
    w: &dyn Fn(usize, usize) -> f64,
    p_star: f64,
) -> HashMap<Vec<(usize, usize)>, f64> {
    let (m, n) = (from.m(), from.n());
    let pick = 1.0 / (m + n) as f64;
    let mut out: HashMap<Vec<(usize, usize)>, f64> = HashMap::new();
    let mut add = |to: MatchingMatrix, p: f64| *out.entry(key(&to)).or_default() += p;
    for side in 0..2 {
        let count = if side == 0 { m } else { n };
        for i in 0..count {
            let (partner, free): (Option<usize>, Vec<usize>) = if side == 0 {
                (from.match_of_x(i), from.unmatched_y().to_vec())
            } else {
                (from.match_of_y(i), from.unmatched_x().to_vec())
            };
            let pair = |i: usize, o: usize| if side == 0 { (i, o) } else { (o, i) };
            let nf = free.len() as f64;
            match partner {
                None => {
                    if free.is_empty() {
                        add(from.clone(), pick);
                    }
                    for &o in &free {
                        let (j, k) = pair(i, o);
                        let a = (w(j, k).exp() * p_star * nf).min(1.0);
                        let mut to = from.clone();
                        to.add(j, k);
                        add(to, pick * a / nf);
                        add(from.clone(), pick * (1.0 - a) / nf);
                    }
                }
                Some(c) => {
                    let (j, k) = pair(i, c);
                    let a = ((-w(j, k)).exp() / (p_star * (nf + 1.0))).min(1.0);
                    let mut to = from.clone();
                    to.remove(j, k);
                    add(to, pick * p_star * a);
                    add(from.clone(), pick * p_star * (1.0 - a));
                    if free.is_empty() {
                        add(from.clone(), pick * (1.0 - p_star));
                    }
                    for &o in &free {
                        let (j2, k2) = pair(i, o);
                        let a = (w(j2, k2) - w(j, k)).exp().min(1.0);
                        let mut to = from.clone();
                        to.remove(j, k);
                        to.add(j2, k2);
                        let q = pick * (1.0 - p_star) / nf;
                        add(to, q * a);
                        add(from.clone(), q * (1.0 - a));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn matching_kernel_satisfies_detailed_balance() {
    let (x, y, mut hyper) = small_instance();
    for p_star in [0.5, 0.2, 0.9] {
        hyper.p_star = p_star;
        let sampler = Sampler::new(&x, &y, &hyper).unwrap();
        let pose = PoseParams::new(Matrix2::identity(), Vector2::zeros(), 0.5);
        let w = |j: usize, k: usize| sampler.pair_weight(j, k, &pose);
        let states = all_matchings(3, 3);
        let log_pi = |m: &MatchingMatrix| m.iter().map(|(j, k)| w(j, k)).sum::<f64>();
        let kernels: HashMap<_, _> = states
            .iter()
            .map(|s| (key(s), exact_kernel(s, &w, p_star)))
            .collect();
        for s in &states {
            let row = &kernels[&key(s)];
            assert!((row.values().sum::<f64>() - 1.0).abs() < 1e-12);
            for t in &states {
                let forward = log_pi(s).exp() * row.get(&key(t)).copied().unwrap_or(0.0);
                let backward =
                    log_pi(t).exp() * kernels[&key(t)].get(&key(s)).copied().unwrap_or(0.0);
                assert!((forward - backward).abs() < 1e-12, "{:?} <-> {:?}", key(s), key(t));
            }
        }
    }
}

#[test]
fn one_step_frequencies_match_the_kernel() {
    let (x, y, hyper) = small_instance();
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for start in [vec![], vec![(0, 0)], vec![(0, 1), (2, 0)], vec![(0, 0), (1, 1), (2, 2)]] {
        let state = fixed_state(&sampler, &start);
        let pose = state.pose.clone();
        let w = |j: usize, k: usize| sampler.pair_weight(j, k, &pose);
        let oracle = exact_kernel(&state.matching, &w, hyper.p_star);
        let draws = 200_000;
        let mut counts: HashMap<Vec<(usize, usize)>, f64> = HashMap::new();
        for _ in 0..draws {
            let mut s = state.clone();
            sampler.update_matching(&mut s, &mut rng);
            *counts.entry(key(&s.matching)).or_default() += 1.0 / draws as f64;
        }
        for (k, p) in &oracle {
            let got = counts.get(k).copied().unwrap_or(0.0);
            assert!((got - p).abs() < 0.005, "{start:?} -> {k:?}: {got} vs {p}");
        }
        assert!(counts.keys().all(|k| oracle.contains_key(k)));
    }
}

#[test]
fn matching_chain_reaches_its_stationary_law() {
    let (x, y, hyper) = small_instance();
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut state = fixed_state(&sampler, &[]);
    let pose = state.pose.clone();
    let states = all_matchings(3, 3);
    let logs: Vec<f64> = states
        .iter()
        .map(|s| s.iter().map(|(j, k)| sampler.pair_weight(j, k, &pose)).sum())
        .collect();
    let norm = log_sum_exp(&logs);
    let mut counts: HashMap<Vec<(usize, usize)>, f64> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 300_000;
    for _ in 0..draws {
        sampler.update_matching(&mut state, &mut rng);
        *counts.entry(key(&state.matching)).or_default() += 1.0 / draws as f64;
    }
    let tv: f64 = states
        .iter()
        .zip(&logs)
        .map(|(s, l)| ((l - norm).exp() - counts.get(&key(s)).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.02, "total variation {tv}");
    let expected = log_joint(&state.matching, &state.pose, &x, &y, &hyper, TransformMode::Fixed);
    assert!((state.log_joint - expected).abs() < 1e-9);
}

#[test]
fn tau_draws_have_the_conditional_moments() {
    let (x, y, mut hyper) = small_instance();
    hyper.sigma_tau = 3.0;
    hyper.mu_tau = Vector2::new(1.0, -1.0);
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut state = fixed_state(&sampler, &[(0, 1), (2, 0)]);
    state.pose.sigma = 0.8;
    let two_s2 = 2.0 * 0.64;
    let prec = 1.0 / 9.0 + 2.0 / two_s2;
    let sum = (x.points[0] - y.points[1]) + (x.points[2] - y.points[0]);
    let mean = (hyper.mu_tau / 9.0 + sum / two_s2) / prec;
    let var = 1.0 / prec;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws = 100_000;
    let samples: Vec<Vector2<f64>> = (0..draws)
        .map(|_| {
            let mut s = state.clone();
            sampler.gibbs_update_tau(&mut s, &mut rng);
            s.pose.tau
        })
        .collect();
    for i in 0..2 {
        let m = samples.iter().map(|t| t[i]).sum::<f64>() / draws as f64;
        let v = samples.iter().map(|t| (t[i] - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!((m - mean[i]).abs() < 5.0 * (var / draws as f64).sqrt());
        assert!((v / var - 1.0).abs() < 0.03);
    }
}

#[test]
fn tau_limits() {
    let (x, y, mut hyper) = small_instance();
    hyper.sigma_tau = 1e8;
    hyper.mu_tau = Vector2::new(50.0, 50.0);
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut state = fixed_state(&sampler, &[(1, 2)]);
    state.pose.sigma = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    sampler.gibbs_update_tau(&mut state, &mut rng);
    assert!((state.pose.tau - (x.points[1] - y.points[2])).norm() < 1e-3);

    // With no matches τ is drawn from its prior.
    hyper.sigma_tau = 2.0;
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let state = fixed_state(&sampler, &[]);
    let draws: Vec<f64> = (0..50_000)
        .map(|_| {
            let mut s = state.clone();
            sampler.gibbs_update_tau(&mut s, &mut rng);
            s.pose.tau[0]
        })
        .collect();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((m - 50.0).abs() < 0.05);
}

#[test]
fn precision_draws_have_the_gamma_moments() {
    let (x, y, mut hyper) = small_instance();
    hyper.alpha = 2.0;
    hyper.beta = 3.0;
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut state = fixed_state(&sampler, &[(0, 0), (1, 1), (2, 2)]);
    state.pose.tau = Vector2::new(0.1, 0.2);
    let ss: f64 = (0..3)
        .map(|i| state.pose.residual(&x.points[i], &y.points[i]).norm_squared())
        .sum();
    let shape = 2.0 + 0.5 * 2.0 * 3.0;
    let rate = 3.0 + 0.25 * ss;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let draws = 100_000;
    let precisions: Vec<f64> = (0..draws)
        .map(|_| {
            let mut s = state.clone();
            sampler.gibbs_update_sigma(&mut s, &mut rng);
            s.pose.sigma.powi(-2)
        })
        .collect();
    let m = precisions.iter().sum::<f64>() / draws as f64;
    let v = precisions.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
    assert!((m / (shape / rate) - 1.0).abs() < 0.01);
    assert!((v / (shape / rate / rate) - 1.0).abs() < 0.03);
}

#[test]
fn von_mises_sampler_matches_its_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for kappa in [0.0, 0.5, 5.0, 50.0] {
        let params = VonMisesParams::new(1.0, kappa);
        let grid = GridCdf::new(|t| params.log_kernel(t), -PI, PI, 200_000);
        let mut draws: Vec<f64> = (0..100_000).map(|_| sample_von_mises(&params, &mut rng)).collect();
        assert!(draws.iter().all(|t| *t > -PI && *t <= PI));
        let d = ks_distance(&mut draws, |t| grid.cdf(t));
        assert!(d < 0.01, "kappa {kappa}: KS {d}");
    }
}

fn bessel_i(order: u32, x: f64) -> f64 {
    (0..200)
        .map(|k: i32| {
            let lg = statrs::function::gamma::ln_gamma(k as f64 + 1.0)
                + statrs::function::gamma::ln_gamma(k as f64 + order as f64 + 1.0);
            ((2 * k + order as i32) as f64 * (x / 2.0).ln() - lg).exp()
        })
        .sum()
}

#[test]
fn von_mises_resultant_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (nu, kappa) in [(0.3, 0.5), (-2.0, 2.0), (3.0, 20.0)] {
        let params = VonMisesParams::new(nu, kappa);
        let draws = 200_000;
        let (mut c, mut s) = (0.0, 0.0);
        for _ in 0..draws {
            let t = sample_von_mises(&params, &mut rng);
            c += (t - nu).cos();
            s += (t - nu).sin();
        }
        let ratio = bessel_i(1, kappa) / bessel_i(0, kappa);
        assert!((c / draws as f64 - ratio).abs() < 0.005, "kappa {kappa}");
        assert!((s / draws as f64).abs() < 0.005);
    }
}

#[test]
fn haar_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let draws = 100_000;
    let mut sum = Matrix3::zeros();
    let mut sq = Matrix3::zeros();
    let mut sines = Vec::with_capacity(draws);
    for _ in 0..draws {
        let e = sample_uniform_rotation_3d(&mut rng);
        let a = rotation_matrix_3d(&e);
        sum += a;
        sq += a.component_mul(&a);
        sines.push(e.theta13.sin());
    }
    assert!((sum / draws as f64).abs().max() < 0.01);
    assert!((sq / draws as f64 - Matrix3::repeat(1.0 / 3.0)).abs().max() < 0.01);
    assert!(ks_distance(&mut sines, |s| (s + 1.0) / 2.0) < 0.01);
}

/// Matrix Fisher moments by importance sampling from the Haar law.
fn matrix_fisher_mean(f: &Matrix3<f64>, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let mut num = Matrix3::zeros();
    let mut den = 0.0;
    for _ in 0..1_000_000 {
        let a = rotation_matrix_3d(&sample_uniform_rotation_3d(rng));
        let w = f.dot(&a).exp();
        num += a * w;
        den += w;
    }
    num / den
}

#[test]
fn euler_sweep_leaves_matrix_fisher_invariant() {
    let y = Configuration::new(vec![Vector3::new(1.0, 0.0, 0.0)]).unwrap();
    let x = y.clone();
    let mut hyper = Hyperparams::<3>::new(1.0);
    hyper.f0 = Matrix3::new(1.5, 0.3, -0.2, 0.0, 0.8, 0.4, 0.5, -0.6, 1.1);
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut state = ChainState {
        matching: MatchingMatrix::empty(1, 1),
        pose: PoseParams::new(Matrix3::identity(), Vector3::zeros(), 1.0),
        rotation: RotationState::Euler(EulerAngles3::identity()),
        log_joint: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut mean = Matrix3::zeros();
    let sweeps = 400_000;
    for _ in 0..sweeps {
        sampler.update_rotation_3d(&mut state, &mut rng);
        mean += state.pose.a;
    }
    mean /= sweeps as f64;
    let oracle = matrix_fisher_mean(&hyper.f0, &mut rng);
    assert!((mean - oracle).abs().max() < 0.02, "{mean} vs {oracle}");
}

fn schedule(seed: u64, sweeps: usize, burn_in: usize, thin: usize, rotation: bool) -> SweepSchedule {
    SweepSchedule {
        m_updates_per_sweep: 5,
        sample_rotation: rotation,
        sweeps,
        burn_in,
        thin,
        seed,
    }
}

fn planar_instance(seed: u64) -> (Configuration<2>, Configuration<2>, Hyperparams<2>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = bayes_align::geometry::rotation_matrix_2d(0.8);
    let ys: Vec<Vector2<f64>> = (0..12)
        .map(|_| Vector2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
        .collect();
    let xs: Vec<Vector2<f64>> = ys[..9]
        .iter()
        .map(|y| a * y + Vector2::new(2.0, -1.0) + Vector2::new(rng.random_range(-0.3..0.3), 0.1))
        .collect();
    let mut hyper = Hyperparams::new(50.0);
    hyper.beta = 1.0;
    (Configuration::new(xs).unwrap(), Configuration::new(ys).unwrap(), hyper)
}

#[test]
fn same_seed_same_trace() {
    let (x, y, hyper) = planar_instance(1);
    let s = schedule(7, 2000, 500, 3, true);
    let a = run_chain(&x, &y, &hyper, &s, None).unwrap();
    let b = run_chain(&x, &y, &hyper, &s, None).unwrap();
    assert_eq!(a, b);
    let c = run_chain(&x, &y, &hyper, &schedule(8, 2000, 500, 3, true), None).unwrap();
    assert_ne!(a.samples, c.samples);
    assert_eq!(a.len(), 500);
    assert_eq!(a.samples[0].sweep, 503);
}

#[test]
fn cached_log_joint_stays_exact() {
    let (x, y, hyper) = planar_instance(2);
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut chain = Chain::new(sampler, &schedule(3, 0, 0, 1, true), None).unwrap();
    for _ in 0..20 {
        chain.advance(1000, 0, 1000).unwrap();
        let fresh = chain.sampler.log_joint(&chain.state);
        assert!((fresh - chain.state.log_joint).abs() < 1e-9);
        assert!(chain.state.matching.is_consistent());
    }
    // The chain finds the planted alignment.
    assert!(chain.state.matching.len() >= 7);
}

#[test]
fn null_moves_when_one_side_is_empty() {
    let x = Configuration::<2>::new(vec![]).unwrap();
    let y = Configuration::new(vec![Vector2::new(1.0, 1.0), Vector2::new(2.0, 0.0)]).unwrap();
    let hyper = Hyperparams::new(1.0);
    let trace = run_chain(&x, &y, &hyper, &schedule(1, 200, 0, 1, false), None).unwrap();
    assert_eq!(trace.stats.add.proposed, 1000);
    assert_eq!(trace.stats.add.accepted, 0);
    assert!(trace.samples.iter().all(|s| s.pairs.is_empty()));
}

#[test]
fn zero_retained_samples() {
    let (x, y, hyper) = planar_instance(3);
    let trace = run_chain(&x, &y, &hyper, &schedule(1, 100, 100, 1, true), None).unwrap();
    assert!(trace.is_empty());
    assert!(run_chain(&x, &y, &hyper, &schedule(1, 10, 11, 1, true), None).is_err());
    assert!(run_chain(&x, &y, &hyper, &schedule(1, 10, 0, 0, true), None).is_err());
}

#[test]
fn rejects_non_rotation_start() {
    let (x, y, hyper) = planar_instance(4);
    let sampler = Sampler::new(&x, &y, &hyper).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shear = Matrix2::new(1.0, 0.5, 0.0, 1.0);
    assert!(sampler.initial_state(Some(shear), true, &mut rng).is_err());
    assert!(sampler.initial_state(Some(shear), false, &mut rng).is_ok());
}

#[test]
fn single_start_multistart_is_a_plain_chain() {
    let (x, y, hyper) = planar_instance(5);
    let short = schedule(21, 300, 100, 2, true);
    let long = schedule(0, 700, 200, 5, true);
    let report = multistart(&x, &y, &hyper, &short, &long, 1, f64::NEG_INFINITY).unwrap();
    assert_eq!(report.passed, 1);
    let start = &report.starts[0];
    let plain_short = run_chain(&x, &y, &hyper, &short, None).unwrap();
    assert_eq!(start.short_trace, plain_short);
    let combined = schedule(21, 1000, 300 + 200, 5, true);
    let plain = run_chain(&x, &y, &hyper, &combined, None).unwrap();
    assert_eq!(start.long_trace.as_ref().unwrap().samples, plain.samples);
    assert!(report.consensus);
}

#[test]
fn impossible_threshold_leaves_no_survivors() {
    let (x, y, hyper) = planar_instance(6);
    let s = schedule(1, 100, 0, 1, true);
    let report = multistart(&x, &y, &hyper, &s, &s, 3, f64::INFINITY).unwrap();
    assert!(report.no_survivors());
    assert!(!report.consensus);
    assert!(report.starts.iter().all(|s| s.long_trace.is_none()));
}

#[test]
fn acceptance_counts_cover_every_proposal() {
    let (x, y, hyper) = planar_instance(7);
    let trace = run_chain(&x, &y, &hyper, &schedule(2, 1000, 0, 1, true), None).unwrap();
    let s: AcceptanceStats = trace.stats;
    assert_eq!(s.add.proposed + s.delete.proposed + s.switch.proposed, 5000);
    assert_eq!(s.theta13.proposed, 0);
}

proptest! {
    #[test]
    fn polar_mean_is_equivariant(
        base in prop::array::uniform3(-3.0f64..3.0),
        turn in prop::array::uniform3(-3.0f64..3.0),
        jitter in prop::collection::vec(prop::array::uniform3(-0.3f64..0.3), 1..8),
    ) {
        let r = rotation_matrix_3d(&EulerAngles3::new(turn[0], turn[1] / 2.5, turn[2]));
        let samples: Vec<Matrix3<f64>> = jitter
            .iter()
            .map(|j| rotation_matrix_3d(&EulerAngles3::new(
                base[0] + j[0],
                base[1] / 2.5 + j[1],
                base[2] + j[2],
            )))
            .collect();
        let mean = polar_rotation_mean(&samples).unwrap();
        let left: Vec<_> = samples.iter().map(|a| r * a).collect();
        let right: Vec<_> = samples.iter().map(|a| a * r).collect();
        prop_assert!((polar_rotation_mean(&left).unwrap() - r * mean).abs().max() < 1e-9);
        prop_assert!((polar_rotation_mean(&right).unwrap() - mean * r).abs().max() < 1e-9);
    }
}
