//! Multistart screening for multimodal posteriors.
//!
//! Many chains start from independent Haar-uniform rotations. After a short
//! run each chain must have reached a log-posterior threshold (usually set
//! from pilot runs with [`pilot_threshold`]); survivors run on, and the report
//! says whether they all agree on the same set of most probable matches.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimation::{match_probabilities, summarize, EstimationError};
use crate::model::{Configuration, Hyperparams};
use crate::sampler::{Chain, Sampler, SamplerError, SweepSchedule, Trace};

/// Outcome of one start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartResult<const D: usize> {
    pub seed: u64,
    pub passed: bool,
    /// Highest log joint reached over the short run's retained samples.
    pub short_max_log_joint: f64,
    pub final_log_joint: f64,
    pub short_trace: Trace<D>,
    pub long_trace: Option<Trace<D>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartReport<const D: usize> {
    pub n_starts: usize,
    pub passed: usize,
    pub threshold: f64,
    pub starts: Vec<StartResult<D>>,
    /// Whether every survivor has the same top-`L` match set.
    pub consensus: bool,
    /// Modal match count of the best survivor; the `L` in top-`L`.
    pub top_l: usize,
    /// Top-`L` pairs of the best survivor, sorted.
    pub reference_top: Vec<(usize, usize)>,
}

impl<const D: usize> MultistartReport<D> {
    pub fn no_survivors(&self) -> bool {
        self.passed == 0
    }

    pub fn final_log_joints(&self) -> Vec<f64> {
        self.starts.iter().map(|s| s.final_log_joint).collect()
    }
}

fn mean_log_joint<const D: usize>(trace: &Trace<D>) -> f64 {
    if trace.samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    trace.samples.iter().map(|s| s.log_joint).sum::<f64>() / trace.samples.len() as f64
}

/// The `top_l` most probable pairs of a trace.
pub fn top_matches<const D: usize>(
    trace: &Trace<D>,
    top_l: usize,
) -> Result<BTreeSet<(usize, usize)>, EstimationError> {
    let table = match_probabilities(trace)?;
    Ok(table
        .ranked()
        .into_iter()
        .take(top_l)
        .map(|(j, k, _)| (j, k))
        .collect())
}

/// Runs `n_starts` chains with seeds `schedule_short.seed + i`. Each runs
/// `schedule_short`; chains whose retained log joint never reached
/// `log_post_threshold` are abandoned, the rest continue for
/// `schedule_long.sweeps` more sweeps retaining every `schedule_long.thin`-th
/// after `schedule_long.burn_in`.
pub fn multistart<const D: usize>(
    x: &Configuration<D>,
    y: &Configuration<D>,
    hyper: &Hyperparams<D>,
    schedule_short: &SweepSchedule,
    schedule_long: &SweepSchedule,
    n_starts: usize,
    log_post_threshold: f64,
) -> Result<MultistartReport<D>, SamplerError> {
    if n_starts == 0 {
        return Err(SamplerError::InvalidSchedule("n_starts must be at least 1".into()));
    }
    if log_post_threshold.is_nan() {
        return Err(SamplerError::InvalidSchedule("threshold must not be NaN".into()));
    }
    schedule_short.validate()?;
    schedule_long.validate()?;
    let sampler = Sampler::new(x, y, hyper)?;

    let starts: Vec<StartResult<D>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let schedule = SweepSchedule {
                seed: schedule_short.seed.wrapping_add(i as u64),
                ..schedule_short.clone()
            };
            let mut chain = Chain::new(sampler.clone(), &schedule, None)?;
            let short_trace =
                chain.advance(schedule.sweeps, schedule.burn_in, schedule.thin)?;
            let short_max = short_trace
                .samples
                .iter()
                .map(|s| s.log_joint)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(if short_trace.samples.is_empty() {
                    chain.state.log_joint
                } else {
                    f64::NEG_INFINITY
                });
            let passed = short_max >= log_post_threshold;
            let long_trace = if passed {
                Some(chain.advance(
                    schedule_long.sweeps,
                    schedule_long.burn_in,
                    schedule_long.thin,
                )?)
            } else {
                None
            };
            Ok(StartResult {
                seed: schedule.seed,
                passed,
                short_max_log_joint: short_max,
                final_log_joint: chain.state.log_joint,
                short_trace,
                long_trace,
            })
        })
        .collect::<Result<_, SamplerError>>()?;

    let survivors: Vec<&Trace<D>> = starts
        .iter()
        .filter_map(|s| s.long_trace.as_ref())
        .filter(|t| !t.samples.is_empty())
        .collect();
    let passed = starts.iter().filter(|s| s.passed).count();

    let mut report = MultistartReport {
        n_starts,
        passed,
        threshold: log_post_threshold,
        starts: Vec::new(),
        consensus: false,
        top_l: 0,
        reference_top: Vec::new(),
    };
    if let Some(best) = survivors
        .iter()
        .max_by(|a, b| mean_log_joint(a).total_cmp(&mean_log_joint(b)))
    {
        let summary = summarize(best).map_err(|e| SamplerError::InvalidSchedule(e.to_string()))?;
        let top_l = summary
            .l_pmf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(l, _)| l);
        let reference = top_matches(best, top_l).expect("non-empty trace");
        report.consensus = survivors
            .iter()
            .all(|t| top_matches(t, top_l).expect("non-empty trace") == reference);
        report.top_l = top_l;
        report.reference_top = reference.into_iter().collect();
    }
    report.starts = starts;
    Ok(report)
}

/// Threshold for multistart screening: the `quantile` of the retained log
/// joint values of the pilot chain with the highest mean log joint.
pub fn pilot_threshold<const D: usize>(pilots: &[Trace<D>], quantile: f64) -> Option<f64> {
    let best = pilots
        .iter()
        .filter(|t| !t.samples.is_empty())
        .max_by(|a, b| mean_log_joint(a).total_cmp(&mean_log_joint(b)))?;
    let mut values: Vec<f64> = best.samples.iter().map(|s| s.log_joint).collect();
    values.sort_by(f64::total_cmp);
    let pos = quantile.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(values[lo] + (values[hi] - values[lo]) * (pos - lo as f64))
}

/// Default quantile for [`pilot_threshold`].
pub const DEFAULT_PILOT_QUANTILE: f64 = 0.25;
