use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use bayes_align::diagnostics::{multistart, pilot_threshold};
use bayes_align::em::run_em;
use bayes_align::estimation::threshold_matching;
use bayes_align::geometry::{rotation_matrix_2d, rotation_matrix_3d, sample_uniform_angle, sample_uniform_rotation_3d};
use bayes_align::io::{
    format_matches_csv, format_points, format_truth, parse_matches_csv, parse_matrix, parse_truth,
    read_points, read_text, table_from_rows, write_text, PointTable, TruthFile,
};
use bayes_align::synthetic::{generate, BoxRegion, ColourModel, GenerativeSpec};
use bayes_align::{
    match_probabilities, optimal_matching, summarize, Chain, Configuration, Hyperparams, LossSpec,
    MatchProbabilityTable, MatchingMatrix, Matrix, Point, PoseParams, Sampler, SweepSchedule,
    Trace, TransformMode,
};
use nalgebra::{Matrix2, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{acceptance_json, matches_svg, matchings_json, summary_json, trace_csv};
use crate::CliError;

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    write_text(path, text).map_err(runtime)
}

/// Which run to perform once inputs are loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Align,
    Em,
    Multistart,
}

struct Inputs<const D: usize> {
    x: Configuration<D>,
    y: Configuration<D>,
    hyper: Hyperparams<D>,
    transform: Option<Matrix<D>>,
    truth: Option<TruthFile>,
}

/// Loads the point files and dispatches on their dimension.
pub fn run(kind: RunKind, config: &RunConfig) -> Result<(), CliError> {
    let x = read_points(&config.x).map_err(validation)?;
    let y = read_points(&config.y).map_err(validation)?;
    if x.dim != y.dim {
        return Err(CliError::Validation(format!(
            "x has dimension {} but y has dimension {}",
            x.dim, y.dim
        )));
    }
    if let Some(d) = config.mode_dimension() {
        if d != x.dim {
            return Err(CliError::Validation(format!(
                "mode {} needs {d}-dimensional points, files have {}",
                config.echo["mode"], x.dim
            )));
        }
    }
    match x.dim {
        2 => run_dim::<2>(kind, config, &x, &y),
        3 => run_dim::<3>(kind, config, &x, &y),
        d => Err(CliError::Validation(format!("unsupported dimension {d}; use 2 or 3"))),
    }
}

fn run_dim<const D: usize>(
    kind: RunKind,
    config: &RunConfig,
    x: &PointTable,
    y: &PointTable,
) -> Result<(), CliError> {
    let transform = match &config.a {
        Some(path) => Some(parse_matrix::<D>(&read_text(path).map_err(validation)?).map_err(validation)?),
        None => None,
    };
    let truth = match &config.truth {
        Some(path) => Some(parse_truth(&read_text(path).map_err(validation)?).map_err(validation)?),
        None => None,
    };
    let inputs = Inputs {
        x: x.to_configuration::<D>().map_err(validation)?,
        y: y.to_configuration::<D>().map_err(validation)?,
        hyper: config.hyperparams::<D>()?,
        transform,
        truth,
    };
    std::fs::create_dir_all(&config.out).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", config.out.display()))
    })?;
    write_file(&config.out.join("run.cfg"), &config.to_config_text())?;
    match kind {
        RunKind::Align => align(config, &inputs),
        RunKind::Em => em(config, &inputs),
        RunKind::Multistart => run_multistart(config, &inputs),
    }
}

fn declared(table: &MatchProbabilityTable, config: &RunConfig) -> Vec<(f64, MatchingMatrix)> {
    config
        .losses
        .iter()
        .map(|&loss| (loss.k(), optimal_matching(table, loss)))
        .collect()
}

fn truth_scores(truth: &TruthFile, found: &[(f64, MatchingMatrix)]) -> serde_json::Value {
    let reference: BTreeSet<(usize, usize)> = truth.matches.iter().copied().collect();
    json!(found
        .iter()
        .map(|(k, m)| {
            let (precision, recall) = precision_recall(&reference, &m.pairs());
            json!({ "k": k, "precision": precision, "recall": recall })
        })
        .collect::<Vec<_>>())
}

/// Precision and recall of `declared` against `truth`; `None` when the
/// corresponding denominator is zero.
pub fn precision_recall(
    truth: &BTreeSet<(usize, usize)>,
    declared: &[(usize, usize)],
) -> (Option<f64>, Option<f64>) {
    let hits = declared.iter().filter(|p| truth.contains(p)).count() as f64;
    let precision = (!declared.is_empty()).then(|| hits / declared.len() as f64);
    let recall = (!truth.is_empty()).then(|| hits / truth.len() as f64);
    (precision, recall)
}

fn start_state<const D: usize>(
    sampler: &Sampler<'_, D>,
    inputs: &Inputs<D>,
    schedule: &SweepSchedule,
) -> Result<Option<bayes_align::ChainState<D>>, CliError> {
    match inputs.transform {
        Some(a) => {
            let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
            Ok(Some(sampler.initial_state(Some(a), schedule.sample_rotation, &mut rng).map_err(validation)?))
        }
        None => Ok(None),
    }
}

/// Writes matches.csv, summary.json, trace.csv and optionally matches.svg.
fn write_chain_outputs<const D: usize>(
    config: &RunConfig,
    inputs: &Inputs<D>,
    trace: &Trace<D>,
) -> Result<(), CliError> {
    let table = match_probabilities(trace).map_err(runtime)?;
    let summary = summarize(trace).map_err(runtime)?;
    let a = summary
        .a_hat
        .or(inputs.transform)
        .unwrap_or_else(Matrix::<D>::identity);
    let found = declared(&table, config);
    let mut json = summary_json(config, &summary, trace, &a, &found);
    if let Some(truth) = &inputs.truth {
        json["truth"] = truth_scores(truth, &found);
    }
    write_file(&config.out.join("matches.csv"), &format_matches_csv(&table))?;
    write_file(
        &config.out.join("summary.json"),
        &(serde_json::to_string_pretty(&json).map_err(runtime)? + "\n"),
    )?;
    write_file(&config.out.join("trace.csv"), &trace_csv(trace))?;
    if config.plot {
        write_file(
            &config.out.join("matches.svg"),
            &matches_svg(&inputs.x, &inputs.y, &a, &summary.tau_mean, &found[0].1),
        )?;
    }
    for (k, m) in &found {
        println!("K = {k}: {} matches", m.len());
    }
    println!(
        "sigma {:.4}, mean match count {:.2}, {} samples",
        summary.sigma_mean, summary.l_mean, summary.sample_count
    );
    Ok(())
}

fn align<const D: usize>(config: &RunConfig, inputs: &Inputs<D>) -> Result<(), CliError> {
    let sampler = Sampler::new(&inputs.x, &inputs.y, &inputs.hyper).map_err(validation)?;
    let schedule = &config.schedule;
    let init = start_state(&sampler, inputs, schedule)?;
    let mut chain = Chain::new(sampler, schedule, init).map_err(validation)?;
    let trace = chain
        .advance(schedule.sweeps, schedule.burn_in, schedule.thin)
        .map_err(runtime)?;
    if trace.is_empty() {
        return Err(CliError::Validation("schedule retains no samples".into()));
    }
    write_chain_outputs(config, inputs, &trace)
}

fn run_multistart<const D: usize>(config: &RunConfig, inputs: &Inputs<D>) -> Result<(), CliError> {
    let ms = &config.multistart;
    let base = &config.schedule;
    let threshold = match ms.threshold {
        Some(t) => t,
        None => {
            let sampler = Sampler::new(&inputs.x, &inputs.y, &inputs.hyper).map_err(validation)?;
            let mut pilots = Vec::with_capacity(ms.pilots);
            for i in 0..ms.pilots {
                let schedule = SweepSchedule {
                    seed: base.seed.wrapping_add((ms.starts + i) as u64),
                    sweeps: ms.pilot_sweeps,
                    burn_in: ms.pilot_sweeps / 2,
                    ..base.clone()
                };
                let mut chain = Chain::new(sampler.clone(), &schedule, None).map_err(validation)?;
                pilots.push(
                    chain
                        .advance(schedule.sweeps, schedule.burn_in, schedule.thin)
                        .map_err(runtime)?,
                );
            }
            pilot_threshold(&pilots, ms.pilot_quantile).ok_or_else(|| {
                CliError::Validation("pilot runs retain no samples; set pilots or threshold".into())
            })?
        }
    };
    let short = SweepSchedule {
        sweeps: ms.short_sweeps,
        burn_in: 0,
        ..base.clone()
    };
    let report = multistart(&inputs.x, &inputs.y, &inputs.hyper, &short, base, ms.starts, threshold)
        .map_err(validation)?;
    let json = json!({
        "threshold": threshold,
        "starts": report.n_starts,
        "passed": report.passed,
        "consensus": report.consensus,
        "top_l": report.top_l,
        "reference_top": report.reference_top.iter().map(|&(j, k)| [j + 1, k + 1]).collect::<Vec<_>>(),
        "runs": report.starts.iter().map(|s| json!({
            "seed": s.seed,
            "passed": s.passed,
            "short_max_log_joint": s.short_max_log_joint,
            "final_log_joint": s.final_log_joint,
            "acceptance": acceptance_json(&s.short_trace.stats),
        })).collect::<Vec<_>>(),
        "config": config.echo,
    });
    write_file(
        &config.out.join("multistart.json"),
        &(serde_json::to_string_pretty(&json).map_err(runtime)? + "\n"),
    )?;
    println!(
        "{}/{} starts passed threshold {threshold:.3}; consensus on top {}: {}",
        report.passed, report.n_starts, report.top_l, report.consensus
    );
    let best = report
        .starts
        .iter()
        .filter_map(|s| s.long_trace.as_ref())
        .filter(|t| !t.is_empty())
        .max_by(|a, b| mean_log_joint(a).total_cmp(&mean_log_joint(b)))
        .ok_or_else(|| CliError::Runtime("no start passed the threshold".into()))?;
    write_chain_outputs(config, inputs, best)
}

fn mean_log_joint<const D: usize>(trace: &Trace<D>) -> f64 {
    trace.samples.iter().map(|s| s.log_joint).sum::<f64>() / trace.samples.len() as f64
}

fn em<const D: usize>(config: &RunConfig, inputs: &Inputs<D>) -> Result<(), CliError> {
    let sampler = Sampler::new(&inputs.x, &inputs.y, &inputs.hyper).map_err(validation)?;
    let mode = if config.mode.samples_rotation() {
        TransformMode::Rotation
    } else {
        TransformMode::Fixed
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.schedule.seed);
    let starts = if mode == TransformMode::Fixed { 1 } else { config.em_starts.max(1) };
    let mut best = None;
    for start in 0..starts {
        let a = if start == 0 { inputs.transform } else { None };
        let init = sampler
            .initial_state(a, start > 0, &mut rng)
            .map_err(validation)?
            .pose;
        let result = run_em(&inputs.x, &inputs.y, &inputs.hyper, &init, mode, config.em_iterations);
        let score = *result.objective.last().expect("initial objective is recorded");
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, start, result));
        }
    }
    let (score, start, result) = best.expect("at least one start");
    let mut table = MatchProbabilityTable::from_rows(
        &(0..result.table.m)
            .map(|j| (0..result.table.n).map(|k| result.table.get(j, k)).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    table.sample_count = 0;
    let found = declared(&table, config);
    let pose = &result.pose;
    let mut json = json!({
        "start": start,
        "objective": score,
        "objective_trace": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "tau": pose.tau.iter().copied().collect::<Vec<_>>(),
        "sigma": pose.sigma,
        "a": (0..D).map(|i| (0..D).map(|j| pose.a[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "matchings": matchings_json(&found),
        "config": config.echo,
    });
    if let Some(truth) = &inputs.truth {
        json["truth"] = truth_scores(truth, &found);
    }
    write_file(&config.out.join("em_matches.csv"), &format_matches_csv(&table))?;
    write_file(
        &config.out.join("em.json"),
        &(serde_json::to_string_pretty(&json).map_err(runtime)? + "\n"),
    )?;
    if config.plot {
        write_file(
            &config.out.join("em_matches.svg"),
            &matches_svg(&inputs.x, &inputs.y, &pose.a, &pose.tau, &found[0].1),
        )?;
    }
    println!(
        "EM objective {score:.4} after {} iterations (converged: {}), sigma {:.4}",
        result.iterations, result.converged, pose.sigma
    );
    for (k, m) in &found {
        println!("K = {k}: {} matches", m.len());
    }
    Ok(())
}

/// Parameters of the `generate` command.
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub dim: usize,
    pub expected_points: f64,
    pub side: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub rho: f64,
    pub sigma: f64,
    pub tau: Vec<f64>,
    pub random_rotation: bool,
    pub colours: Vec<String>,
    pub gamma: f64,
    pub delta: f64,
    pub min_spacing: Option<f64>,
    pub seed: u64,
    pub out: std::path::PathBuf,
}

pub fn generate_command(opts: &GenerateOptions) -> Result<(), CliError> {
    match opts.dim {
        2 => generate_dim::<2>(opts),
        3 => generate_dim::<3>(opts),
        d => Err(CliError::Validation(format!("unsupported dimension {d}; use 2 or 3"))),
    }
}

fn generate_dim<const D: usize>(opts: &GenerateOptions) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tau = match opts.tau.len() {
        0 => Point::<D>::zeros(),
        n if n == D => Point::<D>::from_column_slice(&opts.tau),
        n => return Err(CliError::Validation(format!("tau has {n} entries, expected {D}"))),
    };
    let mut a = Matrix::<D>::identity();
    if opts.random_rotation {
        if D == 2 {
            let r: Matrix2<f64> = rotation_matrix_2d(sample_uniform_angle(&mut rng));
            a = Matrix::<D>::from_fn(|i, j| r[(i, j)]);
        } else {
            let r: Matrix3<f64> = rotation_matrix_3d(&sample_uniform_rotation_3d(&mut rng));
            a = Matrix::<D>::from_fn(|i, j| r[(i, j)]);
        }
    }
    let region = BoxRegion::<D>::centred_cube(opts.side).map_err(validation)?;
    let colours = (!opts.colours.is_empty()).then(|| {
        let c = opts.colours.len();
        ColourModel {
            labels: opts.colours.clone(),
            pi_x: vec![1.0 / c as f64; c],
            pi_y: vec![1.0 / c as f64; c],
            gamma: opts.gamma,
            delta: opts.delta,
        }
    });
    let spec = GenerativeSpec {
        lambda_rate: opts.expected_points / region.volume(),
        region: region.into(),
        p_x: opts.p_x,
        p_y: opts.p_y,
        rho: opts.rho,
        pose: PoseParams::new(a, tau, opts.sigma),
        colours,
        min_spacing: opts.min_spacing,
    };
    let instance = generate(&spec, &mut rng).map_err(validation)?;
    std::fs::create_dir_all(&opts.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", opts.out.display())))?;
    write_file(&opts.out.join("x.txt"), &format_points(&PointTable::from_configuration(&instance.x)))?;
    write_file(&opts.out.join("y.txt"), &format_points(&PointTable::from_configuration(&instance.y)))?;
    write_file(
        &opts.out.join("truth.txt"),
        &format_truth(&TruthFile::from_pose(&spec.pose, instance.truth.pairs())),
    )?;
    let mode = if D == 2 { "rotation-2d" } else { "rotation-3d" };
    let mut cfg = format!(
        "mode = {mode}\nx = x.txt\ny = y.txt\ntruth = truth.txt\nkappa_match = {}\nalpha = 1\nbeta = {}\n",
        spec.kappa_match(),
        opts.sigma * opts.sigma
    );
    if spec.colours.is_some() {
        let _ = writeln!(cfg, "gamma = {}\ndelta = {}", opts.gamma, opts.delta);
    }
    write_file(&opts.out.join("run.cfg"), &cfg)?;
    println!(
        "m = {}, n = {}, true matches = {}, kappa_match = {}",
        instance.x.len(),
        instance.y.len(),
        instance.truth.len(),
        spec.kappa_match()
    );
    Ok(())
}

/// Text report of optimal matchings over a list of `K` values.
pub fn report_text(
    rows: &[bayes_align::io::MatchRow],
    ks: &[f64],
    truth: Option<&TruthFile>,
) -> Result<String, CliError> {
    let table = table_from_rows(rows, None, None);
    let mut out = String::new();
    let mut breaks: Vec<f64> = rows.iter().map(|r| r.p).filter(|&p| p > 0.0 && p < 1.0).collect();
    breaks.sort_by(|a, b| b.total_cmp(a));
    breaks.dedup();
    let _ = writeln!(
        out,
        "breakpoints: {}",
        breaks.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(" ")
    );
    let reference: Option<BTreeSet<(usize, usize)>> = truth.map(|t| t.matches.iter().copied().collect());
    for &k in ks {
        let loss = LossSpec::new(k).map_err(validation)?;
        let matching = optimal_matching(&table, loss);
        // When thresholding gives a valid matching it is optimal, and the
        // thresholded set only changes at breakpoints.
        let interval = threshold_matching(&table, k).map(|_| {
            let lo = breaks.iter().find(|&&p| p <= k).copied().unwrap_or(0.0);
            let hi = breaks.iter().rev().find(|&&p| p > k).copied().unwrap_or(1.0);
            format!(" (same matching for K in [{lo}, {hi}))")
        });
        let _ = writeln!(
            out,
            "K = {k}: {} matches{}",
            matching.len(),
            interval.unwrap_or_default()
        );
        for (j, kk) in matching.iter() {
            let _ = writeln!(out, "  {} {} {}", j + 1, kk + 1, table.get(j, kk));
        }
        if let Some(reference) = &reference {
            let (precision, recall) = precision_recall(reference, &matching.pairs());
            let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "  precision {} recall {}", show(precision), show(recall));
        }
    }
    Ok(out)
}

pub fn report_command(matches: &Path, ks: &[f64], truth: Option<&Path>) -> Result<(), CliError> {
    let rows = parse_matches_csv(&read_text(matches).map_err(validation)?).map_err(validation)?;
    let truth = match truth {
        Some(p) => Some(parse_truth(&read_text(p).map_err(validation)?).map_err(validation)?),
        None => None,
    };
    print!("{}", report_text(&rows, ks, truth.as_ref())?);
    Ok(())
}
