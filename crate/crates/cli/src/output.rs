//! Files written by the run commands. Column and field names are part of the
//! documented interface; the SVG layout is not.

use std::fmt::Write as _;

use bayes_align::sampler::{AcceptanceStats, MoveCount};
use bayes_align::{
    Configuration, MatchingMatrix, Matrix, Point, PosteriorSummary, Trace, TransformMode,
};
use nalgebra::{DMatrix, SymmetricEigen};
use serde_json::{json, Value};

use crate::config::RunConfig;

fn matrix_rows<const D: usize>(a: &Matrix<D>) -> Value {
    json!((0..D).map(|i| (0..D).map(|j| a[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn point<const D: usize>(p: &Point<D>) -> Value {
    json!(p.iter().copied().collect::<Vec<_>>())
}

fn move_count(c: &MoveCount) -> Value {
    json!({ "proposed": c.proposed, "accepted": c.accepted, "rate": c.rate() })
}

pub fn acceptance_json(stats: &AcceptanceStats) -> Value {
    json!({
        "add": move_count(&stats.add),
        "delete": move_count(&stats.delete),
        "switch": move_count(&stats.switch),
    })
}

/// Declared matchings, one per loss setting, as 1-based pairs.
pub fn matchings_json(declared: &[(f64, MatchingMatrix)]) -> Value {
    json!(declared
        .iter()
        .map(|(k, m)| json!({
            "k": k,
            "size": m.len(),
            "pairs": m.pairs().iter().map(|&(j, kk)| [j + 1, kk + 1]).collect::<Vec<_>>(),
        }))
        .collect::<Vec<_>>())
}

pub fn summary_json<const D: usize>(
    config: &RunConfig,
    summary: &PosteriorSummary<D>,
    trace: &Trace<D>,
    transform: &Matrix<D>,
    declared: &[(f64, MatchingMatrix)],
) -> Value {
    json!({
        "seed": trace.seed,
        "dim": D,
        "m": trace.m,
        "n": trace.n,
        "samples": summary.sample_count,
        "tau_mean": point(&summary.tau_mean),
        "tau_cov": matrix_rows(&summary.tau_cov),
        "sigma_mean": summary.sigma_mean,
        "sigma_var": summary.sigma_var,
        "a_hat": matrix_rows(transform),
        "rotation_sampled": trace.mode == TransformMode::Rotation,
        "l_pmf": summary.l_pmf,
        "l_mean": summary.l_mean,
        "acceptance": acceptance_json(&trace.stats),
        "matchings": matchings_json(declared),
        "config": config.echo,
    })
}

pub fn angle_names(dim: usize, mode: TransformMode) -> &'static [&'static str] {
    match (mode, dim) {
        (TransformMode::Fixed, _) => &[],
        (_, 2) => &["theta"],
        _ => &["theta12", "theta13", "theta23"],
    }
}

/// `sweep,log_joint,tau1..tauD,sigma[,angles]`, one row per retained sample.
pub fn trace_csv<const D: usize>(trace: &Trace<D>) -> String {
    let mut out = String::from("sweep,log_joint");
    for i in 1..=D {
        let _ = write!(out, ",tau{i}");
    }
    out.push_str(",sigma");
    for name in angle_names(D, trace.mode) {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for s in &trace.samples {
        let _ = write!(out, "{},{}", s.sweep, s.log_joint);
        for t in s.tau.iter() {
            let _ = write!(out, ",{t}");
        }
        let _ = write!(out, ",{}", s.sigma);
        for a in &s.angles {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
    }
    out
}

/// Projection onto the first two principal axes of the plotted points; the
/// identity in two dimensions.
fn project<const D: usize>(points: &[Point<D>]) -> Vec<(f64, f64)> {
    if D == 2 || points.len() < 2 {
        return points.iter().map(|p| (p[0], p.get(1).copied().unwrap_or(0.0))).collect();
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Point::<D>::zeros(), |acc, p| acc + p) / n;
    let mut cov = DMatrix::<f64>::zeros(D, D);
    for p in points {
        let d = p - mean;
        for i in 0..D {
            for j in 0..D {
                cov[(i, j)] += d[i] * d[j] / n;
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..D).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| eig.eigenvectors.column(order[k]).into_owned();
    let (u, v) = (axis(0), axis(1));
    points
        .iter()
        .map(|p| {
            let d = p - mean;
            let dot = |w: &nalgebra::DVector<f64>| (0..D).map(|i| d[i] * w[i]).sum::<f64>();
            (dot(&u), dot(&v))
        })
        .collect()
}

/// `x` as '+', `A y + τ` as 'o', and a segment for each declared match.
pub fn matches_svg<const D: usize>(
    x: &Configuration<D>,
    y: &Configuration<D>,
    a: &Matrix<D>,
    tau: &Point<D>,
    matching: &MatchingMatrix,
) -> String {
    let mapped: Vec<Point<D>> = y.points.iter().map(|p| a * p + tau).collect();
    let all: Vec<Point<D>> = x.points.iter().cloned().chain(mapped).collect();
    let flat = project(&all);
    let (xs, ys) = flat.split_at(x.len());
    let (size, margin) = (600.0, 30.0);
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in &flat {
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    let span = (hi_u - lo_u).max(hi_v - lo_v).max(1e-12);
    let scale = (size - 2.0 * margin) / span;
    let screen = |(u, v): (f64, f64)| (margin + (u - lo_u) * scale, size - margin - (v - lo_v) * scale);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (j, k) in matching.iter() {
        let (x1, y1) = screen(xs[j]);
        let (x2, y2) = screen(ys[k]);
        let _ = writeln!(
            svg,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"black\" stroke-width=\"1\"/>"
        );
    }
    for &p in xs {
        let (cx, cy) = screen(p);
        let _ = writeln!(
            svg,
            "<path d=\"M{:.2} {cy:.2}H{:.2}M{cx:.2} {:.2}V{:.2}\" stroke=\"blue\" stroke-width=\"1.5\"/>",
            cx - 4.0,
            cx + 4.0,
            cy - 4.0,
            cy + 4.0
        );
    }
    for &p in ys {
        let (cx, cy) = screen(p);
        let _ = writeln!(
            svg,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"none\" stroke=\"red\" stroke-width=\"1.5\"/>"
        );
    }
    svg.push_str("</svg>\n");
    svg
}
