//! Text file formats.
//!
//! * Point files: one point per line, `id x1 .. xd [colour]`, fields separated
//!   by whitespace or commas, `#` starts a comment. The dimension is taken
//!   from the first record and enforced on the rest. Colour labels must not
//!   parse as numbers.
//! * Key-value files: `key = value` per line, used for run configuration and
//!   for the truth sidecar written next to synthetic instances.
//! * Matrix files: the `d × d` entries of a fixed `A`, row-major, in any
//!   line layout.
//! * `matches.csv`: `rank,j,k,p_jk` with 1-based positions in the point files.
//!
//! Pair indices are zero-based in memory and one-based on disk.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::estimation::MatchProbabilityTable;
use crate::model::{Configuration, Matrix, ModelError, Point, PoseParams};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_error(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("").trim();
        (!body.is_empty()).then_some((i + 1, body))
    })
}

fn fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect()
}

/// A parsed point file of either dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    pub dim: usize,
    pub ids: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    pub colours: Option<Vec<String>>,
}

impl PointTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_configuration<const D: usize>(&self) -> Result<Configuration<D>, IoError> {
        if self.dim != D && !self.is_empty() {
            return Err(IoError::Format(format!(
                "expected {D}-dimensional points, file has {}",
                self.dim
            )));
        }
        let points = self.coords.iter().map(|c| Point::<D>::from_column_slice(c)).collect();
        Ok(Configuration::with_colours(points, self.colours.clone())?)
    }

    /// Ids are `1..=len`.
    pub fn from_configuration<const D: usize>(config: &Configuration<D>) -> Self {
        Self {
            dim: D,
            ids: (1..=config.len()).map(|i| i.to_string()).collect(),
            coords: config.points.iter().map(|p| p.iter().copied().collect()).collect(),
            colours: config.colours.clone(),
        }
    }
}

pub fn parse_points(text: &str) -> Result<PointTable, IoError> {
    let mut table = PointTable {
        dim: 0,
        ids: Vec::new(),
        coords: Vec::new(),
        colours: None,
    };
    let mut colours: Vec<Option<String>> = Vec::new();
    let mut seen = HashSet::new();
    for (line, body) in records(text) {
        let f = fields(body);
        if table.dim == 0 {
            let numeric = f[1..].iter().take_while(|s| s.parse::<f64>().is_ok()).count();
            if numeric != 2 && numeric != 3 {
                return Err(parse_error(
                    line,
                    format!("expected an id and 2 or 3 coordinates, found {numeric} coordinates"),
                ));
            }
            table.dim = numeric;
        }
        let d = table.dim;
        if f.len() < d + 1 {
            return Err(parse_error(
                line,
                format!("expected {d} coordinates after the id, found {}", f.len() - 1),
            ));
        }
        if f.len() > d + 2 {
            return Err(parse_error(line, format!("too many fields ({}) for a {d}D file", f.len())));
        }
        let mut coords = Vec::with_capacity(d);
        for s in &f[1..=d] {
            let v: f64 = s
                .parse()
                .map_err(|_| parse_error(line, format!("coordinate '{s}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(line, format!("coordinate '{s}' is not finite")));
            }
            coords.push(v);
        }
        let colour = f.get(d + 1).map(|s| s.to_string());
        if let Some(c) = &colour {
            if c.parse::<f64>().is_ok() {
                return Err(parse_error(
                    line,
                    format!("row has {} coordinates but the file is {d}D", d + 1),
                ));
            }
        }
        if !seen.insert(f[0].to_string()) {
            return Err(parse_error(line, format!("duplicate id '{}'", f[0])));
        }
        table.ids.push(f[0].to_string());
        table.coords.push(coords);
        colours.push(colour);
    }
    let labelled = colours.iter().filter(|c| c.is_some()).count();
    if labelled == colours.len() && labelled > 0 {
        table.colours = Some(colours.into_iter().flatten().collect());
    } else if labelled > 0 {
        let first_missing = records(text)
            .zip(&colours)
            .find(|(_, c)| c.is_none())
            .map_or(0, |((l, _), _)| l);
        return Err(parse_error(
            first_missing,
            "colour labels must be given for every point or none",
        ));
    }
    Ok(table)
}

pub fn format_points(table: &PointTable) -> String {
    let mut out = String::new();
    for (i, id) in table.ids.iter().enumerate() {
        out.push_str(id);
        for v in &table.coords[i] {
            let _ = write!(out, " {v}");
        }
        if let Some(c) = &table.colours {
            let _ = write!(out, " {}", c[i]);
        }
        out.push('\n');
    }
    out
}

pub fn read_points(path: &Path) -> Result<PointTable, IoError> {
    parse_points(&read_text(path)?).map_err(|e| match e {
        IoError::Parse { line, message } => IoError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// `key = value` pairs in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, IoError> {
    records(text)
        .map(|(line, body)| {
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| parse_error(line, "expected 'key = value'"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(parse_error(line, "empty key"));
            }
            Ok((line, k.to_string(), v.trim().to_string()))
        })
        .collect()
}

fn parse_numbers(line: usize, value: &str) -> Result<Vec<f64>, IoError> {
    fields(value)
        .into_iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| parse_error(line, format!("'{s}' is not a number")))
        })
        .collect()
}

/// The `d²` entries of a matrix, row-major, laid out in any way.
pub fn parse_matrix<const D: usize>(text: &str) -> Result<Matrix<D>, IoError> {
    let mut values = Vec::new();
    let mut last_line = 0;
    for (line, body) in records(text) {
        values.extend(parse_numbers(line, body)?);
        last_line = line;
    }
    if values.len() != D * D {
        return Err(parse_error(
            last_line,
            format!("expected {} matrix entries, found {}", D * D, values.len()),
        ));
    }
    Ok(Matrix::<D>::from_row_slice(&values))
}

pub fn format_matrix<const D: usize>(a: &Matrix<D>) -> String {
    let mut out = String::new();
    for r in 0..D {
        let row: Vec<String> = (0..D).map(|c| a[(r, c)].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// True pose and matches of a synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFile {
    pub dim: usize,
    /// Row-major.
    pub a: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: f64,
    pub matches: Vec<(usize, usize)>,
}

impl TruthFile {
    pub fn from_pose<const D: usize>(pose: &PoseParams<D>, matches: Vec<(usize, usize)>) -> Self {
        Self {
            dim: D,
            a: pose.a.transpose().iter().copied().collect(),
            tau: pose.tau.iter().copied().collect(),
            sigma: pose.sigma,
            matches,
        }
    }

    pub fn pose<const D: usize>(&self) -> Result<PoseParams<D>, IoError> {
        if self.dim != D {
            return Err(IoError::Format(format!("truth file is {}D, expected {D}D", self.dim)));
        }
        Ok(PoseParams::new(
            Matrix::<D>::from_row_slice(&self.a),
            Point::<D>::from_column_slice(&self.tau),
            self.sigma,
        ))
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn format_truth(truth: &TruthFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dim = {}", truth.dim);
    let _ = writeln!(out, "sigma = {}", truth.sigma);
    let _ = writeln!(out, "tau = {}", join(&truth.tau));
    let _ = writeln!(out, "a = {}", join(&truth.a));
    for (j, k) in &truth.matches {
        let _ = writeln!(out, "match = {} {}", j + 1, k + 1);
    }
    out
}

pub fn parse_truth(text: &str) -> Result<TruthFile, IoError> {
    let (mut dim, mut sigma, mut tau, mut a) = (None, None, None, None);
    let mut matches = Vec::new();
    for (line, key, value) in parse_key_values(text)? {
        match key.as_str() {
            "dim" => {
                dim = Some(value.parse::<usize>().map_err(|_| parse_error(line, "bad dim"))?)
            }
            "sigma" => {
                sigma = Some(value.parse::<f64>().map_err(|_| parse_error(line, "bad sigma"))?)
            }
            "tau" => tau = Some((line, parse_numbers(line, &value)?)),
            "a" => a = Some((line, parse_numbers(line, &value)?)),
            "match" => {
                let idx: Vec<usize> = fields(&value)
                    .iter()
                    .map(|s| s.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_error(line, "match needs two positive integers"))?;
                match idx[..] {
                    [j, k] if j > 0 && k > 0 => matches.push((j - 1, k - 1)),
                    _ => return Err(parse_error(line, "match needs two positive integers")),
                }
            }
            other => return Err(parse_error(line, format!("unknown key '{other}'"))),
        }
    }
    let dim = dim.ok_or_else(|| IoError::Format("truth file lacks 'dim'".into()))?;
    let (tau_line, tau) = tau.ok_or_else(|| IoError::Format("truth file lacks 'tau'".into()))?;
    let (a_line, a) = a.ok_or_else(|| IoError::Format("truth file lacks 'a'".into()))?;
    if tau.len() != dim {
        return Err(parse_error(tau_line, format!("tau needs {dim} entries")));
    }
    if a.len() != dim * dim {
        return Err(parse_error(a_line, format!("a needs {} entries", dim * dim)));
    }
    Ok(TruthFile {
        dim,
        a,
        tau,
        sigma: sigma.ok_or_else(|| IoError::Format("truth file lacks 'sigma'".into()))?,
        matches,
    })
}

/// One row of `matches.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRow {
    pub rank: usize,
    pub j: usize,
    pub k: usize,
    pub p: f64,
}

pub const MATCHES_HEADER: &str = "rank,j,k,p_jk";

/// Pairs with non-zero probability, most probable first.
pub fn format_matches_csv(table: &MatchProbabilityTable) -> String {
    let mut out = String::from(MATCHES_HEADER);
    out.push('\n');
    for (rank, (j, k, p)) in table.ranked().into_iter().filter(|r| r.2 > 0.0).enumerate() {
        let _ = writeln!(out, "{},{},{},{}", rank + 1, j + 1, k + 1, p);
    }
    out
}

pub fn parse_matches_csv(text: &str) -> Result<Vec<MatchRow>, IoError> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (line, body) in records(text) {
        if !header_seen {
            if body.replace(' ', "") != MATCHES_HEADER {
                return Err(parse_error(line, format!("expected header '{MATCHES_HEADER}'")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = body.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(parse_error(line, "expected 4 columns"));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| parse_error(line, format!("'{s}' is not a positive integer")))
        };
        let p: f64 = f[3]
            .parse()
            .map_err(|_| parse_error(line, format!("'{}' is not a number", f[3])))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(parse_error(line, "probability outside [0, 1]"));
        }
        rows.push(MatchRow {
            rank: int(f[0])?,
            j: int(f[1])? - 1,
            k: int(f[2])? - 1,
            p,
        });
    }
    Ok(rows)
}

/// Dense table from sparse rows; sizes default to the largest index seen.
pub fn table_from_rows(rows: &[MatchRow], m: Option<usize>, n: Option<usize>) -> MatchProbabilityTable {
    let m = m.unwrap_or_else(|| rows.iter().map(|r| r.j + 1).max().unwrap_or(0));
    let n = n.unwrap_or_else(|| rows.iter().map(|r| r.k + 1).max().unwrap_or(0));
    let mut table = MatchProbabilityTable::from_rows(&vec![vec![0.0; n]; m]);
    for r in rows {
        table.set(r.j, r.k, r.p);
    }
    table
}
