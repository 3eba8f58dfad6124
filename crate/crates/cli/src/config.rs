//! Run configuration: a flat `key = value` file overlaid by command-line
//! values. Every key has a default here except the ones marked required, and
//! the fully resolved map is echoed into `summary.json` and `run.cfg`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bayes_align::io::{parse_key_values, read_text};
use bayes_align::{Hyperparams, LossSpec, Matrix, Point, SweepSchedule};

use crate::CliError;

/// `(key, default)`; `None` marks a key without a default.
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("mode", None),
    ("x", None),
    ("y", None),
    ("a", Some("")),
    ("truth", Some("")),
    ("out", Some("out")),
    ("plot", Some("false")),
    ("kappa_match", None),
    ("mu_tau", Some("")),
    ("sigma_tau", Some("20")),
    ("alpha", Some("1")),
    ("beta", Some("16")),
    ("gamma", Some("0")),
    ("delta", Some("0")),
    ("p_star", Some("0.5")),
    ("f0", Some("")),
    ("sweeps", Some("120000")),
    ("burn_in", Some("20000")),
    ("thin", Some("10")),
    ("m_updates", Some("10")),
    ("seed", Some("1")),
    ("k", Some("0.5")),
    ("starts", Some("20")),
    ("short_sweeps", Some("50000")),
    ("pilots", Some("5")),
    ("pilot_sweeps", Some("50000")),
    ("pilot_quantile", Some("0.25")),
    ("threshold", Some("")),
    ("em_iterations", Some("500")),
    ("em_starts", Some("1")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    FixedTransform,
    Rotation2d,
    Rotation3d,
}

impl Mode {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "fixed-transform" => Ok(Self::FixedTransform),
            "rotation-2d" => Ok(Self::Rotation2d),
            "rotation-3d" => Ok(Self::Rotation3d),
            other => Err(CliError::Validation(format!(
                "mode must be fixed-transform, rotation-2d or rotation-3d, not '{other}'"
            ))),
        }
    }

    pub fn samples_rotation(self) -> bool {
        self != Self::FixedTransform
    }
}

#[derive(Debug, Clone)]
pub struct MultistartConfig {
    pub starts: usize,
    pub short_sweeps: usize,
    pub pilots: usize,
    pub pilot_sweeps: usize,
    pub pilot_quantile: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub x: PathBuf,
    pub y: PathBuf,
    pub a: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
    pub plot: bool,
    pub kappa_match: f64,
    pub mu_tau: Vec<f64>,
    pub sigma_tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub p_star: f64,
    pub f0: Vec<f64>,
    pub schedule: SweepSchedule,
    pub losses: Vec<LossSpec>,
    pub multistart: MultistartConfig,
    pub em_iterations: usize,
    pub em_starts: usize,
    /// Resolved values of every key.
    pub echo: BTreeMap<String, String>,
}

/// Reads a config file into a key map, rejecting unknown or repeated keys.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = read_text(path).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut map = BTreeMap::new();
    for (line, key, value) in
        parse_key_values(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Validation(format!(
                "{} line {line}: unknown key '{key}'",
                path.display()
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Validation(format!(
                "{} line {line}: key '{key}' given twice",
                path.display()
            )));
        }
    }
    Ok(map)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Validation(format!("{key}: cannot parse '{value}'")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| number::<f64>(key, s))
        .collect()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Resolves `file` overlaid by `overrides` and validates the result.
    /// Relative paths in the file are taken relative to the file's directory.
    pub fn resolve(
        file: Option<&Path>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        if let Some(path) = file {
            let base = path.parent().unwrap_or(Path::new(""));
            for (key, value) in read_config_file(path)? {
                let value = if matches!(key.as_str(), "x" | "y" | "a" | "truth" | "out")
                    && !value.is_empty()
                    && Path::new(&value).is_relative()
                {
                    base.join(&value).to_string_lossy().into_owned()
                } else {
                    value
                };
                map.insert(key, value);
            }
        }
        for (key, value) in overrides {
            if !KEYS.iter().any(|(k, _)| k == key) {
                return Err(CliError::Validation(format!("unknown key '{key}'")));
            }
            map.insert(key.clone(), value.clone());
        }
        for (key, default) in KEYS {
            if !map.contains_key(*key) {
                match default {
                    Some(d) => {
                        map.insert(key.to_string(), d.to_string());
                    }
                    None => return Err(CliError::Validation(format!("missing required key '{key}'"))),
                }
            }
        }
        for key in ["x", "y", "a", "truth", "out"] {
            if let Some(v) = map.get_mut(key).filter(|v| !v.is_empty()) {
                if let Ok(abs) = std::path::absolute(v.as_str()) {
                    *v = abs.to_string_lossy().into_owned();
                }
            }
        }
        Self::from_map(map)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self, CliError> {
        let get = |k: &str| map[k].as_str();
        let mode = Mode::parse(get("mode"))?;
        let a = optional_path(get("a"));
        if mode == Mode::FixedTransform && a.is_none() {
            return Err(CliError::Validation(
                "fixed-transform mode requires the transform file 'a'".into(),
            ));
        }
        let plot = match get("plot") {
            "true" | "yes" | "1" => true,
            "false" | "no" | "0" => false,
            other => return Err(CliError::Validation(format!("plot: expected true or false, not '{other}'"))),
        };
        let losses = list("k", get("k"))?
            .into_iter()
            .map(|k| LossSpec::new(k).map_err(|e| CliError::Validation(format!("k: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if losses.is_empty() {
            return Err(CliError::Validation("k: at least one value is required".into()));
        }
        let threshold = match get("threshold") {
            "" => None,
            v => Some(number("threshold", v)?),
        };
        let config = Self {
            mode,
            x: PathBuf::from(get("x")),
            y: PathBuf::from(get("y")),
            a,
            truth: optional_path(get("truth")),
            out: PathBuf::from(get("out")),
            plot,
            kappa_match: number("kappa_match", get("kappa_match"))?,
            mu_tau: list("mu_tau", get("mu_tau"))?,
            sigma_tau: number("sigma_tau", get("sigma_tau"))?,
            alpha: number("alpha", get("alpha"))?,
            beta: number("beta", get("beta"))?,
            gamma: number("gamma", get("gamma"))?,
            delta: number("delta", get("delta"))?,
            p_star: number("p_star", get("p_star"))?,
            f0: list("f0", get("f0"))?,
            schedule: SweepSchedule {
                m_updates_per_sweep: number("m_updates", get("m_updates"))?,
                sample_rotation: mode.samples_rotation(),
                sweeps: number("sweeps", get("sweeps"))?,
                burn_in: number("burn_in", get("burn_in"))?,
                thin: number("thin", get("thin"))?,
                seed: number("seed", get("seed"))?,
            },
            losses,
            multistart: MultistartConfig {
                starts: number("starts", get("starts"))?,
                short_sweeps: number("short_sweeps", get("short_sweeps"))?,
                pilots: number("pilots", get("pilots"))?,
                pilot_sweeps: number("pilot_sweeps", get("pilot_sweeps"))?,
                pilot_quantile: number("pilot_quantile", get("pilot_quantile"))?,
                threshold,
            },
            em_iterations: number("em_iterations", get("em_iterations"))?,
            em_starts: number("em_starts", get("em_starts"))?,
            echo: map,
        };
        config
            .schedule
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(config)
    }

    /// Dimension implied by the mode, if it fixes one.
    pub fn mode_dimension(&self) -> Option<usize> {
        match self.mode {
            Mode::FixedTransform => None,
            Mode::Rotation2d => Some(2),
            Mode::Rotation3d => Some(3),
        }
    }

    pub fn hyperparams<const D: usize>(&self) -> Result<Hyperparams<D>, CliError> {
        let mut hyper = Hyperparams::<D>::new(self.kappa_match);
        match self.mu_tau.len() {
            0 => {}
            n if n == D => hyper.mu_tau = Point::<D>::from_column_slice(&self.mu_tau),
            n => return Err(CliError::Validation(format!("mu_tau has {n} entries, expected {D}"))),
        }
        match self.f0.len() {
            0 => {}
            n if n == D * D => hyper.f0 = Matrix::<D>::from_row_slice(&self.f0),
            n => return Err(CliError::Validation(format!("f0 has {n} entries, expected {}", D * D))),
        }
        hyper.sigma_tau = self.sigma_tau;
        hyper.alpha = self.alpha;
        hyper.beta = self.beta;
        hyper.gamma = self.gamma;
        hyper.delta = self.delta;
        hyper.p_star = self.p_star;
        hyper.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(hyper)
    }

    /// The resolved configuration in config-file syntax.
    pub fn to_config_text(&self) -> String {
        self.echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
