//! Flat `key = value` experiment files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys and repeated keys are errors. Noise is described by three
//! keys: `noise` (gaussian, laplace, exponential), `noise_scale` and, for the
//! exponential model, `exp_reading`, which says whether `noise_scale` is the
//! scale (mean) or the rate of the exponential draw.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, NoiseModel, PerturbScope};
use crate::normbound::Method;

pub const KEYS: &[&str] = &[
    "n",
    "d",
    "m",
    "q",
    "alpha",
    "delta0",
    "eta",
    "lambda_reg",
    "group",
    "noise",
    "noise_scale",
    "exp_reading",
    "grid",
    "trials",
    "seed",
    "jitter",
    "timing",
    "perturb",
    "method",
];

pub const DEFAULT_NOISE_SCALE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpReading {
    /// `noise_scale` is the mean `1/rate`.
    Scale,
    Rate,
}

/// Everything a configuration file can set.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub experiment: ExperimentConfig,
    /// Band emitted by the single-band command.
    pub method: Method,
    /// Whether the file set `seed` explicitly.
    pub seed_given: bool,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self { experiment: ExperimentConfig::default(), method: Method::Refined, seed_given: false }
    }
}

fn invalid(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("config line {line}: {msg}"))
}

fn number<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(line, format!("`{key}` expects a number, got `{value}`")))
}

fn boolean(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(line, format!("`{key}` expects true or false, got `{value}`"))),
    }
}

pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut out = FileConfig::default();
    let cfg = &mut out.experiment;
    let mut seen = BTreeSet::new();
    let mut noise_kind: Option<String> = None;
    let mut noise_scale = DEFAULT_NOISE_SCALE;
    let mut reading = ExpReading::Scale;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| invalid(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(invalid(line, format!("unknown key `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(invalid(line, format!("`{key}` given twice")));
        }
        match key {
            "n" => cfg.n = number(line, key, value)?,
            "d" => {
                cfg.d = if value.eq_ignore_ascii_case("auto") { None } else { Some(number(line, key, value)?) };
            }
            "m" => cfg.m = number(line, key, value)?,
            "q" => cfg.q = number(line, key, value)?,
            "alpha" => cfg.alpha = number(line, key, value)?,
            "delta0" => cfg.delta0 = number(line, key, value)?,
            "eta" => cfg.eta = number(line, key, value)?,
            "lambda_reg" => cfg.lambda_reg = number(line, key, value)?,
            "group" => cfg.group = value.parse().map_err(|e| invalid(line, e))?,
            "noise" => noise_kind = Some(value.to_ascii_lowercase()),
            "noise_scale" => noise_scale = number(line, key, value)?,
            "exp_reading" => {
                reading = match value.to_ascii_lowercase().as_str() {
                    "scale" => ExpReading::Scale,
                    "rate" => ExpReading::Rate,
                    _ => return Err(invalid(line, format!("`exp_reading` is scale or rate, got `{value}`"))),
                }
            }
            "grid" => cfg.grid = number(line, key, value)?,
            "trials" => cfg.trials = number(line, key, value)?,
            "seed" => {
                cfg.seed = number(line, key, value)?;
                out.seed_given = true;
            }
            "jitter" => cfg.jitter = number(line, key, value)?,
            "timing" => cfg.timing = boolean(line, key, value)?,
            "perturb" => cfg.perturb = value.parse::<PerturbScope>().map_err(|e| invalid(line, e))?,
            "method" => {
                out.method = match value.to_ascii_lowercase().as_str() {
                    "original" => Method::Original,
                    "refined" => Method::Refined,
                    _ => return Err(invalid(line, format!("`method` is original or refined, got `{value}`"))),
                }
            }
            _ => unreachable!("key list checked above"),
        }
    }

    let touched_noise = seen.contains("noise_scale") || seen.contains("exp_reading");
    if noise_kind.is_some() || touched_noise {
        cfg.noise = match noise_kind.as_deref().unwrap_or("exponential") {
            "gaussian" | "normal" => NoiseModel::Gaussian { sigma: noise_scale },
            "laplace" => NoiseModel::Laplace { location: 0.0, scale: noise_scale },
            "exponential" | "exp" => NoiseModel::CenteredExponential {
                rate: match reading {
                    ExpReading::Scale => 1.0 / noise_scale,
                    ExpReading::Rate => noise_scale,
                },
            },
            other => return Err(Error::InvalidParameter(format!("unknown noise model `{other}`"))),
        };
    }
    cfg.validate()?;
    Ok(out)
}

/// Renders a configuration that [`parse_config`] reads back unchanged.
pub fn render_config(fc: &FileConfig) -> String {
    let c = &fc.experiment;
    let mut out = String::new();
    let _ = writeln!(out, "n = {}", c.n);
    let _ = writeln!(out, "d = {}", c.d.map_or("auto".to_string(), |d| d.to_string()));
    let _ = writeln!(out, "m = {}\nq = {}", c.m, c.q);
    let _ = writeln!(out, "alpha = {}\ndelta0 = {}\neta = {}\nlambda_reg = {}", c.alpha, c.delta0, c.eta, c.lambda_reg);
    let _ = writeln!(out, "group = {}", c.group.name());
    match c.noise {
        NoiseModel::Gaussian { sigma } => {
            let _ = writeln!(out, "noise = gaussian\nnoise_scale = {sigma}");
        }
        NoiseModel::Laplace { scale, .. } => {
            let _ = writeln!(out, "noise = laplace\nnoise_scale = {scale}");
        }
        NoiseModel::CenteredExponential { rate } => {
            let _ = writeln!(out, "noise = exponential\nnoise_scale = {rate}\nexp_reading = rate");
        }
    }
    let _ = writeln!(out, "grid = {}\ntrials = {}\nseed = {}\njitter = {}", c.grid, c.trials, c.seed, c.jitter);
    let _ = writeln!(out, "timing = {}\nperturb = {}", c.timing, c.perturb.name());
    let _ = writeln!(out, "method = {}", if fc.method == Method::Original { "original" } else { "refined" });
    out
}
