//! Run configuration: documented defaults, a flat key-value config file,
//! and CLI overrides, resolved with precedence CLI > file > defaults.
//!
//! Unknown or duplicate keys in the config file are hard errors; a silent
//! typo in a parameter name would corrupt results downstream.

use crate::invariant::{MeshSpec, SolveSpec, SweepParam};
use crate::model::{LakeParams, RecyclingRate};
use crate::sde::SimConfig;
use crate::solver;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error(
        "invalid sweep spec `{0}`: expected name:start:stop:count with name in {{sigma, c, rho}}"
    )]
    BadSweep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Density,
    Sweep,
    Simulate,
    Escape,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Density => "density",
            Command::Sweep => "sweep",
            Command::Simulate => "simulate",
            Command::Escape => "escape",
            Command::Verify => "verify",
        }
    }
}

/// Fully resolved configuration of one CLI invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub params: LakeParams,
    /// Right endpoint override; `None` uses the parameter-dependent default.
    pub l: Option<f64>,
    pub n: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub sim: SimConfig,
    pub x0: f64,
    /// Escape-time sample count.
    pub samples: usize,
    /// Store every k-th state of a simulated path; 0 = choose automatically.
    pub sample_every: usize,
    pub sweep: Option<SweepRange>,
    pub mesh: MeshSpec,
    pub out: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRange {
    pub param: SweepParam,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl SweepRange {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|k| self.start + (self.stop - self.start) * k as f64 / (self.count - 1) as f64)
            .collect()
    }
}

impl RunConfig {
    pub fn solve_spec(&self) -> SolveSpec {
        SolveSpec {
            l: self.l,
            n: self.n,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Optional overrides collected from CLI flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub rate: Option<String>,
    pub rate_center: Option<f64>,
    pub rate_slope: Option<f64>,
    pub rate_scale: Option<f64>,
    pub rate_threshold: Option<f64>,
    pub l: Option<f64>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub x0: Option<f64>,
    pub samples: Option<usize>,
    pub sample_every: Option<usize>,
    pub sweep: Option<String>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

const KNOWN_KEYS: &[&str] = &[
    "b",
    "c",
    "rho",
    "sigma",
    "rate.kind",
    "rate.center",
    "rate.slope",
    "rate.scale",
    "rate.threshold",
    "l",
    "n",
    "dt",
    "horizon",
    "paths",
    "seed",
    "x0",
    "samples",
    "sample_every",
    "sweep",
    "out",
    "jobs",
];

/// Parse the flat `key = value` config file.
fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        let Some((key, value)) = stripped.split_once('=') else {
            return Err(ConfigError::Malformed {
                line,
                text: stripped.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, key });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey { line, key });
        }
    }
    Ok(map)
}

fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                msg: format!("`{v}`: {e}"),
            })
        })
        .transpose()
}

fn get_usize(map: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<usize>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                msg: format!("`{v}`: {e}"),
            })
        })
        .transpose()
}

fn get_u64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<u64>, ConfigError> {
    map.get(key)
        .map(|v| {
            v.parse::<u64>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                msg: format!("`{v}`: {e}"),
            })
        })
        .transpose()
}

fn parse_sweep(text: &str) -> Result<SweepRange, ConfigError> {
    let parts: Vec<&str> = text.split(':').collect();
    let err = || ConfigError::BadSweep(text.to_string());
    if parts.len() != 4 {
        return Err(err());
    }
    let param = SweepParam::parse(parts[0]).ok_or_else(err)?;
    let start: f64 = parts[1].parse().map_err(|_| err())?;
    let stop: f64 = parts[2].parse().map_err(|_| err())?;
    let count: usize = parts[3].parse().map_err(|_| err())?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(err());
    }
    Ok(SweepRange {
        param,
        start,
        stop,
        count,
    })
}

fn resolve_rate(
    kind: Option<&str>,
    center: Option<f64>,
    slope: Option<f64>,
    scale: Option<f64>,
    threshold: Option<f64>,
) -> Result<RecyclingRate, ConfigError> {
    match kind.unwrap_or("standard") {
        "standard" => Ok(RecyclingRate::Standard),
        "tanh" => Ok(RecyclingRate::TanhShifted {
            center: center.unwrap_or(3.0),
            slope: slope.unwrap_or(1.0),
            scale: scale.unwrap_or(1.0),
        }),
        "step" => Ok(RecyclingRate::Step {
            threshold: threshold.unwrap_or(3.0),
        }),
        other => Err(ConfigError::BadValue {
            key: "rate.kind".into(),
            msg: format!("`{other}` is not one of standard, tanh, step"),
        }),
    }
}

/// Resolve the full configuration for a command: documented defaults,
/// overridden by the config file, overridden by CLI flags.
///
/// Defaults: the flagship parameter set `(b, c, rho, sigma) =
/// (0.65, 0.5, 0.03, 0.1)` with the standard recycling rate, `n = 4000`,
/// `dt = 1e-3`, seed 7, horizon `1e4` (`2e3` for `simulate`), one path
/// (`2000` for `verify`), `1000` escape samples, output directory
/// `lake-out`.
pub fn resolve(
    command: Command,
    config_path: Option<&Path>,
    over: &Overrides,
) -> Result<RunConfig, ConfigError> {
    let file = match config_path {
        Some(p) => parse_file(p)?,
        None => BTreeMap::new(),
    };

    let rate = resolve_rate(
        over.rate
            .as_deref()
            .or(file.get("rate.kind").map(|s| s.as_str())),
        over.rate_center.or(get_f64(&file, "rate.center")?),
        over.rate_slope.or(get_f64(&file, "rate.slope")?),
        over.rate_scale.or(get_f64(&file, "rate.scale")?),
        over.rate_threshold.or(get_f64(&file, "rate.threshold")?),
    )?;

    let params = LakeParams {
        b: over.b.or(get_f64(&file, "b")?).unwrap_or(0.65),
        c: over.c.or(get_f64(&file, "c")?).unwrap_or(0.5),
        rho: over.rho.or(get_f64(&file, "rho")?).unwrap_or(0.03),
        sigma: over.sigma.or(get_f64(&file, "sigma")?).unwrap_or(0.1),
        rate,
    };

    let default_horizon = match command {
        Command::Simulate => 2e3,
        _ => 1e4,
    };
    let default_paths = match command {
        Command::Verify => 2000,
        _ => 1,
    };
    let sim = SimConfig {
        dt: over.dt.or(get_f64(&file, "dt")?).unwrap_or(1e-3),
        horizon: over
            .horizon
            .or(get_f64(&file, "horizon")?)
            .unwrap_or(default_horizon),
        seed: over.seed.or(get_u64(&file, "seed")?).unwrap_or(7),
        n_paths: over
            .paths
            .or(get_usize(&file, "paths")?)
            .unwrap_or(default_paths),
    };

    let sweep = match (&over.sweep, file.get("sweep")) {
        (Some(s), _) => Some(parse_sweep(s)?),
        (None, Some(s)) => Some(parse_sweep(s)?),
        (None, None) => None,
    };

    Ok(RunConfig {
        command,
        params,
        l: over.l.or(get_f64(&file, "l")?),
        n: over
            .n
            .or(get_usize(&file, "n")?)
            .unwrap_or(solver::DEFAULT_GRID_POINTS),
        tol: solver::DEFAULT_TOLERANCE,
        max_iter: solver::DEFAULT_MAX_ITER,
        sim,
        x0: over.x0.or(get_f64(&file, "x0")?).unwrap_or(1.0),
        samples: over
            .samples
            .or(get_usize(&file, "samples")?)
            .unwrap_or(1000),
        sample_every: over
            .sample_every
            .or(get_usize(&file, "sample_every")?)
            .unwrap_or(0),
        sweep,
        mesh: MeshSpec::default(),
        out: over
            .out
            .clone()
            .or_else(|| file.get("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("lake-out")),
        jobs: over.jobs.or(get_usize(&file, "jobs")?).unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("lake-config-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!(
            "cfg-{}.txt",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn defaults_without_file_or_flags() {
        let cfg = resolve(Command::Solve, None, &Overrides::default()).unwrap();
        assert_eq!(cfg.params.b, 0.65);
        assert_eq!(cfg.params.sigma, 0.1);
        assert_eq!(cfg.n, 4000);
        assert_eq!(cfg.sim.n_paths, 1);
        assert_eq!(cfg.out, PathBuf::from("lake-out"));
    }

    #[test]
    fn file_overrides_defaults_and_cli_overrides_file() {
        let path = write_tmp("b = 0.8\nsigma = 0.2  # noise\nrate.kind = tanh\nrate.scale = 0.5\n");
        let cfg = resolve(Command::Solve, Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.params.b, 0.8);
        assert_eq!(cfg.params.sigma, 0.2);
        assert_eq!(
            cfg.params.rate,
            RecyclingRate::TanhShifted {
                center: 3.0,
                slope: 1.0,
                scale: 0.5
            }
        );
        let over = Overrides {
            sigma: Some(0.05),
            ..Default::default()
        };
        let cfg = resolve(Command::Solve, Some(&path), &over).unwrap();
        assert_eq!(cfg.params.sigma, 0.05);
        assert_eq!(cfg.params.b, 0.8);
    }

    #[test]
    fn unknown_key_is_a_hard_error_with_line() {
        let path = write_tmp("b = 0.8\nsgima = 0.2\n");
        match resolve(Command::Solve, Some(&path), &Overrides::default()) {
            Err(ConfigError::UnknownKey { line, key }) => {
                assert_eq!(line, 2);
                assert_eq!(key, "sgima");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let path = write_tmp("b = 0.8\nb = 0.7\n");
        assert!(matches!(
            resolve(Command::Solve, Some(&path), &Overrides::default()),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
    }

    #[test]
    fn sweep_spec_parses_and_generates_values() {
        let over = Overrides {
            sweep: Some("sigma:0.1:0.4:4".into()),
            ..Default::default()
        };
        let cfg = resolve(Command::Sweep, None, &over).unwrap();
        let sweep = cfg.sweep.unwrap();
        assert_eq!(sweep.param, SweepParam::Sigma);
        let vals = sweep.values();
        assert_eq!(vals.len(), 4);
        assert!((vals[0] - 0.1).abs() < 1e-15);
        assert!((vals[3] - 0.4).abs() < 1e-15);
        assert!(matches!(
            parse_sweep("temp:0:1:4"),
            Err(ConfigError::BadSweep(_))
        ));
    }

    #[test]
    fn command_specific_defaults() {
        let v = resolve(Command::Verify, None, &Overrides::default()).unwrap();
        assert_eq!(v.sim.n_paths, 2000);
        let s = resolve(Command::Simulate, None, &Overrides::default()).unwrap();
        assert_eq!(s.sim.horizon, 2e3);
        let e = resolve(Command::Escape, None, &Overrides::default()).unwrap();
        assert_eq!(e.sim.horizon, 1e4);
        assert_eq!(e.samples, 1000);
    }
}
