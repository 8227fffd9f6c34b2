//! Plot-ready CSV tables and JSON sidecars for every workflow, plus the run
//! manifest. Floats are written in shortest round-trip form, so re-running a
//! command with the same resolved config reproduces the files byte for byte.

use crate::config::RunConfig;
use crate::invariant::{InvariantDensity, SweepResult, TailDiagnostics};
use crate::model::{DerivedConstants, LakeParams};
use crate::sde::{EscapeSample, McEstimate, PathSample, SimConfig};
use crate::solver::ValueSolution;
use serde::Serialize;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub type IoResult<T> = std::io::Result<T>;

fn create(path: &Path) -> IoResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// `x,V,dV,policy` per node; the last row carries the asymptotic slope.
pub fn write_solution_csv(path: &Path, s: &ValueSolution) -> IoResult<()> {
    let mut w = create(path)?;
    writeln!(w, "x,V,dV,policy")?;
    let slopes = s.forward_slopes();
    let curve = s.policy_curve();
    let n = s.grid().n();
    for i in 0..=n {
        let (dv, u) = if i < n {
            (slopes[i], s.policy()[i])
        } else {
            let vp = curve.vprime(s.grid().l());
            (vp, -1.0 / vp)
        };
        writeln!(w, "{},{},{},{}", s.grid().x(i), s.v()[i], dv, u)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct GridSummary {
    l: f64,
    n: usize,
    dx: f64,
}

#[derive(Serialize)]
struct SolutionSummary<'a> {
    params: &'a LakeParams,
    warnings: &'a [String],
    grid: GridSummary,
    residual_norm: f64,
    newton_iters: usize,
    derived: DerivedConstants,
}

pub fn write_solution_json(path: &Path, s: &ValueSolution) -> IoResult<()> {
    write_json(
        path,
        &SolutionSummary {
            params: s.params().params(),
            warnings: s.params().warnings(),
            grid: GridSummary {
                l: s.grid().l(),
                n: s.grid().n(),
                dx: s.grid().dx(),
            },
            residual_norm: s.residual_norm(),
            newton_iters: s.newton_iters(),
            derived: s.params().derived(),
        },
    )
}

/// `x,f,F,I` per mesh point.
pub fn write_density_csv(path: &Path, d: &InvariantDensity) -> IoResult<()> {
    let mut w = create(path)?;
    writeln!(w, "x,f,F,I")?;
    for k in 0..d.xs().len() {
        writeln!(
            w,
            "{},{},{},{}",
            d.xs()[k],
            d.f()[k],
            d.cdf()[k],
            d.invariant()[k]
        )?;
    }
    w.flush()
}

#[derive(Serialize)]
struct DensitySummary<'a> {
    mesh: &'a crate::invariant::MeshSpec,
    points: usize,
    ln_z: f64,
    modes: &'a [f64],
    antimodes: &'a [f64],
    /// Leftmost attractor (clean regime); labels are metadata only.
    oligotrophic_attractor: Option<f64>,
    /// Rightmost attractor (turbid regime).
    eutrophic_attractor: Option<f64>,
    tail: &'a TailDiagnostics,
}

pub fn write_density_json(path: &Path, d: &InvariantDensity) -> IoResult<()> {
    write_json(
        path,
        &DensitySummary {
            mesh: d.mesh_spec(),
            points: d.xs().len(),
            ln_z: d.ln_z(),
            modes: d.modes(),
            antimodes: d.antimodes(),
            oligotrophic_attractor: d.modes().first().copied(),
            eutrophic_attractor: d.modes().last().copied(),
            tail: d.tail(),
        },
    )
}

/// `param,value,kind,location`, one row per located extremum.
pub fn write_sweep_csv(path: &Path, sweep: &SweepResult) -> IoResult<()> {
    let mut w = create(path)?;
    writeln!(w, "param,value,kind,location")?;
    let name = sweep.param.name();
    for point in &sweep.points {
        for &m in &point.modes {
            writeln!(w, "{},{},mode,{}", name, point.value, m)?;
        }
        for &a in &point.antimodes {
            writeln!(w, "{},{},antimode,{}", name, point.value, a)?;
        }
    }
    w.flush()
}

pub fn write_sweep_json(path: &Path, sweep: &SweepResult) -> IoResult<()> {
    write_json(path, sweep)
}

/// `t,x` per stored sample.
pub fn write_path_csv(path: &Path, p: &PathSample) -> IoResult<()> {
    let mut w = create(path)?;
    writeln!(w, "t,x")?;
    for (t, x) in p.times.iter().zip(&p.states) {
        writeln!(w, "{t},{x}")?;
    }
    w.flush()
}

#[derive(Serialize)]
struct PathSummary<'a> {
    params: &'a LakeParams,
    cfg: &'a SimConfig,
    x0: f64,
    sample_every: usize,
    stored: usize,
    min: f64,
    max: f64,
}

pub fn write_path_json(
    path: &Path,
    p: &PathSample,
    cfg: &SimConfig,
    x0: f64,
    sample_every: usize,
) -> IoResult<()> {
    let min = p.states.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = p.states.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    write_json(
        path,
        &PathSummary {
            params: &p.params,
            cfg,
            x0,
            sample_every,
            stored: p.states.len(),
            min,
            max,
        },
    )
}

/// `sample,time,normalized,censored`; censored rows carry the horizon as
/// time and an empty normalized column.
pub fn write_escape_csv(path: &Path, e: &EscapeSample) -> IoResult<()> {
    let mut w = create(path)?;
    writeln!(w, "sample,time,normalized,censored")?;
    for (i, sample) in e.samples.iter().enumerate() {
        match sample {
            Some(t) => writeln!(w, "{i},{t},{},0", t / e.mean)?,
            None => writeln!(w, "{i},{},,1", e.horizon)?,
        }
    }
    w.flush()
}

#[derive(Serialize)]
struct EscapeSummary<'a> {
    cfg: &'a SimConfig,
    x_minus: f64,
    x_plus: f64,
    samples: usize,
    censored: usize,
    mean: f64,
    stderr: f64,
    ks_statistic: f64,
}

pub fn write_escape_json(path: &Path, e: &EscapeSample, cfg: &SimConfig) -> IoResult<()> {
    let n = e.raw_times.len() as f64;
    let var = if e.raw_times.len() > 1 {
        e.raw_times
            .iter()
            .map(|t| (t - e.mean) * (t - e.mean))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    write_json(
        path,
        &EscapeSummary {
            cfg,
            x_minus: e.x_minus,
            x_plus: e.x_plus,
            samples: e.samples.len(),
            censored: e.censored,
            mean: e.mean,
            stderr: (var / n).sqrt(),
            ks_statistic: e.ks_statistic,
        },
    )
}

#[derive(Serialize)]
pub struct McSummary<'a> {
    pub label: &'a str,
    pub cfg: &'a SimConfig,
    pub x0: f64,
    pub mc: McEstimate,
    pub solver_value: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    outputs: Vec<String>,
    timings: Vec<Timing>,
}

#[derive(Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Every emitted file is listed here; no orphan outputs.
pub fn write_manifest(
    dir: &Path,
    cfg: &RunConfig,
    outputs: &[PathBuf],
    timings: Vec<Timing>,
) -> IoResult<PathBuf> {
    let path = dir.join("manifest.json");
    let names = outputs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect();
    write_json(
        &path,
        &Manifest {
            command: cfg.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            outputs: names,
            timings,
        },
    )?;
    Ok(path)
}
