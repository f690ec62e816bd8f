//! Experiment configuration: a flat `key = value` file mirroring the CLI flags.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hjb::{BoundaryMode, GridSpec};
use crate::linalg::Vector;
use crate::model::{preset, ProblemSpec};
use crate::mollify::DEFAULT_RESOLUTION;

/// A probe point `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub x: Vector,
}

impl Probe {
    pub fn new(t: f64, x: Vector) -> Self {
        Probe { t, x }
    }

    /// Parses `t,x` or `t,x1,x2`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts = parse_floats(s)?;
        if !(2..=3).contains(&parts.len()) {
            return Err(Error::invalid(format!("probe `{s}` must be `t,x` or `t,x1,x2`")));
        }
        Ok(Probe {
            t: parts[0],
            x: Vector::from_slice(&parts[1..]),
        })
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("`{p}` is not a number")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub deltas: Vec<f64>,
    pub grid_nx: usize,
    /// Half-width of the truncation box `[-box, box]^d`.
    pub box_half_width: f64,
    /// Time levels of the HJB grid; the smallest stable count when unset.
    pub nt: Option<usize>,
    pub boundary: BoundaryMode,
    pub kernel_resolution: usize,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub probes: Vec<Probe>,
    pub out: PathBuf,
    /// Number of constant controls in the optimality sweep.
    pub sweep: usize,
    pub basis_degree: usize,
    pub picard_max_iter: usize,
    pub picard_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: "B2".to_string(),
            deltas: vec![0.4, 0.2, 0.1, 0.05],
            grid_nx: 241,
            box_half_width: 6.0,
            nt: None,
            boundary: BoundaryMode::default(),
            kernel_resolution: DEFAULT_RESOLUTION,
            paths: 10_000,
            steps: 50,
            seed: 1,
            probes: vec![Probe::new(0.0, Vector::scalar(0.0))],
            out: PathBuf::from("out"),
            sweep: 21,
            basis_degree: crate::simulate::DEFAULT_BASIS_DEGREE,
            picard_max_iter: 20,
            picard_tol: 1e-4,
        }
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Keys are the CLI flag names without dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = || Error::invalid(format!("bad value `{value}` for `{key}`"));
        match key.trim() {
            "preset" => self.preset = value.to_string(),
            "delta" => self.deltas = parse_floats(value)?,
            "grid-nx" => self.grid_nx = value.parse().map_err(|_| bad())?,
            "box" => self.box_half_width = value.parse().map_err(|_| bad())?,
            "nt" => self.nt = Some(value.parse().map_err(|_| bad())?),
            "boundary" => self.boundary = BoundaryMode::from_name(value)?,
            "kernel-resolution" => self.kernel_resolution = value.parse().map_err(|_| bad())?,
            "paths" => self.paths = value.parse().map_err(|_| bad())?,
            "steps" => self.steps = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "probe" => {
                self.probes = value
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(Probe::parse)
                    .collect::<Result<_>>()?
            }
            "out" => self.out = PathBuf::from(value),
            "sweep" => self.sweep = value.parse().map_err(|_| bad())?,
            "basis-degree" => self.basis_degree = value.parse().map_err(|_| bad())?,
            "picard-max-iter" => self.picard_max_iter = value.parse().map_err(|_| bad())?,
            "picard-tol" => self.picard_tol = value.parse().map_err(|_| bad())?,
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Reads settings from `text` on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            cfg.set(k, v).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let probes: Vec<String> = self
            .probes
            .iter()
            .map(|p| {
                let mut s = p.t.to_string();
                for v in p.x.as_slice() {
                    s.push(',');
                    s.push_str(&v.to_string());
                }
                s
            })
            .collect();
        let mut out = format!(
            "preset = {}\ndelta = {}\ngrid-nx = {}\nbox = {}\n",
            self.preset,
            join(&self.deltas),
            self.grid_nx,
            self.box_half_width
        );
        if let Some(nt) = self.nt {
            out.push_str(&format!("nt = {nt}\n"));
        }
        out.push_str(&format!(
            "boundary = {}\nkernel-resolution = {}\npaths = {}\nsteps = {}\nseed = {}\nprobe = {}\nout = {}\n\
             sweep = {}\nbasis-degree = {}\npicard-max-iter = {}\npicard-tol = {}\n",
            self.boundary.name(),
            self.kernel_resolution,
            self.paths,
            self.steps,
            self.seed,
            probes.join(";"),
            self.out.display(),
            self.sweep,
            self.basis_degree,
            self.picard_max_iter,
            self.picard_tol
        ));
        out
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        preset(&self.preset)
    }

    /// Spatial grid with a single placeholder time level.
    pub fn spatial_grid(&self, dim: usize, horizon: f64) -> Result<GridSpec> {
        GridSpec::cube(dim, self.box_half_width, self.grid_nx, 1, 0.0, horizon)
    }

    /// Checks the δ list and that every probe sits inside the box with a `2h` margin.
    pub fn validate(&self, dim: usize, horizon: f64) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::invalid("at least one smoothing radius is required"));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return Err(Error::invalid("smoothing radii must lie in (0, 1]"));
        }
        if self.deltas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::invalid("smoothing radii must be strictly decreasing"));
        }
        if self.probes.is_empty() {
            return Err(Error::invalid("at least one probe point is required"));
        }
        let grid = self.spatial_grid(dim, horizon)?;
        let margin = 2.0 * grid.h().max_abs();
        for p in &self.probes {
            if p.x.dim() != dim {
                return Err(Error::invalid(format!("probe has dimension {} but the problem has {dim}", p.x.dim())));
            }
            if !(p.t >= 0.0 && p.t < horizon) || !grid.contains(&p.x, margin) {
                return Err(Error::OutOfDomain {
                    t: p.t,
                    x: p.x.as_slice().to_vec(),
                });
            }
        }
        if self.paths < 1 || self.steps < 1 || self.sweep < 1 {
            return Err(Error::invalid("paths, steps and sweep must be positive"));
        }
        Ok(())
    }
}
