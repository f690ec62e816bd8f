//! Feedback controls extracted from a solved field, and the admissible-control wrapper.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb::{min_hamiltonian, GridSpec, ValueField};
use crate::linalg::Vector;
use crate::model::{Coefficients, ControlSet};

/// Nodes this close to the boundary copy the nearest node further in.
pub const BOUNDARY_LAYERS: usize = 2;

/// Tabulated minimizer of the smoothed Hamiltonian on the field's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicy {
    grid: GridSpec,
    table: Vec<f64>,
}

fn interior_index(i: usize, nx: usize) -> usize {
    if nx <= 2 * BOUNDARY_LAYERS {
        i
    } else {
        i.clamp(BOUNDARY_LAYERS, nx - 1 - BOUNDARY_LAYERS)
    }
}

/// Argmin of the Hamiltonian at every node of `field`.
pub fn extract_policy<C: Coefficients + ?Sized>(field: &ValueField, c: &C, controls: &ControlSet) -> FeedbackPolicy {
    let grid = field.grid().clone();
    let n = grid.n_nodes();
    let mut table = Vec::with_capacity((grid.nt() + 1) * n);
    for level in 0..=grid.nt() {
        let row: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let ij = grid.unravel(idx);
                let mut inner = ij;
                for k in 0..grid.dim() {
                    inner[k] = interior_index(ij[k], grid.nx());
                }
                let source = grid.ravel(inner);
                let jet = field.node_jet(level, source);
                min_hamiltonian(c, &grid.node(source), jet.value, &jet.grad, &jet.hess, controls).1
            })
            .collect();
        table.extend(row);
    }
    FeedbackPolicy { grid, table }
}

impl FeedbackPolicy {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn at_node(&self, level: usize, idx: usize) -> f64 {
        self.table[level * self.grid.n_nodes() + idx]
    }

    /// Nearest time level and nearest node, with `x` clamped to the box.
    pub fn lookup(&self, t: f64, x: &Vector) -> f64 {
        let g = &self.grid;
        let level = (((t - g.t0()) / g.dt()).round().max(0.0) as usize).min(g.nt());
        let h = g.h();
        let lo = g.x_lo();
        let mut ij = [0usize; 2];
        for k in 0..g.dim() {
            let s = ((x[k] - lo[k]) / h[k]).round();
            ij[k] = (s.max(0.0) as usize).min(g.nx() - 1);
        }
        self.at_node(level, g.ravel(ij))
    }

    /// `t,x,u` rows (`t,x1,x2,u` when `d = 2`).
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::from(if g.dim() == 1 { "t,x,u\n" } else { "t,x1,x2,u\n" });
        for level in 0..=g.nt() {
            let t = g.time(level);
            for idx in 0..g.n_nodes() {
                let x = g.node(idx);
                write!(out, "{t:.16e}").expect("string write");
                for v in x.as_slice() {
                    write!(out, ",{v:.16e}").expect("string write");
                }
                writeln!(out, ",{:.16e}", self.at_node(level, idx)).expect("string write");
            }
        }
        out
    }

    /// Reads a table written by [`FeedbackPolicy::to_csv`]; every entry must lie in `controls`.
    pub fn from_csv(text: &str, origin: &Path, controls: &ControlSet) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty policy file".into()))?;
        let d = match header.trim() {
            "t,x,u" => 1,
            "t,x1,x2,u" => 2,
            other => return Err(err(1, format!("unexpected header `{other}`"))),
        };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| err(i + 1, format!("`{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != d + 2 {
                return Err(err(i + 1, format!("expected {} columns", d + 2)));
            }
            if !controls.contains(row[d + 1]) {
                return Err(err(i + 1, format!("control {} is not admissible", row[d + 1])));
            }
            rows.push(row);
        }
        let first_time = rows.first().ok_or_else(|| err(2, "no rows".into()))?[0];
        let per_level = rows.iter().take_while(|r| r[0] == first_time).count();
        let nx = if d == 1 { per_level } else { (per_level as f64).sqrt().round() as usize };
        if nx.pow(d as u32) != per_level || rows.len() % per_level != 0 || rows.len() / per_level < 2 {
            return Err(err(2, "rows do not form a complete grid".into()));
        }
        let nt = rows.len() / per_level - 1;
        let lo = Vector::from_slice(&rows[0][1..=d]);
        let hi = Vector::from_slice(&rows[per_level - 1][1..=d]);
        let grid = GridSpec::new(lo, hi, nx, nt, first_time, rows[rows.len() - 1][0]).map_err(|e| err(2, e.to_string()))?;
        Ok(FeedbackPolicy {
            grid,
            table: rows.iter().map(|r| r[d + 1]).collect(),
        })
    }
}

/// Piecewise-constant function of time: `values[i]` on `[starts[i], starts[i + 1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    starts: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(pieces: &[(f64, f64)]) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::invalid("a step function needs at least one piece"));
        }
        if pieces.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::invalid("step start times must be strictly increasing"));
        }
        Ok(StepFunction {
            starts: pieces.iter().map(|p| p.0).collect(),
            values: pieces.iter().map(|p| p.1).collect(),
        })
    }

    /// Value on the last piece starting at or before `t` (the first piece before it starts).
    pub fn at(&self, t: f64) -> f64 {
        let k = self.starts.partition_point(|&s| s <= t);
        self.values[k.saturating_sub(1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }
}

/// A strict control: feedback, constant, or open loop.
#[derive(Clone, Debug, PartialEq)]
pub enum AdmissibleControl {
    Feedback(Arc<FeedbackPolicy>),
    Constant(f64),
    OpenLoop(StepFunction),
}

impl AdmissibleControl {
    pub fn constant(u: f64, controls: &ControlSet) -> Result<Self> {
        let c = AdmissibleControl::Constant(u);
        c.check(controls)?;
        Ok(c)
    }

    /// Verifies that every value the control can emit lies in `controls`.
    pub fn check(&self, controls: &ControlSet) -> Result<()> {
        let bad = match self {
            AdmissibleControl::Constant(u) => (!controls.contains(*u)).then_some(*u),
            AdmissibleControl::OpenLoop(s) => s.values().iter().copied().find(|u| !controls.contains(*u)),
            AdmissibleControl::Feedback(p) => p.table().iter().copied().find(|u| !controls.contains(*u)),
        };
        match bad {
            Some(u) => Err(Error::invalid(format!("control value {u} is not admissible"))),
            None => Ok(()),
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self, AdmissibleControl::Feedback(_))
    }

    /// Short label used in cost tables.
    pub fn descriptor(&self) -> String {
        match self {
            AdmissibleControl::Feedback(_) => "feedback".to_string(),
            AdmissibleControl::Constant(u) => format!("constant:{u}"),
            AdmissibleControl::OpenLoop(s) => {
                let parts: Vec<String> = s.starts().iter().zip(s.values()).map(|(a, b)| format!("{a}>{b}")).collect();
                format!("open-loop:{}", parts.join("|"))
            }
        }
    }
}

/// The control value at `(t, x)`.
pub fn control_at(control: &AdmissibleControl, t: f64, x: &Vector) -> f64 {
    match control {
        AdmissibleControl::Constant(u) => *u,
        AdmissibleControl::OpenLoop(s) => s.at(t),
        AdmissibleControl::Feedback(p) => p.lookup(t, x),
    }
}
