//! Relaxed controls on `U x B_C(0)`, strict embeddings, and the chattering reduction.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb::ValueField;
use crate::linalg::Vector;
use crate::model::{Coefficients, ControlSet, SamplingBox};
use crate::rng::{substream, Channel};
use crate::simulate::RelaxedAction;

/// Tolerance on the total mass of a measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default ball radius: this multiple of the largest gradient of the solved field.
pub const RADIUS_FACTOR: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub u: f64,
    pub w: Vector,
}

/// A finitely supported probability measure on `U x R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::invalid("a measure needs one weight per atom and at least one atom"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("measure weights must be non-negative"));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("measure weights sum to {mass}, not 1")));
        }
        let d = atoms[0].w.dim();
        if atoms.iter().any(|a| a.w.dim() != d) {
            return Err(Error::invalid("atoms have mixed dimensions"));
        }
        Ok(DiscreteMeasure { atoms, weights })
    }

    pub fn dirac(u: f64, w: Vector) -> Self {
        DiscreteMeasure {
            atoms: vec![Atom { u, w }],
            weights: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn check_support(&self, controls: &ControlSet, radius: f64) -> Result<()> {
        for a in &self.atoms {
            if !controls.contains(a.u) {
                return Err(Error::invalid(format!("atom control {} is not admissible", a.u)));
            }
            if a.w.norm() > radius {
                return Err(Error::OutsideBall {
                    w: a.w.as_slice().to_vec(),
                    radius,
                });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant measure-valued control: `measures[k]` on `[times[k], times[k + 1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedControlMeasure {
    times: Vec<f64>,
    measures: Vec<DiscreteMeasure>,
    radius: f64,
}

impl RelaxedControlMeasure {
    pub fn new(times: Vec<f64>, measures: Vec<DiscreteMeasure>, radius: f64, controls: &ControlSet) -> Result<Self> {
        if times.len() != measures.len() + 1 || measures.is_empty() {
            return Err(Error::invalid("need one measure per time cell"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("ball radius must be positive"));
        }
        for m in &measures {
            m.check_support(controls, radius)?;
        }
        Ok(RelaxedControlMeasure {
            times,
            measures,
            radius,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Measure active at time `t`.
    pub fn at(&self, t: f64) -> &DiscreteMeasure {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        &self.measures[k.min(self.measures.len() - 1)]
    }

    /// `t,atom-index,u,w...,weight` rows.
    pub fn to_csv(&self) -> String {
        let d = self.measures[0].atoms[0].w.dim();
        let w_cols = if d == 1 { "w".to_string() } else { "w1,w2".to_string() };
        let mut out = format!("t,atom-index,u,{w_cols},weight\n");
        for (k, m) in self.measures.iter().enumerate() {
            for (i, (a, p)) in m.atoms.iter().zip(&m.weights).enumerate() {
                write!(out, "{:.16e},{i},{:.16e}", self.times[k], a.u).expect("string write");
                for v in a.w.as_slice() {
                    write!(out, ",{v:.16e}").expect("string write");
                }
                writeln!(out, ",{p:.16e}").expect("string write");
            }
        }
        out
    }
}

/// Dirac measures at `(u(t_k), w(t_k))` on each cell of `time_grid`.
pub fn embed_strict(
    u: impl Fn(f64) -> f64,
    w: impl Fn(f64) -> Vector,
    time_grid: &[f64],
    radius: f64,
    controls: &ControlSet,
) -> Result<RelaxedControlMeasure> {
    if time_grid.len() < 2 {
        return Err(Error::invalid("time grid needs at least two points"));
    }
    let measures = time_grid[..time_grid.len() - 1]
        .iter()
        .map(|&t| DiscreteMeasure::dirac(u(t), w(t)))
        .collect();
    RelaxedControlMeasure::new(time_grid.to_vec(), measures, radius, controls)
}

/// `RADIUS_FACTOR` times the largest gradient of `field`.
pub fn default_radius(field: &ValueField) -> f64 {
    RADIUS_FACTOR * field.gradient_bound()
}

/// Bound `2 C sup|sigma|` on the reduced diffusion coefficient.
pub fn theta_bound(radius: f64, sup_sigma: f64) -> f64 {
    2.0 * radius * sup_sigma
}

/// A single strict action reproducing a measure's drift and diffusion barycenter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChatteringResult {
    pub u_bar: f64,
    pub w_bar: Vector,
    pub theta_bar: f64,
    /// Mismatch of the `(b, f)` barycenter equations at `u_bar`.
    pub residual: f64,
    /// `sum p_i w_i a w_i^T - w_bar a w_bar^T` with `a = sigma sigma^T`.
    pub alpha: f64,
    /// The same quantity as `sum p_i |(w_i - w_bar) sigma|^2`.
    pub alpha_spread: f64,
}

impl From<ChatteringResult> for RelaxedAction {
    fn from(r: ChatteringResult) -> Self {
        RelaxedAction {
            u: r.u_bar,
            w: r.w_bar,
            theta: r.theta_bar,
        }
    }
}

/// Replaces `mu` at `(x, y)` by `(u_bar, w_bar, theta_bar)`. The control is found by
/// grid search; a positive residual means the convexity hypothesis fails at `(x, y)`.
pub fn chattering_reduce<C: Coefficients + ?Sized>(mu: &DiscreteMeasure, x: &Vector, y: f64, c: &C) -> ChatteringResult {
    let d = x.dim();
    let sigma = c.diffusion(x, y);
    let a = sigma.gram();
    let drift = c.prepared_drift(x, y);
    let mut w_bar = Vector::zeros(d);
    let mut b_bar = Vector::zeros(d);
    let mut f_bar = 0.0;
    let mut second = 0.0;
    for (atom, &p) in mu.atoms.iter().zip(&mu.weights) {
        w_bar = w_bar + atom.w * p;
        b_bar = b_bar + drift.at(atom.u) * p;
        f_bar += p * c.driver(x, y, &atom.w.row_times(&sigma), atom.u);
        second += p * a.quad_form(&atom.w);
    }
    let alpha = second - a.quad_form(&w_bar);
    let alpha_spread = mu
        .atoms
        .iter()
        .zip(&mu.weights)
        .map(|(atom, &p)| {
            let v = (atom.w - w_bar).row_times(&sigma);
            p * v.dot(&v)
        })
        .sum();
    let driver = c.prepared_driver(x, y, &w_bar.row_times(&sigma));
    let mut best = (f64::INFINITY, c.controls().grid()[0]);
    for &u in c.controls().grid() {
        let r = (drift.at(u) - b_bar).norm().max((driver.at(u) - f_bar).abs());
        if r < best.0 {
            best = (r, u);
        }
    }
    ChatteringResult {
        u_bar: best.1,
        w_bar,
        theta_bar: alpha.max(0.0).sqrt(),
        residual: best.0,
        alpha,
        alpha_spread,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub x: Vector,
    pub y: f64,
    pub n_atoms: usize,
    pub residual: f64,
    pub alpha: f64,
    pub theta_bar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexityAudit {
    pub rows: Vec<AuditRow>,
    pub tol: f64,
    pub max_residual: f64,
    pub mean_residual: f64,
    /// Fraction of reductions with residual above `tol`.
    pub fraction_exceeding: f64,
}

impl ConvexityAudit {
    pub fn passed(&self) -> bool {
        self.fraction_exceeding == 0.0
    }

    /// `x,y,n_atoms,residual,alpha,theta_bar` rows.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(1, |r| r.x.dim());
        let mut out = String::from(if d == 1 { "x,y" } else { "x1,x2,y" });
        out.push_str(",n_atoms,residual,alpha,theta_bar\n");
        for r in &self.rows {
            for v in r.x.as_slice() {
                write!(out, "{v:.16e},").expect("string write");
            }
            writeln!(
                out,
                "{:.16e},{},{:.16e},{:.16e},{:.16e}",
                r.y, r.n_atoms, r.residual, r.alpha, r.theta_bar
            )
            .expect("string write");
        }
        out
    }
}

/// Random two- and three-atom measure with controls from the grid and `|w| <= radius`.
pub fn random_measure(rng: &mut impl Rng, controls: &ControlSet, dim: usize, radius: f64) -> DiscreteMeasure {
    let n = rng.random_range(2..=3);
    let grid = controls.grid();
    let atoms: Vec<Atom> = (0..n)
        .map(|_| {
            let u = grid[rng.random_range(0..grid.len())];
            let w = loop {
                let mut w = Vector::zeros(dim);
                for k in 0..dim {
                    w[k] = rng.random_range(-radius..=radius);
                }
                if w.norm() <= radius {
                    break w;
                }
            };
            Atom { u, w }
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let head: f64 = weights[..n - 1].iter().sum();
    weights[n - 1] = 1.0 - head;
    DiscreteMeasure { atoms, weights }
}

/// Runs the reduction on every pair of `n_measures` random measures and `n_points`
/// random states from the audit box.
pub fn audit_convexity<C: Coefficients + ?Sized>(
    c: &C,
    n_measures: usize,
    n_points: usize,
    seed: u64,
    tol: f64,
    radius: f64,
) -> Result<ConvexityAudit> {
    if n_measures < 1 || n_points < 1 {
        return Err(Error::invalid("the convexity audit needs at least one measure and one point"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("ball radius must be positive"));
    }
    let d = c.dim();
    let bx = SamplingBox::default();
    let measures: Vec<DiscreteMeasure> = (0..n_measures)
        .map(|i| random_measure(&mut substream(seed, Channel::Measures, i as u64), c.controls(), d, radius))
        .collect();
    let points: Vec<(Vector, f64)> = (0..n_points)
        .map(|j| {
            let mut rng = substream(seed, Channel::StatePoints, j as u64);
            let mut x = Vector::zeros(d);
            for k in 0..d {
                x[k] = rng.random_range(-bx.x..=bx.x);
            }
            (x, rng.random_range(-bx.y..=bx.y))
        })
        .collect();
    let rows: Vec<AuditRow> = (0..n_points * n_measures)
        .into_par_iter()
        .map(|k| {
            let (x, y) = points[k / n_measures];
            let mu = &measures[k % n_measures];
            let r = chattering_reduce(mu, &x, y, c);
            AuditRow {
                x,
                y,
                n_atoms: mu.len(),
                residual: r.residual,
                alpha: r.alpha,
                theta_bar: r.theta_bar,
            }
        })
        .collect();
    let exceeding = rows.iter().filter(|r| r.residual > tol).count();
    let max_residual = rows.iter().fold(0.0f64, |m, r| m.max(r.residual));
    let mean_residual = rows.iter().map(|r| r.residual).sum::<f64>() / rows.len() as f64;
    Ok(ConvexityAudit {
        fraction_exceeding: exceeding as f64 / rows.len() as f64,
        rows,
        tol,
        max_residual,
        mean_residual,
    })
}
