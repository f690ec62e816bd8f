//! Convergence, coupling and optimality studies, and the command-line front end.

mod cli;
mod config;

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

pub use cli::cli;
pub use config::{ExperimentConfig, Probe};

use crate::error::{Error, Result};
use crate::hjb::{required_nt, solve_hjb_with, GridSpec, ValueField};
use crate::linalg::Vector;
use crate::model::{Coefficients, ProblemSpec};
use crate::mollify::{smooth_coefficients, SmoothedCoefficients};
use crate::policy::{extract_policy, AdmissibleControl, FeedbackPolicy};
use crate::rng::{substream, Channel};
use crate::simulate::{solve_coupled_picard, SimConfig};

/// Least-squares line through `(ln x, ln y)`; returns `(slope, exp(intercept))`.
/// Points with a non-positive coordinate are skipped; fewer than two give NaN.
pub fn loglog_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    (slope, (my - slope * mx).exp())
}

fn x_columns(d: usize, prefix: &str) -> String {
    if d == 1 {
        prefix.to_string()
    } else {
        (1..=d).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",")
    }
}

/// HJB solutions for every δ of `cfg` on one shared space-time grid.
pub struct FieldFamily {
    pub grid: GridSpec,
    pub coefficients: Vec<SmoothedCoefficients>,
    pub fields: Vec<ValueField>,
}

/// Solves the smoothed HJB equation for each δ with a common `nt`: the largest
/// stable count over the family unless `cfg.nt` fixes it.
pub fn solve_family(cfg: &ExperimentConfig, spec: ProblemSpec) -> Result<FieldFamily> {
    cfg.validate(spec.dim(), spec.horizon())?;
    let spatial = cfg.spatial_grid(spec.dim(), spec.horizon())?;
    let first = smooth_coefficients(Arc::new(spec), cfg.deltas[0], cfg.kernel_resolution)?;
    let coefficients: Vec<SmoothedCoefficients> = cfg
        .deltas
        .iter()
        .map(|&d| first.with_delta(d))
        .collect::<Result<_>>()?;
    let nt = match cfg.nt {
        Some(nt) => nt,
        None => coefficients
            .iter()
            .map(|c| required_nt(c, &spatial, c.controls()))
            .max()
            .expect("non-empty family"),
    };
    let grid = spatial.with_nt(nt)?;
    let fields = coefficients
        .iter()
        .map(|c| solve_hjb_with(c, &grid, c.controls(), cfg.boundary))
        .collect::<Result<_>>()?;
    Ok(FieldFamily {
        grid,
        coefficients,
        fields,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub delta_a: f64,
    pub delta_b: f64,
    pub t: f64,
    pub x: Vector,
    pub diff: f64,
    pub bound: f64,
}

/// Sampled differences against increments and the fitted power law `constant * s^exponent`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulusFit {
    pub points: Vec<(f64, f64)>,
    pub exponent: f64,
    pub constant: f64,
}

impl ModulusFit {
    fn new(points: Vec<(f64, f64)>) -> Self {
        let (exponent, constant) = loglog_fit(&points);
        ModulusFit {
            points,
            exponent,
            constant,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    /// Every pair `delta_a > delta_b` at every probe.
    pub rows: Vec<ConvergenceRow>,
    /// `(delta_i, |V^{delta_i} - V^{delta_(i+1)}|)` at the first probe.
    pub cauchy: Vec<(f64, f64)>,
    /// Fitted rate of `cauchy` in `delta`.
    pub rate: f64,
    pub constant: f64,
    /// `|V(t, x) - V(t, x + s e_1)|` against `s`, smallest δ, first probe.
    pub space: ModulusFit,
    /// `|V(t, x) - V(t + s, x)|` against `s`, smallest δ, first probe.
    pub time: ModulusFit,
    pub nt: usize,
}

impl ConvergenceTable {
    /// `delta_a,delta_b,t,x,diff,bound`.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(1, |r| r.x.dim());
        let mut out = format!("delta_a,delta_b,t,{},diff,bound\n", x_columns(d, "x"));
        for r in &self.rows {
            write!(out, "{:.16e},{:.16e},{:.16e}", r.delta_a, r.delta_b, r.t).expect("string write");
            for v in r.x.as_slice() {
                write!(out, ",{v:.16e}").expect("string write");
            }
            writeln!(out, ",{:.16e},{:.16e}", r.diff, r.bound).expect("string write");
        }
        out
    }

    /// `kind,increment,diff` rows of the space and time moduli.
    pub fn moduli_csv(&self) -> String {
        let mut out = String::from("kind,increment,diff\n");
        for (kind, fit) in [("space", &self.space), ("time", &self.time)] {
            for (s, v) in &fit.points {
                writeln!(out, "{kind},{s:.16e},{v:.16e}").expect("string write");
            }
        }
        out
    }
}

/// Increments of the moduli sweeps, as multiples of a base step.
const MODULUS_MULTIPLES: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Tabulates Cauchy differences of `V^δ` across the δ list at the probes, with the
/// reference bound `K (1 + T - t) |δ - δ'|` (`K` the declared Lipschitz constant), and
/// fits the δ, space and time moduli.
pub fn run_value_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceTable> {
    value_convergence(cfg, cfg.problem()?)
}

/// [`run_value_convergence`] for an explicit problem instead of the configured preset.
pub fn value_convergence(cfg: &ExperimentConfig, spec: ProblemSpec) -> Result<ConvergenceTable> {
    if cfg.deltas.len() < 3 {
        return Err(Error::invalid("the convergence study needs at least three smoothing radii"));
    }
    let k = spec.constants().lipschitz;
    let horizon = spec.horizon();
    let family = solve_family(cfg, spec)?;
    let fields = &family.fields;
    let mut rows = Vec::new();
    for p in &cfg.probes {
        let values: Vec<f64> = fields.iter().map(|f| f.eval(p.t, &p.x)).collect::<Result<_>>()?;
        for a in 0..values.len() {
            for b in a + 1..values.len() {
                let (da, db) = (cfg.deltas[a], cfg.deltas[b]);
                rows.push(ConvergenceRow {
                    delta_a: da,
                    delta_b: db,
                    t: p.t,
                    x: p.x,
                    diff: (values[a] - values[b]).abs(),
                    bound: k * (1.0 + horizon - p.t) * (da - db),
                });
            }
        }
    }
    let probe = cfg.probes[0];
    let first: Vec<f64> = fields.iter().map(|f| f.eval(probe.t, &probe.x)).collect::<Result<_>>()?;
    let cauchy: Vec<(f64, f64)> = (0..first.len() - 1)
        .map(|i| (cfg.deltas[i], (first[i] - first[i + 1]).abs()))
        .collect();
    let (rate, constant) = loglog_fit(&cauchy);

    let finest = fields.last().expect("non-empty family");
    let grid = &family.grid;
    let h = grid.h()[0];
    let v0 = finest.eval(probe.t, &probe.x)?;
    let mut space = Vec::new();
    for m in MODULUS_MULTIPLES {
        let mut x = probe.x;
        x[0] += m * h;
        if let Ok(v) = finest.eval(probe.t, &x) {
            space.push((m * h, (v - v0).abs()));
        }
    }
    let tau = (horizon - probe.t) / 32.0;
    let time: Vec<(f64, f64)> = MODULUS_MULTIPLES
        .iter()
        .map(|m| Ok((m * tau, (finest.eval(probe.t + m * tau, &probe.x)? - v0).abs())))
        .collect::<Result<_>>()?;
    Ok(ConvergenceTable {
        rows,
        cauchy,
        rate,
        constant,
        space: ModulusFit::new(space),
        time: ModulusFit::new(time),
        nt: grid.nt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingRow {
    pub delta: f64,
    pub sup_dx2: f64,
    pub sup_dy2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTable {
    pub rows: Vec<CouplingRow>,
    pub slope_x: f64,
    pub slope_y: f64,
}

impl CouplingTable {
    /// `delta,sup_dx2,sup_dy2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,sup_dx2,sup_dy2\n");
        for r in &self.rows {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", r.delta, r.sup_dx2, r.sup_dy2).expect("string write");
        }
        out
    }
}

/// Euler scheme for `(X, Y)` of two systems driven by the same Brownian increments and
/// the same control processes `u_s = policy(s, X^A_s)`, `w_s = grad V(s, X^A_s)`. Both start
/// at `(x, V(t, x))` and use `Z = w sigma` with their own `sigma`. Returns the path
/// averages of `sup_s |X^A - X^B|^2` and `sup_s |Y^A - Y^B|^2`.
pub fn coupled_difference<A, B>(
    system_a: &A,
    system_b: &B,
    field: &ValueField,
    policy: &FeedbackPolicy,
    t: f64,
    x: &Vector,
    cfg: &SimConfig,
) -> Result<(f64, f64)>
where
    A: Coefficients + ?Sized,
    B: Coefficients + ?Sized,
{
    let y0 = field.eval(t, x)?;
    let grid = field.grid();
    let margin = 2.0 * grid.h().max_abs();
    let d = x.dim();
    let n = cfg.n_steps;
    let dt = (grid.horizon() - t) / n as f64;
    let sums: Vec<(f64, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(cfg.seed, Channel::Brownian, p as u64);
            let (mut xa, mut xb) = (*x, *x);
            let (mut ya, mut yb) = (y0, y0);
            let (mut sx, mut sy): (f64, f64) = (0.0, 0.0);
            for k in 0..n {
                let tk = t + k as f64 * dt;
                let inner = grid.clamp(&xa, margin);
                let u = policy.lookup(tk, &xa);
                let w = field.grad_unchecked(tk, &inner);
                let mut dw = Vector::zeros(d);
                for i in 0..d {
                    let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                    dw[i] = z * dt.sqrt();
                }
                let (sa, sb) = (system_a.diffusion(&xa, ya), system_b.diffusion(&xb, yb));
                let (za, zb) = (w.row_times(&sa), w.row_times(&sb));
                let ya_next = ya - system_a.driver(&xa, ya, &za, u) * dt + za.dot(&dw);
                let yb_next = yb - system_b.driver(&xb, yb, &zb, u) * dt + zb.dot(&dw);
                xa = xa + system_a.drift(&xa, ya, u) * dt + sa.mul_vec(&dw);
                xb = xb + system_b.drift(&xb, yb, u) * dt + sb.mul_vec(&dw);
                ya = ya_next;
                yb = yb_next;
                let dx = xa - xb;
                sx = sx.max(dx.dot(&dx));
                sy = sy.max((ya - yb).powi(2));
            }
            (sx, sy)
        })
        .collect();
    let np = cfg.n_paths as f64;
    Ok((
        sums.iter().map(|s| s.0).sum::<f64>() / np,
        sums.iter().map(|s| s.1).sum::<f64>() / np,
    ))
}

/// For each δ, couples the smoothed feedback system with the original coefficients
/// under the same controls and noise, started at the first probe.
pub fn run_coupling_study(cfg: &ExperimentConfig) -> Result<CouplingTable> {
    coupling_study(cfg, cfg.problem()?)
}

/// [`run_coupling_study`] for an explicit problem instead of the configured preset.
pub fn coupling_study(cfg: &ExperimentConfig, spec: ProblemSpec) -> Result<CouplingTable> {
    if cfg.deltas.len() < 3 {
        return Err(Error::invalid("the coupling study needs at least three smoothing radii"));
    }
    let family = solve_family(cfg, spec)?;
    let probe = cfg.probes[0];
    let sim = SimConfig::new(cfg.paths, cfg.steps, cfg.seed)?;
    let mut rows = Vec::new();
    for ((delta, c), field) in cfg.deltas.iter().zip(&family.coefficients).zip(&family.fields) {
        let policy = extract_policy(field, c, c.controls());
        let (sup_dx2, sup_dy2) = coupled_difference(c, c.base().as_ref(), field, &policy, probe.t, &probe.x, &sim)?;
        rows.push(CouplingRow {
            delta: *delta,
            sup_dx2,
            sup_dy2,
        });
    }
    let xs: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.sup_dx2)).collect();
    let ys: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.sup_dy2)).collect();
    Ok(CouplingTable {
        slope_x: loglog_fit(&xs).0,
        slope_y: loglog_fit(&ys).0,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalityRow {
    /// `feedback` or `constant:<u>`.
    pub control: String,
    pub mean: f64,
    pub std_error: f64,
    /// `mean - V^δ(t, x)`.
    pub gap: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalityTable {
    pub rows: Vec<OptimalityRow>,
    /// `V^δ(t, x)` for the first δ at the first probe.
    pub value: f64,
    /// Index into `rows` of the cheapest converged constant.
    pub best: Option<usize>,
    /// Constants whose Picard iteration did not converge.
    pub warnings: Vec<String>,
}

impl OptimalityTable {
    /// `control,mean,std_error,gap`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("control,mean,std_error,gap\n");
        for r in &self.rows {
            writeln!(out, "{},{:.16e},{:.16e},{:.16e}", r.control, r.mean, r.std_error, r.gap).expect("string write");
        }
        out
    }

    pub fn best_row(&self) -> Option<&OptimalityRow> {
        self.best.map(|i| &self.rows[i])
    }

    /// `V^δ <= min J + 2 se + 1e-2` and the feedback row sits exactly on `V^δ`.
    pub fn passed(&self) -> bool {
        let feedback_exact = self.rows.iter().any(|r| r.control == "feedback" && r.gap == 0.0);
        match self.best_row() {
            Some(b) => feedback_exact && self.value <= b.mean + 2.0 * b.std_error + 1e-2,
            None => false,
        }
    }
}

/// Costs of `cfg.sweep` evenly spaced constants of the control set (the whole set when it
/// is smaller) by the Picard solver on the unsmoothed coefficients, against `V^δ` at the
/// first δ and probe. The feedback row reads the cost off the field.
pub fn run_optimality_study(cfg: &ExperimentConfig) -> Result<OptimalityTable> {
    optimality_study(cfg, cfg.problem()?)
}

/// [`run_optimality_study`] for an explicit problem instead of the configured preset.
pub fn optimality_study(cfg: &ExperimentConfig, spec: ProblemSpec) -> Result<OptimalityTable> {
    let mut single = cfg.clone();
    single.deltas.truncate(1);
    let family = solve_family(&single, spec.clone())?;
    let field = &family.fields[0];
    let probe = cfg.probes[0];
    let value = field.eval(probe.t, &probe.x)?;
    let sim = SimConfig::new(cfg.paths, cfg.steps, cfg.seed)?;
    let candidates = sweep_controls(&spec, cfg.sweep)?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<usize> = None;
    for u in candidates {
        let control = AdmissibleControl::constant(u, spec.controls())?;
        let out = solve_coupled_picard(
            &spec,
            &control,
            probe.t,
            &probe.x,
            &sim,
            cfg.basis_degree,
            cfg.picard_max_iter,
            cfg.picard_tol,
        )?;
        let cost = out.bundle.cost();
        if !out.converged {
            warnings.push(format!(
                "Picard iteration for {} did not converge in {} iterations",
                control.descriptor(),
                out.iterations
            ));
        } else if best.map_or(true, |b| cost.mean < rows.get(b).map_or(f64::INFINITY, |r: &OptimalityRow| r.mean)) {
            best = Some(rows.len());
        }
        rows.push(OptimalityRow {
            control: control.descriptor(),
            mean: cost.mean,
            std_error: cost.std_error,
            gap: cost.mean - value,
            converged: out.converged,
        });
    }
    rows.push(OptimalityRow {
        control: "feedback".to_string(),
        mean: value,
        std_error: 0.0,
        gap: 0.0,
        converged: true,
    });
    Ok(OptimalityTable {
        rows,
        value,
        best,
        warnings,
    })
}

/// `n` evenly spaced points of an interval control set snapped to its grid, or the
/// whole finite set.
fn sweep_controls(spec: &ProblemSpec, n: usize) -> Result<Vec<f64>> {
    let set = spec.controls();
    if !set.is_interval() || set.resolution() <= n {
        return Ok(set.grid().to_vec());
    }
    if n < 2 {
        return Err(Error::invalid("a sweep over an interval needs at least two controls"));
    }
    let (lo, hi) = set.bounds();
    let mut out: Vec<f64> = (0..n)
        .map(|i| set.nearest(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect();
    out.dedup();
    Ok(out)
}
