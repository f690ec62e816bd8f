use rayon::prelude::*;

use super::{backward_pass, euler_forward, time_grid, PathBundle, SimConfig};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::Coefficients;
use crate::policy::AdmissibleControl;

/// Result of the Picard iteration for the coupled system.
#[derive(Clone, Debug)]
pub struct PicardOutcome {
    /// Last iterate.
    pub bundle: PathBundle,
    pub iterations: usize,
    pub converged: bool,
    /// `Y_t` after each iteration.
    pub history: Vec<f64>,
    /// `|Y_t^k - Y_t^(k-1)|` after each iteration, with `Y_t^0 = Phi(x)`.
    pub increments: Vec<f64>,
}

/// Picard iteration on the decoupling field of the coupled system.
///
/// The working field starts as `Phi(x)` at every time. Each iteration simulates the
/// forward equation with `y` read from the working field, solves the backward equation
/// by regression on the same Brownian paths, and replaces the working field by the
/// fitted `Y` regressions. The iteration stops once successive `Y_t` differ by less than
/// `tol`; without `y` in `b` and `sigma` the first iterate is already the fixed point.
#[allow(clippy::too_many_arguments)]
pub fn solve_coupled_picard<C: Coefficients + ?Sized>(
    c: &C,
    control: &AdmissibleControl,
    t: f64,
    x: &Vector,
    cfg: &SimConfig,
    basis_degree: usize,
    max_iter: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    cfg.check()?;
    if max_iter < 1 {
        return Err(Error::invalid("Picard iteration needs max_iter >= 1"));
    }
    if !(t >= 0.0 && t < c.horizon()) {
        return Err(Error::OutOfDomain {
            t,
            x: x.as_slice().to_vec(),
        });
    }
    control.check(c.controls())?;
    let coupled = c.problem().is_coupled();
    let times = time_grid(t, c.horizon(), cfg.n_steps);
    let d = x.dim();
    let mut fits = None;
    let mut previous = c.terminal(x);
    let mut history = Vec::new();
    let mut increments = Vec::new();
    let mut converged = false;
    let mut last = None;
    for _ in 0..max_iter {
        let current: &Option<Vec<super::Fit>> = &fits;
        let yarg = |k: usize, x: &Vector| match current {
            Some(f) => f[k].eval(x),
            None => c.terminal(x),
        };
        let paths: Vec<_> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|p| euler_forward(c, control, &times, x, p, cfg.seed, None, &yarg))
            .collect();
        let mut forward = PathBundle {
            dim: d,
            n_paths: cfg.n_paths,
            n_steps: cfg.n_steps,
            times: times.clone(),
            x: Vec::with_capacity(cfg.n_paths * (cfg.n_steps + 1) * d),
            y: Vec::new(),
            z: Vec::new(),
            m: Vec::new(),
            u: Vec::with_capacity(cfg.n_paths * cfg.n_steps),
            dw: Some(Vec::with_capacity(cfg.n_paths * cfg.n_steps * d)),
            exit_count: 0,
            y0_std_error: 0.0,
        };
        for fp in paths {
            forward.x.extend(fp.x);
            forward.u.extend(fp.u);
            forward.dw.as_mut().expect("allocated").extend(fp.dw);
        }
        let (bundle, new_fits) = backward_pass(c, &forward, basis_degree)?;
        let y0 = bundle.cost().mean;
        let change = (y0 - previous).abs();
        history.push(y0);
        increments.push(change);
        previous = y0;
        fits = Some(new_fits);
        last = Some(bundle);
        if !coupled || change < tol {
            converged = true;
            break;
        }
    }
    let mut bundle = last.expect("at least one iteration");
    if !cfg.record_increments {
        bundle.dw = None;
    }
    Ok(PicardOutcome {
        bundle,
        iterations: history.len(),
        converged,
        history,
        increments,
    })
}
