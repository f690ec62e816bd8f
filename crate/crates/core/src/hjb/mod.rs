//! Hamiltonians and the explicit monotone solver for the smoothed HJB equation.

mod field;
mod grid;

pub use field::{SchemeMeta, ValueField};
pub use grid::{GridSpec, Jet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{Coefficients, ControlSet};

/// Largest admissible CFL number.
pub const CFL_LIMIT: f64 = 0.9;

/// Closure used at the outermost node of each axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BoundaryMode {
    /// One-sided second-order differences for both `p` and `A`. Not monotone at the edge.
    OneSided,
    /// First-order one-sided `p` and `A = 0`: the field is extended linearly.
    #[default]
    Linear,
}

impl BoundaryMode {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryMode::OneSided => "one-sided",
            BoundaryMode::Linear => "linear",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "one-sided" => Ok(BoundaryMode::OneSided),
            "linear" => Ok(BoundaryMode::Linear),
            _ => Err(Error::invalid(format!("unknown boundary mode `{s}`"))),
        }
    }
}

/// `H = 1/2 tr(sigma sigma^T A) + b . p + f(x, y, p sigma, u)`.
pub fn hamiltonian<C: Coefficients + ?Sized>(c: &C, x: &Vector, y: f64, p: &Vector, a: &Matrix, u: f64) -> f64 {
    let sigma = c.diffusion(x, y);
    let z = p.row_times(&sigma);
    0.5 * sigma.gram().trace_product(a) + c.drift(x, y, u).dot(p) + c.driver(x, y, &z, u)
}

/// Minimum of the Hamiltonian over `controls.grid()`; ties go to the smallest grid point.
pub fn min_hamiltonian<C: Coefficients + ?Sized>(
    c: &C,
    x: &Vector,
    y: f64,
    p: &Vector,
    a: &Matrix,
    controls: &ControlSet,
) -> (f64, f64) {
    let sigma = c.diffusion(x, y);
    let z = p.row_times(&sigma);
    let diffusion_part = 0.5 * sigma.gram().trace_product(a);
    let drift = c.prepared_drift(x, y);
    let driver = c.prepared_driver(x, y, &z);
    let mut best = (f64::INFINITY, controls.grid()[0]);
    for &u in controls.grid() {
        let h = diffusion_part + drift.at(u).dot(p) + driver.at(u);
        if h < best.0 {
            best = (h, u);
        }
    }
    best
}

/// Backward values of `y` used to bound `sigma` and `b` before the solve.
fn y_probe<C: Coefficients + ?Sized>(c: &C, grid: &GridSpec) -> Vec<f64> {
    let m = c.problem().constants().bound;
    let reach = m * (1.0 + grid.horizon() - grid.t0());
    (0..9).map(|k| -reach + 2.0 * reach * k as f64 / 8.0).collect()
}

/// Largest `tr(sigma sigma^T) / h^2 + |b| / h` over grid nodes, controls and a
/// sweep of `y` values, together with the smallest eigenvalue of `sigma sigma^T`.
pub fn stability_rates<C: Coefficients + ?Sized>(c: &C, grid: &GridSpec, controls: &ControlSet) -> (f64, f64) {
    let ys = y_probe(c, grid);
    let h = grid.h();
    let per_node: Vec<(f64, f64)> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|idx| {
            let x = grid.node(idx);
            let mut rate: f64 = 0.0;
            let mut ell = f64::INFINITY;
            for &y in &ys {
                let gram = c.diffusion(&x, y).gram();
                ell = ell.min(gram.min_sym_eigenvalue());
                let drift = c.prepared_drift(&x, y);
                let mut trace = 0.0;
                let mut transport: f64 = 0.0;
                for k in 0..grid.dim() {
                    trace += gram.get(k, k) / (h[k] * h[k]);
                }
                for &u in controls.grid() {
                    let b = drift.at(u);
                    transport = transport.max((0..grid.dim()).map(|k| b[k].abs() / h[k]).sum());
                }
                rate = rate.max(trace + transport);
            }
            (rate, ell)
        })
        .collect();
    per_node
        .iter()
        .fold((0.0f64, f64::INFINITY), |(r, e), &(r2, e2)| (r.max(r2), e.min(e2)))
}

/// Smallest `nt` keeping the CFL number at or below [`CFL_LIMIT`].
pub fn required_nt<C: Coefficients + ?Sized>(c: &C, grid: &GridSpec, controls: &ControlSet) -> usize {
    let (rate, _) = stability_rates(c, grid, controls);
    ((grid.horizon() - grid.t0()) * rate / CFL_LIMIT).ceil().max(1.0) as usize
}

/// Solves `V_t + min_u H(x, V, grad V, hess V, u) = 0`, `V(T) = Phi` backward in time with
/// the default boundary closure.
pub fn solve_hjb<C: Coefficients + ?Sized>(c: &C, grid: &GridSpec, controls: &ControlSet) -> Result<ValueField> {
    solve_hjb_with(c, grid, controls, BoundaryMode::default())
}

pub fn solve_hjb_with<C: Coefficients + ?Sized>(
    c: &C,
    grid: &GridSpec,
    controls: &ControlSet,
    boundary: BoundaryMode,
) -> Result<ValueField> {
    if grid.dim() != c.dim() {
        return Err(Error::invalid(format!(
            "grid dimension {} does not match the problem dimension {}",
            grid.dim(),
            c.dim()
        )));
    }
    let (rate, ellipticity) = stability_rates(c, grid, controls);
    let threshold = 0.5 * c.problem().constants().ellipticity;
    if ellipticity < threshold {
        return Err(Error::Ellipticity {
            measured: ellipticity,
            threshold,
        });
    }
    let cfl = rate * grid.dt();
    if cfl > CFL_LIMIT {
        return Err(Error::CflViolation {
            cfl,
            limit: CFL_LIMIT,
            required_nt: ((grid.horizon() - grid.t0()) * rate / CFL_LIMIT).ceil() as usize,
        });
    }

    let n = grid.n_nodes();
    let nt = grid.nt();
    let dt = grid.dt();
    let mut values = vec![0.0; (nt + 1) * n];
    let terminal: Vec<f64> = (0..n).into_par_iter().map(|idx| c.terminal(&grid.node(idx))).collect();
    values[nt * n..].copy_from_slice(&terminal);
    for level in (0..nt).rev() {
        let (head, tail) = values.split_at_mut((level + 1) * n);
        let later = &tail[..n];
        let current = &mut head[level * n..];
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let jet = grid.jet(later, idx, boundary);
                let (h, _) = min_hamiltonian(c, &grid.node(idx), jet.value, &jet.grad, &jet.hess, controls);
                jet.value + dt * h
            })
            .collect();
        current.copy_from_slice(&next);
    }
    Ok(ValueField::from_parts(
        grid.clone(),
        values,
        c.delta(),
        Some(SchemeMeta {
            cfl,
            boundary,
            min_ellipticity: ellipticity,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, CoefficientMap, ProblemSpec};
    use crate::mollify::smooth_coefficients;

    #[test]
    fn pure_trace_hamiltonian() {
        let p = ProblemSpec::builder("heat", 1).build().unwrap();
        for (x, y, q, u) in [(0.0, 0.0, 0.0, 0.0), (1.3, -0.5, 2.0, 0.0)] {
            let h = hamiltonian(&p, &Vector::scalar(x), y, &Vector::scalar(q), &Matrix::scalar(2.0), u);
            assert_eq!(h, 1.0);
        }
    }

    #[test]
    fn b2_hamiltonian_at_origin() {
        let p = preset("B2").unwrap();
        let o = Vector::scalar(0.0);
        let h = hamiltonian(&p, &o, 0.0, &o, &Matrix::scalar(0.0), 0.5);
        assert!((h - 0.125).abs() < 1e-15);
        let (_, u) = min_hamiltonian(&p, &o, 0.0, &Vector::scalar(1.0), &Matrix::scalar(0.0), p.controls());
        assert_eq!(u, -1.0);
    }

    #[test]
    fn ties_resolve_to_smallest_control() {
        let p = preset("uncontrolled-linear").unwrap();
        let s = smooth_coefficients(p, 0.1, 64).unwrap();
        let o = Vector::scalar(0.2);
        let (_, u) = min_hamiltonian(&s, &o, 0.0, &o, &Matrix::scalar(1.0), s.controls());
        assert_eq!(u, 0.0);
        let flat = ProblemSpec::builder("flat", 1)
            .controls(ControlSet::interval(-1.0, 1.0, 5).unwrap())
            .build()
            .unwrap();
        let (_, u) = min_hamiltonian(&flat, &o, 0.0, &o, &Matrix::scalar(1.0), flat.controls());
        assert_eq!(u, -1.0);
    }

    #[test]
    fn b1_argmin_is_zero() {
        let s = smooth_coefficients(preset("B1").unwrap(), 0.1, 64).unwrap();
        for (x, y, p, a) in [(0.0, 0.0, 0.0, 0.0), (1.0, -0.5, 2.0, -1.0), (-3.0, 1.5, -4.0, 3.0)] {
            let (_, u) = min_hamiltonian(&s, &Vector::scalar(x), y, &Vector::scalar(p), &Matrix::scalar(a), s.controls());
            assert!(u.abs() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn b2_argmin_follows_clip_formula() {
        let s = smooth_coefficients(preset("B2").unwrap(), 0.05, 64).unwrap();
        let o = Vector::scalar(0.0);
        let (_, u) = min_hamiltonian(&s, &o, 0.0, &Vector::scalar(0.5), &Matrix::scalar(0.0), s.controls());
        assert!((u + 0.5).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn constant_terminal_is_preserved() {
        let p = ProblemSpec::builder("c", 1)
            .terminal(CoefficientMap::constant(1, 0.7))
            .build()
            .unwrap();
        let grid = GridSpec::cube(1, 2.0, 21, 50, 0.0, 1.0).unwrap();
        let f = solve_hjb(&p, &grid, p.controls()).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn cfl_violation_reports_required_steps() {
        let p = preset("uncontrolled-linear").unwrap();
        let grid = GridSpec::cube(1, 6.0, 241, 10, 0.0, 1.0).unwrap();
        match solve_hjb(&p, &grid, p.controls()) {
            Err(Error::CflViolation { required_nt, .. }) => {
                let ok = GridSpec::cube(1, 6.0, 241, required_nt, 0.0, 1.0).unwrap();
                assert!(solve_hjb(&p, &ok, p.controls()).is_ok());
                assert_eq!(required_nt, required_nt_for(&p, &ok));
            }
            other => panic!("expected a CFL violation, got {other:?}"),
        }
    }

    fn required_nt_for(p: &ProblemSpec, g: &GridSpec) -> usize {
        required_nt(p, g, p.controls())
    }

    #[test]
    fn degenerate_diffusion_is_rejected() {
        let p = ProblemSpec::builder("deg", 1)
            .diffusion(0, 0, CoefficientMap::constant(2, 0.5))
            .constants(1.0, 1.0, 1.0)
            .build()
            .unwrap();
        let grid = GridSpec::cube(1, 2.0, 11, 100, 0.0, 1.0).unwrap();
        assert!(matches!(solve_hjb(&p, &grid, p.controls()), Err(Error::Ellipticity { .. })));
    }
}
