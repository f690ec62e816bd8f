//! Euler–Maruyama simulation of the controlled forward equation and Monte Carlo
//! solvers for the backward component.

mod picard;
pub mod regression;

pub use picard::{solve_coupled_picard, PicardOutcome};

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hjb::ValueField;
use crate::linalg::Vector;
use crate::model::Coefficients;
use crate::policy::{control_at, AdmissibleControl};
use crate::rng::{substream, Channel};
use regression::{Fit, Regression};

/// Polynomial degree of the regression basis unless stated otherwise.
pub const DEFAULT_BASIS_DEGREE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub record_increments: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig {
            n_paths,
            n_steps,
            seed,
            record_increments: true,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < 1 || self.n_steps < 1 {
            return Err(Error::invalid("simulation needs at least one path and one step"));
        }
        Ok(())
    }
}

/// Simulated `(X, Y, Z, M)` on a uniform time grid, stored path-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    dim: usize,
    n_paths: usize,
    n_steps: usize,
    times: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    m: Vec<f64>,
    u: Vec<f64>,
    dw: Option<Vec<f64>>,
    exit_count: usize,
    y0_std_error: f64,
}

impl PathBundle {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn exit_count(&self) -> usize {
        self.exit_count
    }

    fn node(&self, path: usize, step: usize) -> usize {
        path * (self.n_steps + 1) + step
    }

    pub fn x(&self, path: usize, step: usize) -> Vector {
        let i = self.node(path, step) * self.dim;
        Vector::from_slice(&self.x[i..i + self.dim])
    }

    pub fn y(&self, path: usize, step: usize) -> f64 {
        self.y[self.node(path, step)]
    }

    pub fn z(&self, path: usize, step: usize) -> Vector {
        let i = self.node(path, step) * self.dim;
        Vector::from_slice(&self.z[i..i + self.dim])
    }

    pub fn m(&self, path: usize, step: usize) -> f64 {
        self.m[self.node(path, step)]
    }

    /// Control applied on `[t_step, t_step+1)`.
    pub fn u(&self, path: usize, step: usize) -> f64 {
        self.u[path * self.n_steps + step]
    }

    /// Brownian increment over `[t_step, t_step+1)`, if recorded.
    pub fn dw(&self, path: usize, step: usize) -> Option<Vector> {
        self.dw.as_ref().map(|dw| {
            let i = (path * self.n_steps + step) * self.dim;
            Vector::from_slice(&dw[i..i + self.dim])
        })
    }

    pub fn has_increments(&self) -> bool {
        self.dw.is_some()
    }

    /// Sample mean of `Y` at the first time and its standard error.
    pub fn cost(&self) -> CostEstimate {
        let mean = (0..self.n_paths).map(|p| self.y(p, 0)).sum::<f64>() / self.n_paths as f64;
        CostEstimate {
            mean,
            std_error: self.y0_std_error,
            n_paths: self.n_paths,
        }
    }

    /// `path,step,t,x...,y,z...,m` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,step,t,");
        let axis = |name: &str| -> String {
            if self.dim == 1 {
                name.to_string()
            } else {
                (1..=self.dim).map(|k| format!("{name}{k}")).collect::<Vec<_>>().join(",")
            }
        };
        out.push_str(&format!("{},y,{},m\n", axis("x"), axis("z")));
        for p in 0..self.n_paths {
            for k in 0..=self.n_steps {
                write!(out, "{p},{k},{:.16e}", self.times[k]).expect("string write");
                for v in self.x(p, k).as_slice() {
                    write!(out, ",{v:.16e}").expect("string write");
                }
                write!(out, ",{:.16e}", self.y(p, k)).expect("string write");
                for v in self.z(p, k).as_slice() {
                    write!(out, ",{v:.16e}").expect("string write");
                }
                writeln!(out, ",{:.16e}", self.m(p, k)).expect("string write");
            }
        }
        out
    }
}

/// Monte Carlo estimate of the cost `J = Y_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl CostEstimate {
    pub const CSV_HEADER: &'static str = "control-descriptor,mean,std_error,n_paths";

    pub fn csv_row(&self, descriptor: &str) -> String {
        format!("{descriptor},{:.16e},{:.16e},{}", self.mean, self.std_error, self.n_paths)
    }
}

fn time_grid(t: f64, horizon: f64, n: usize) -> Vec<f64> {
    let dt = (horizon - t) / n as f64;
    (0..=n).map(|k| if k == n { horizon } else { t + k as f64 * dt }).collect()
}

fn normal_vector(rng: &mut impl Rng, d: usize, scale: f64) -> Vector {
    let mut v = Vector::zeros(d);
    for k in 0..d {
        let n: f64 = rng.sample(StandardNormal);
        v[k] = scale * n;
    }
    v
}

/// One forward path: states, controls, increments and the `y` argument used.
struct ForwardPath {
    x: Vec<f64>,
    u: Vec<f64>,
    dw: Vec<f64>,
    exited: bool,
}

/// Euler–Maruyama for `dX = b(X, y(k, X), u) dt + sigma(X, y(k, X)) dW`.
/// With `clamp = Some((lo, hi))` paths are projected onto the box after each step.
#[allow(clippy::too_many_arguments)]
fn euler_forward<C, Y>(
    c: &C,
    control: &AdmissibleControl,
    times: &[f64],
    x0: &Vector,
    path: usize,
    seed: u64,
    clamp: Option<(Vector, Vector)>,
    yarg: &Y,
) -> ForwardPath
where
    C: Coefficients + ?Sized,
    Y: Fn(usize, &Vector) -> f64 + ?Sized,
{
    let d = x0.dim();
    let n = times.len() - 1;
    let mut rng = substream(seed, Channel::Brownian, path as u64);
    let mut xs = Vec::with_capacity((n + 1) * d);
    let mut us = Vec::with_capacity(n);
    let mut dws = Vec::with_capacity(n * d);
    let mut x = *x0;
    let mut exited = false;
    xs.extend_from_slice(x.as_slice());
    for k in 0..n {
        let dt = times[k + 1] - times[k];
        let y = yarg(k, &x);
        let u = control_at(control, times[k], &x);
        let dw = normal_vector(&mut rng, d, dt.sqrt());
        let step = c.drift(&x, y, u) * dt + c.diffusion(&x, y).mul_vec(&dw);
        x = x + step;
        if let Some((lo, hi)) = clamp {
            for i in 0..d {
                if x[i] < lo[i] || x[i] > hi[i] {
                    exited = true;
                    x[i] = x[i].clamp(lo[i], hi[i]);
                }
            }
        }
        xs.extend_from_slice(x.as_slice());
        us.push(u);
        dws.extend_from_slice(dw.as_slice());
    }
    ForwardPath {
        x: xs,
        u: us,
        dw: dws,
        exited,
    }
}

fn check_start(field: &ValueField, t: f64, x: &Vector) -> Result<()> {
    let g = field.grid();
    if !(t >= g.t0() && t < g.horizon()) {
        return Err(Error::OutOfDomain {
            t,
            x: x.as_slice().to_vec(),
        });
    }
    field.grad(t, x).map(|_| ())
}

fn derivative_box(field: &ValueField) -> (Vector, Vector) {
    let g = field.grid();
    let margin = 2.0 * g.h().max_abs();
    let d = g.dim();
    (g.x_lo() + Vector::splat(d, margin), g.x_hi() - Vector::splat(d, margin))
}

/// Simulates `X` under `control` with `Y_s = V(s, X_s)` and `Z_s = grad V(s, X_s) sigma`.
/// Paths are clamped to the box shrunk by `2h`; clamped paths are counted in `exit_count`.
pub fn simulate_forward<C: Coefficients + ?Sized>(
    c: &C,
    field: &ValueField,
    control: &AdmissibleControl,
    t: f64,
    x: &Vector,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    cfg.check()?;
    check_start(field, t, x)?;
    let d = x.dim();
    let times = time_grid(t, field.grid().horizon(), cfg.n_steps);
    let bounds = derivative_box(field);
    let yarg = |k: usize, x: &Vector| field.interpolate(times[k], x);
    let paths: Vec<(ForwardPath, Vec<f64>, Vec<f64>)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let fp = euler_forward(c, control, &times, x, p, cfg.seed, Some(bounds), &yarg);
            let mut ys = Vec::with_capacity(times.len());
            let mut zs = Vec::with_capacity(times.len() * d);
            for (k, &tk) in times.iter().enumerate() {
                let xk = Vector::from_slice(&fp.x[k * d..(k + 1) * d]);
                let y = field.interpolate(tk, &xk);
                let z = field.grad_unchecked(tk, &xk).row_times(&c.diffusion(&xk, y));
                ys.push(y);
                zs.extend_from_slice(z.as_slice());
            }
            (fp, ys, zs)
        })
        .collect();
    let mut bundle = PathBundle {
        dim: d,
        n_paths: cfg.n_paths,
        n_steps: cfg.n_steps,
        times,
        x: Vec::with_capacity(cfg.n_paths * (cfg.n_steps + 1) * d),
        y: Vec::new(),
        z: Vec::new(),
        m: vec![0.0; cfg.n_paths * (cfg.n_steps + 1)],
        u: Vec::new(),
        dw: cfg.record_increments.then(Vec::new),
        exit_count: 0,
        y0_std_error: 0.0,
    };
    for (fp, ys, zs) in paths {
        bundle.x.extend(fp.x);
        bundle.u.extend(fp.u);
        if let Some(dw) = bundle.dw.as_mut() {
            dw.extend(fp.dw);
        }
        bundle.y.extend(ys);
        bundle.z.extend(zs);
        bundle.exit_count += fp.exited as usize;
    }
    Ok(bundle)
}

/// Cost of `control` started at `(t, x)`. Feedback controls read it off the field;
/// other controls go through the regression solver along the simulated paths.
pub fn estimate_cost<C: Coefficients + ?Sized>(
    c: &C,
    field: &ValueField,
    control: &AdmissibleControl,
    t: f64,
    x: &Vector,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    if control.is_feedback() {
        check_start(field, t, x)?;
        return Ok(CostEstimate {
            mean: field.eval(t, x)?,
            std_error: 0.0,
            n_paths: cfg.n_paths,
        });
    }
    let cfg = SimConfig {
        record_increments: true,
        ..*cfg
    };
    let forward = simulate_forward(c, field, control, t, x, &cfg)?;
    Ok(solve_backward_regression(c, &forward, DEFAULT_BASIS_DEGREE)?.cost())
}

/// Least-squares Monte Carlo for `dY = -f(X, Y, Z, u) ds + Z dW`, `Y_T = Phi(X_T)`,
/// along the states and controls of `forward`.
pub fn solve_backward_regression<C: Coefficients + ?Sized>(
    c: &C,
    forward: &PathBundle,
    basis_degree: usize,
) -> Result<PathBundle> {
    Ok(backward_pass(c, forward, basis_degree)?.0)
}

/// Backward recursion returning the bundle and the per-step fits of `Y`.
fn backward_pass<C: Coefficients + ?Sized>(c: &C, forward: &PathBundle, degree: usize) -> Result<(PathBundle, Vec<Fit>)> {
    let dw = forward
        .dw
        .as_ref()
        .ok_or_else(|| Error::invalid("backward regression needs recorded Brownian increments"))?;
    let d = forward.dim;
    let (np, n) = (forward.n_paths, forward.n_steps);
    let mut y = vec![0.0; np * (n + 1)];
    let mut z = vec![0.0; np * (n + 1) * d];
    for p in 0..np {
        y[forward.node(p, n)] = c.terminal(&forward.x(p, n));
    }
    let mut fits = Vec::with_capacity(n);
    // Pathwise cost Phi(X_T) + sum f dt; regressions with an intercept preserve
    // sample means, so its mean equals Y at the first step.
    let mut realized: Vec<f64> = (0..np).map(|p| y[forward.node(p, n)]).collect();
    for k in (0..n).rev() {
        let dt = forward.times[k + 1] - forward.times[k];
        let points: Vec<Vector> = (0..np).map(|p| forward.x(p, k)).collect();
        let reg = Regression::new(&points, degree, k)?;
        let next: Vec<f64> = (0..np).map(|p| y[forward.node(p, k + 1)]).collect();
        let mean = reg.fitted(&reg.fit(&next));
        let mut zk = vec![Vector::zeros(d); np];
        for j in 0..d {
            let targets: Vec<f64> = (0..np)
                .map(|p| (next[p] - mean[p]) * dw[(p * n + k) * d + j] / dt)
                .collect();
            let fitted = reg.fitted(&reg.fit(&targets));
            for p in 0..np {
                zk[p][j] = fitted[p];
            }
        }
        let targets: Vec<f64> = (0..np)
            .into_par_iter()
            .map(|p| next[p] + c.driver(&points[p], next[p], &zk[p], forward.u(p, k)) * dt)
            .collect();
        let fit = reg.fit(&targets);
        let yk = reg.fitted(&fit);
        for p in 0..np {
            y[forward.node(p, k)] = yk[p];
            let i = forward.node(p, k) * d;
            z[i..i + d].copy_from_slice(zk[p].as_slice());
        }
        for p in 0..np {
            realized[p] += targets[p] - next[p];
        }
        fits.push(fit);
    }
    fits.reverse();
    let mean = realized.iter().sum::<f64>() / np as f64;
    let var = realized.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (np.max(2) - 1) as f64;
    let std_error = (var / np as f64).sqrt();
    let bundle = PathBundle {
        y,
        z,
        m: vec![0.0; np * (n + 1)],
        y0_std_error: std_error,
        ..forward.clone()
    };
    Ok((bundle, fits))
}

/// Mean absolute one-step residual of `Y_{k+1} - Y_k + f dt - Z dW - dM`, and the
/// path average of the covariation `sum dM dW` (Euclidean norm over components).
pub fn bsde_residual<C: Coefficients + ?Sized>(bundle: &PathBundle, c: &C) -> Result<(f64, f64)> {
    if !bundle.has_increments() {
        return Err(Error::invalid("the residual needs recorded Brownian increments"));
    }
    let (np, n, d) = (bundle.n_paths, bundle.n_steps, bundle.dim);
    let per_path: Vec<(f64, Vector)> = (0..np)
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            let mut cov = Vector::zeros(d);
            for k in 0..n {
                let dt = bundle.times[k + 1] - bundle.times[k];
                let (x, y, z) = (bundle.x(p, k), bundle.y(p, k), bundle.z(p, k));
                let dw = bundle.dw(p, k).expect("checked above");
                let dm = bundle.m(p, k + 1) - bundle.m(p, k);
                let f = c.driver(&x, y, &z, bundle.u(p, k));
                acc += (bundle.y(p, k + 1) - y + f * dt - z.dot(&dw) - dm).abs();
                cov = cov + dw * dm;
            }
            (acc, cov)
        })
        .collect();
    let mut total = 0.0;
    let mut cov = Vector::zeros(d);
    for (a, v) in per_path {
        total += a;
        cov = cov + v;
    }
    Ok((total / (np * n) as f64, (cov * (1.0 / np as f64)).norm()))
}

/// Action of a relaxed control after chattering reduction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxedAction {
    pub u: f64,
    pub w: Vector,
    pub theta: f64,
}

/// Simulates `dX = b dt + sigma dW`, `dY = -f dt + Z dW + theta dB` with `Z = w sigma`
/// and `B` independent of `W`. The forward equation reads `y` from the field, so with
/// `theta = 0`, `w = grad V` and the feedback control it reproduces [`simulate_forward`]'s
/// states path by path. `M` records `int theta dB`.
pub fn simulate_relaxed<C, P>(
    c: &C,
    field: &ValueField,
    policy: P,
    t: f64,
    x: &Vector,
    cfg: &SimConfig,
) -> Result<PathBundle>
where
    C: Coefficients + ?Sized,
    P: Fn(f64, &Vector, f64) -> RelaxedAction + Sync,
{
    cfg.check()?;
    check_start(field, t, x)?;
    let d = x.dim();
    let times = time_grid(t, field.grid().horizon(), cfg.n_steps);
    let (lo, hi) = derivative_box(field);
    struct RelaxedPath {
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        m: Vec<f64>,
        u: Vec<f64>,
        dw: Vec<f64>,
        exited: bool,
    }
    let paths: Vec<RelaxedPath> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng_w = substream(cfg.seed, Channel::Brownian, p as u64);
            let mut rng_b = substream(cfg.seed, Channel::Orthogonal, p as u64);
            let mut out = RelaxedPath {
                x: Vec::with_capacity((cfg.n_steps + 1) * d),
                y: Vec::with_capacity(cfg.n_steps + 1),
                z: Vec::with_capacity((cfg.n_steps + 1) * d),
                m: Vec::with_capacity(cfg.n_steps + 1),
                u: Vec::with_capacity(cfg.n_steps),
                dw: Vec::with_capacity(cfg.n_steps * d),
                exited: false,
            };
            let mut xk = *x;
            let mut yk = field.interpolate(t, x);
            let mut mk = 0.0;
            for k in 0..cfg.n_steps {
                let dt = times[k + 1] - times[k];
                let yarg = field.interpolate(times[k], &xk);
                let a = policy(times[k], &xk, yarg);
                let sigma = c.diffusion(&xk, yarg);
                let z = a.w.row_times(&sigma);
                let dw = normal_vector(&mut rng_w, d, dt.sqrt());
                let db: f64 = rng_b.sample::<f64, _>(StandardNormal) * dt.sqrt();
                out.x.extend_from_slice(xk.as_slice());
                out.y.push(yk);
                out.z.extend_from_slice(z.as_slice());
                out.m.push(mk);
                out.u.push(a.u);
                out.dw.extend_from_slice(dw.as_slice());
                let f = c.driver(&xk, yk, &z, a.u);
                yk += -f * dt + z.dot(&dw) + a.theta * db;
                mk += a.theta * db;
                let step = c.drift(&xk, yarg, a.u) * dt + sigma.mul_vec(&dw);
                xk = xk + step;
                for i in 0..d {
                    if xk[i] < lo[i] || xk[i] > hi[i] {
                        out.exited = true;
                        xk[i] = xk[i].clamp(lo[i], hi[i]);
                    }
                }
            }
            let tn = times[cfg.n_steps];
            let a = policy(tn, &xk, field.interpolate(tn, &xk));
            out.x.extend_from_slice(xk.as_slice());
            out.y.push(yk);
            out.z
                .extend_from_slice(a.w.row_times(&c.diffusion(&xk, field.interpolate(tn, &xk))).as_slice());
            out.m.push(mk);
            out
        })
        .collect();
    let mut bundle = PathBundle {
        dim: d,
        n_paths: cfg.n_paths,
        n_steps: cfg.n_steps,
        times,
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        m: Vec::new(),
        u: Vec::new(),
        dw: cfg.record_increments.then(Vec::new),
        exit_count: 0,
        y0_std_error: 0.0,
    };
    for rp in paths {
        bundle.x.extend(rp.x);
        bundle.y.extend(rp.y);
        bundle.z.extend(rp.z);
        bundle.m.extend(rp.m);
        bundle.u.extend(rp.u);
        if let Some(dw) = bundle.dw.as_mut() {
            dw.extend(rp.dw);
        }
        bundle.exit_count += rp.exited as usize;
    }
    Ok(bundle)
}

/// Path average of `sup |X|^2 + sup |Y|^2 + int |Z|^2 ds`.
pub fn moment_statistic(bundle: &PathBundle) -> f64 {
    let n = bundle.n_steps;
    let total: f64 = (0..bundle.n_paths)
        .map(|p| {
            let mut sx: f64 = 0.0;
            let mut sy: f64 = 0.0;
            let mut iz = 0.0;
            for k in 0..=n {
                sx = sx.max(bundle.x(p, k).dot(&bundle.x(p, k)));
                sy = sy.max(bundle.y(p, k).powi(2));
                if k < n {
                    iz += bundle.z(p, k).dot(&bundle.z(p, k)) * (bundle.times[k + 1] - bundle.times[k]);
                }
            }
            sx + sy + iz
        })
        .sum();
    total / bundle.n_paths as f64
}
