//! Convolution with a compactly supported bump kernel.
//!
//! `g_delta(xi) = sum_k w_k g(xi - delta * nu_k)` where `(nu_k, w_k)` is a midpoint
//! quadrature of `phi(nu) = c exp(-1 / (1 - |nu|^2))` on the unit ball, normalized so
//! the weights sum to one. Because the weights are positive, sum to one and every node
//! lies inside the unit ball, `|g_delta - g| <= L_g delta` and the Lipschitz constant of
//! `g` is preserved without any quadrature slack.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::model::{validate_ellipticity, Coefficients, ProblemSpec, Smoothing, MAX_ARITY};

/// Default number of quadrature nodes per axis.
pub const DEFAULT_RESOLUTION: usize = 64;
/// Nodes per axis used for full tensor kernels of arity four and above.
pub const HIGH_ARITY_RESOLUTION: usize = 16;
/// Smallest accepted number of nodes per axis.
pub const MIN_RESOLUTION: usize = 8;

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Midpoint of cell `i` out of `n` on `(-1, 1)`, exactly antisymmetric in `i`.
fn midpoint(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0 - n as f64) / n as f64
}

/// Tensor midpoint quadrature of the bump on the unit ball of `R^m`.
#[derive(Clone, Debug)]
pub struct BumpKernel {
    arity: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    normalization: f64,
}

impl BumpKernel {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Node coordinates, `arity` consecutive values per node.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.arity..(k + 1) * self.arity]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The constant `c` making the discrete kernel a probability vector.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }
}

/// Builds the `m`-dimensional kernel with `nodes_per_axis` midpoints per axis.
pub fn make_kernel(m: usize, nodes_per_axis: usize) -> Result<BumpKernel> {
    if m == 0 || m > MAX_ARITY {
        return Err(Error::invalid(format!("kernel arity {m} unsupported")));
    }
    if nodes_per_axis < MIN_RESOLUTION {
        return Err(Error::invalid(format!(
            "kernel needs at least {MIN_RESOLUTION} nodes per axis, got {nodes_per_axis}"
        )));
    }
    let n = nodes_per_axis;
    let axis: Vec<f64> = (0..n).map(|i| midpoint(i, n)).collect();
    let cell = (2.0 / n as f64).powi(m as i32);
    let mut nodes = Vec::new();
    let mut raw = Vec::new();
    let mut idx = vec![0usize; m];
    loop {
        let r2: f64 = idx.iter().map(|&i| axis[i] * axis[i]).sum();
        if r2 < 1.0 {
            nodes.extend(idx.iter().map(|&i| axis[i]));
            raw.push(bump(r2) * cell);
        }
        let mut k = 0;
        while k < m {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == m {
            break;
        }
    }
    let total: f64 = raw.iter().sum();
    let normalization = 1.0 / total;
    let weights = raw.iter().map(|r| r * normalization).collect();
    Ok(BumpKernel {
        arity: m,
        nodes,
        weights,
        normalization,
    })
}

/// Distribution of `e . nu` for a unit vector `e` when `nu` follows the
/// `m`-dimensional bump. Smoothing `g(a . xi)` only needs this projection.
#[derive(Clone, Debug)]
pub struct MarginalKernel {
    arity: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl MarginalKernel {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

const MARGINAL_INNER_NODES: usize = 512;

/// Builds the projected kernel on `n` midpoints of `(-1, 1)`.
pub fn make_marginal(m: usize, n: usize) -> Result<MarginalKernel> {
    if m == 0 || m > MAX_ARITY {
        return Err(Error::invalid(format!("kernel arity {m} unsupported")));
    }
    if n < MIN_RESOLUTION {
        return Err(Error::invalid(format!(
            "kernel needs at least {MIN_RESOLUTION} nodes per axis, got {n}"
        )));
    }
    let nodes: Vec<f64> = (0..n).map(|i| midpoint(i, n)).collect();
    let density = |s: f64| -> f64 {
        if m == 1 {
            return bump(s * s);
        }
        // (m-1)-dimensional slice through the ball at height s, in polar form.
        let r2 = 1.0 - s * s;
        let r = r2.sqrt();
        let q = MARGINAL_INNER_NODES;
        let mut acc = 0.0;
        for j in 0..q {
            let v = (j as f64 + 0.5) / q as f64;
            acc += (-1.0 / (r2 * (1.0 - v * v))).exp() * v.powi(m as i32 - 2);
        }
        r.powi(m as i32 - 1) * acc / q as f64
    };
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            if 2 * i + 1 < n {
                density(nodes[i])
            } else {
                density(-nodes[i])
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(MarginalKernel {
        arity: m,
        nodes,
        weights: raw.iter().map(|r| r / total).collect(),
    })
}

/// Lazily built kernels of every arity at one resolution.
#[derive(Debug)]
pub struct KernelBank {
    resolution: usize,
    full: [OnceLock<BumpKernel>; MAX_ARITY + 1],
    marginal: [OnceLock<MarginalKernel>; MAX_ARITY + 1],
}

impl KernelBank {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::invalid(format!(
                "kernel needs at least {MIN_RESOLUTION} nodes per axis, got {resolution}"
            )));
        }
        Ok(KernelBank {
            resolution,
            full: Default::default(),
            marginal: Default::default(),
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Tensor kernel of arity `m`; capped at [`HIGH_ARITY_RESOLUTION`] nodes per axis for `m >= 4`.
    pub fn full(&self, m: usize) -> &BumpKernel {
        self.full[m].get_or_init(|| {
            let n = if m <= 3 {
                self.resolution
            } else {
                self.resolution.min(HIGH_ARITY_RESOLUTION)
            };
            make_kernel(m, n).expect("validated resolution")
        })
    }

    pub fn marginal(&self, m: usize) -> &MarginalKernel {
        self.marginal[m].get_or_init(|| make_marginal(m, self.resolution).expect("validated resolution"))
    }
}

/// Quadrature of `delta^-m int g(point - xi') phi(xi' / delta) dxi'`.
pub fn smooth_scalar(g: impl Fn(&[f64]) -> f64, kernel: &BumpKernel, delta: f64, point: &[f64]) -> f64 {
    debug_assert_eq!(point.len(), kernel.arity());
    let m = kernel.arity();
    let mut shifted = [0.0; MAX_ARITY];
    let mut acc = 0.0;
    for (k, w) in kernel.weights().iter().enumerate() {
        let nu = kernel.node(k);
        for i in 0..m {
            shifted[i] = point[i] - delta * nu[i];
        }
        acc += w * g(&shifted[..m]);
    }
    acc
}

/// `(b, sigma, f, Phi)` mollified at radius `delta`; the control is never smoothed.
#[derive(Clone, Debug)]
pub struct SmoothedCoefficients {
    base: Arc<ProblemSpec>,
    delta: f64,
    kernels: Arc<KernelBank>,
}

impl SmoothedCoefficients {
    pub fn base(&self) -> &Arc<ProblemSpec> {
        &self.base
    }

    pub fn kernels(&self) -> &Arc<KernelBank> {
        &self.kernels
    }

    /// Same base and kernels at another radius.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(SmoothedCoefficients {
            base: Arc::clone(&self.base),
            delta,
            kernels: Arc::clone(&self.kernels),
        })
    }

    /// Smallest eigenvalue of `sigma_delta sigma_delta^T` over `samples` audit points,
    /// and the constant `c >= 0` with `measured = lambda - c delta`.
    pub fn ellipticity_loss(&self, samples: usize, seed: u64) -> Result<(f64, f64)> {
        let measured = validate_ellipticity(self, samples, seed)?.empirical_lambda;
        let lambda = self.base.constants().ellipticity;
        Ok((measured, ((lambda - measured) / self.delta).max(0.0)))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("smoothing radius {delta} is outside (0, 1]")));
    }
    Ok(())
}

impl Coefficients for SmoothedCoefficients {
    fn problem(&self) -> &ProblemSpec {
        &self.base
    }

    fn smoothing(&self) -> Option<Smoothing<'_>> {
        Some(Smoothing {
            delta: self.delta,
            kernels: &self.kernels,
        })
    }
}

/// Mollifies `b`, `sigma` in `(x, y)`, `f` in `(x, y, z)` and `Phi` in `x`.
pub fn smooth_coefficients(
    spec: impl Into<Arc<ProblemSpec>>,
    delta: f64,
    kernel_resolution: usize,
) -> Result<SmoothedCoefficients> {
    check_delta(delta)?;
    Ok(SmoothedCoefficients {
        base: spec.into(),
        delta,
        kernels: Arc::new(KernelBank::new(kernel_resolution)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::model::{preset, validate_lipschitz, CoefficientMap};

    #[test]
    fn kernel_weights_sum_to_one() {
        for (m, n) in [(1, 64), (2, 32), (3, 16), (5, 8)] {
            let k = make_kernel(m, n).unwrap();
            let s: f64 = k.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "m={m}");
            assert!(k.weights().iter().all(|&w| w > 0.0));
            for i in 0..k.len() {
                let r2: f64 = k.node(i).iter().map(|v| v * v).sum();
                assert!(r2 < 1.0);
            }
        }
        assert!(make_kernel(1, 7).is_err());
    }

    #[test]
    fn one_dimensional_kernel_is_even() {
        let k = make_kernel(1, 64).unwrap();
        let n = k.len();
        for i in 0..n {
            assert_eq!(k.node(i)[0], -k.node(n - 1 - i)[0]);
            assert_eq!(k.weights()[i], k.weights()[n - 1 - i]);
        }
    }

    #[test]
    fn planar_kernel_has_zero_mean() {
        let k = make_kernel(2, 32).unwrap();
        for axis in 0..2 {
            let mean: f64 = (0..k.len()).map(|i| k.weights()[i] * k.node(i)[axis]).sum();
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_matches_projected_tensor_kernel() {
        // The projection of the fine tensor kernel on the first axis is an
        // independent estimate of the marginal moments.
        for m in 2..=3 {
            let n = if m == 2 { 128 } else { 48 };
            let tensor = make_kernel(m, n).unwrap();
            let marg = make_marginal(m, 64).unwrap();
            for p in [2, 4] {
                let a: f64 = (0..tensor.len()).map(|i| tensor.weights()[i] * tensor.node(i)[0].powi(p)).sum();
                let b: f64 = marg.nodes().iter().zip(marg.weights()).map(|(v, w)| w * v.powi(p)).sum();
                assert!((a - b).abs() < 2e-3 * a, "m={m} p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constants_and_linear_maps() {
        let k = make_kernel(1, 64).unwrap();
        assert!((smooth_scalar(|_| 7.0, &k, 0.3, &[1.2]) - 7.0).abs() < 1e-12);
        assert!(smooth_scalar(|p| p[0], &k, 0.1, &[0.0]).abs() < 1e-10);
    }

    #[test]
    fn absolute_value_at_the_kink() {
        let k = make_kernel(1, 64).unwrap();
        let v = smooth_scalar(|p| p[0].abs(), &k, 0.1, &[0.0]);
        // 1-D oracle: 0.1 * E|nu| under the continuous bump, by a fine midpoint rule.
        let n = 200_000;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let s = midpoint(i, n);
            let w = bump(s * s);
            num += w * s.abs();
            den += w;
        }
        let exact = 0.1 * num / den;
        assert!(v > 0.0 && v <= 0.1);
        assert!((v - exact).abs() < 2e-5, "{v} vs {exact}");
    }

    #[test]
    fn smoothing_uncontrolled_linear_leaves_constants() {
        let s = smooth_coefficients(preset("uncontrolled-linear").unwrap(), 0.5, 64).unwrap();
        for x in [-3.0, -0.2, 0.0, 1.7] {
            let xv = Vector::scalar(x);
            assert_eq!(s.drift(&xv, 0.3, 0.0)[0], 0.0);
            assert!((s.diffusion(&xv, 0.3).get(0, 0) - 1.0).abs() < 1e-12);
            assert_eq!(s.driver(&xv, 0.3, &Vector::scalar(0.4), 0.0), 0.0);
        }
    }

    #[test]
    fn b2_driver_gap_within_lipschitz_bound() {
        let base = preset("B2").unwrap();
        let s = smooth_coefficients(base.clone(), 0.1, 64).unwrap();
        let z = Vector::scalar(0.0);
        for x in [-1.0, 0.0, 0.5] {
            for u in [-1.0, 0.0, 1.0] {
                let xv = Vector::scalar(x);
                let gap = (s.driver(&xv, 0.0, &z, u) - base.driver(&xv, 0.0, &z, u)).abs();
                assert!(gap <= 0.2, "gap {gap}");
            }
        }
    }

    #[test]
    fn joint_terms_use_full_quadrature() {
        let p = ProblemSpec::builder("joint", 1)
            .terminal(CoefficientMap::from_state_fn(1, |xi| xi[0].abs()))
            .build()
            .unwrap();
        let s = smooth_coefficients(p, 0.1, 64).unwrap();
        let k = make_kernel(1, 64).unwrap();
        let expected = smooth_scalar(|p| p[0].abs(), &k, 0.1, &[0.0]);
        assert_eq!(s.terminal(&Vector::scalar(0.0)), expected);
    }

    #[test]
    fn smoothed_presets_keep_their_lipschitz_constant() {
        for name in ["B1", "B2"] {
            let s = smooth_coefficients(preset(name).unwrap(), 0.2, 32).unwrap();
            assert!(validate_lipschitz(&s, 2000, 1).unwrap().passed());
            let (measured, c) = s.ellipticity_loss(500, 2).unwrap();
            assert!(measured >= 0.5 && c == 0.0);
        }
    }

    #[test]
    fn delta_range_is_checked() {
        let p = preset("B1").unwrap();
        assert!(smooth_coefficients(p.clone(), 0.0, 64).is_err());
        assert!(smooth_coefficients(p.clone(), 1.5, 64).is_err());
        assert!(smooth_coefficients(p, 1.0, 4).is_err());
    }
}
