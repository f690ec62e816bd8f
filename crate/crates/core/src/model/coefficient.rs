//! Coefficient maps as sums of control-separable terms.
//!
//! A map of arity `m` is evaluated at a packed argument vector `xi` (for the drift
//! and diffusion `xi = (x, y)`, for the driver `xi = (x, y, z)`, for the terminal
//! cost `xi = x`) and a control value `u`. Each term has the form
//!
//! ```text
//! c(u) * g(a . xi)      ridge term
//! c(u)                  control-only term
//! h(xi, u)              joint term
//! ```
//!
//! Smoothing acts on `xi` only. A ridge term is smoothed through the one-dimensional
//! marginal of the radial kernel, which is exact for radial kernels and costs one
//! quadrature line instead of a full tensor grid. Joint terms fall back to the
//! full `m`-dimensional quadrature.

use std::fmt;
use std::sync::Arc;

use arrayvec::ArrayVec;
use smallvec::SmallVec;

use crate::linalg::MAX_DIM;
use crate::mollify::{smooth_scalar, KernelBank};

/// Largest arity of any coefficient map (`f` takes `(x, y, z)`).
pub const MAX_ARITY: usize = 2 * MAX_DIM + 1;

/// Packed argument vector.
pub type Args = ArrayVec<f64, MAX_ARITY>;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type JointFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Unit,
    Ridge {
        direction: ArrayVec<f64, MAX_ARITY>,
        norm: f64,
        profile: ScalarFn,
    },
    Joint(JointFn),
}

#[derive(Clone)]
struct Term {
    factor: Option<ScalarFn>,
    shape: Shape,
    varies_with_control: bool,
}

/// Smoothing context: mollification radius and the kernels to integrate against.
#[derive(Clone, Copy)]
pub struct Smoothing<'a> {
    pub delta: f64,
    pub kernels: &'a KernelBank,
}

/// A scalar coefficient `(xi, u) -> R`.
#[derive(Clone)]
pub struct CoefficientMap {
    arity: usize,
    terms: Vec<Term>,
}

impl CoefficientMap {
    /// The zero map.
    pub fn zero(arity: usize) -> Self {
        assert!((1..=MAX_ARITY).contains(&arity), "arity {arity} unsupported");
        CoefficientMap {
            arity,
            terms: Vec::new(),
        }
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        Self::zero(arity).plus_constant(c)
    }

    /// A general map smoothed by full quadrature.
    pub fn from_fn(arity: usize, h: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::zero(arity).plus_joint(h)
    }

    /// A general control-free map smoothed by full quadrature.
    pub fn from_state_fn(arity: usize, h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        let mut m = Self::zero(arity);
        m.terms.push(Term {
            factor: None,
            shape: Shape::Joint(Arc::new(move |xi, _| h(xi))),
            varies_with_control: false,
        });
        m
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        if c != 0.0 {
            self.terms.push(Term {
                factor: Some(Arc::new(move |_| c)),
                shape: Shape::Unit,
                varies_with_control: false,
            });
        }
        self
    }

    /// Adds `c(u)`.
    pub fn plus_control(mut self, c: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terms.push(Term {
            factor: Some(Arc::new(c)),
            shape: Shape::Unit,
            varies_with_control: true,
        });
        self
    }

    /// Adds `g(a . xi)`.
    pub fn plus_ridge(self, direction: &[f64], g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.push_ridge(None, direction, Arc::new(g))
    }

    /// Adds `c(u) * g(a . xi)`.
    pub fn plus_controlled_ridge(
        self,
        c: impl Fn(f64) -> f64 + Send + Sync + 'static,
        direction: &[f64],
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.push_ridge(Some(Arc::new(c)), direction, Arc::new(g))
    }

    /// Adds a general term `h(xi, u)`.
    pub fn plus_joint(mut self, h: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terms.push(Term {
            factor: None,
            shape: Shape::Joint(Arc::new(h)),
            varies_with_control: true,
        });
        self
    }

    fn push_ridge(mut self, factor: Option<ScalarFn>, direction: &[f64], profile: ScalarFn) -> Self {
        assert_eq!(
            direction.len(),
            self.arity,
            "ridge direction has length {} but the map has arity {}",
            direction.len(),
            self.arity
        );
        let norm = direction.iter().map(|a| a * a).sum::<f64>().sqrt();
        self.terms.push(Term {
            varies_with_control: factor.is_some(),
            factor,
            shape: Shape::Ridge {
                direction: direction.iter().copied().collect(),
                norm,
                profile,
            },
        });
        self
    }

    /// True when some term varies with the control.
    pub fn depends_on_control(&self) -> bool {
        self.terms.iter().any(|t| t.varies_with_control)
    }

    /// Direct evaluation without smoothing.
    pub fn eval(&self, xi: &[f64], u: f64) -> f64 {
        self.prepare(xi, None).at(u)
    }

    /// Evaluates every `u`-independent factor once so that repeated
    /// evaluation over a control grid only pays for the control factors.
    pub fn prepare<'a>(&'a self, xi: &[f64], smoothing: Option<Smoothing<'a>>) -> Prepared<'a> {
        debug_assert_eq!(xi.len(), self.arity);
        let values = self
            .terms
            .iter()
            .map(|term| match &term.shape {
                Shape::Unit => 1.0,
                Shape::Ridge {
                    direction,
                    norm,
                    profile,
                } => {
                    let s: f64 = direction.iter().zip(xi).map(|(a, x)| a * x).sum();
                    match smoothing {
                        Some(sm) if *norm > 0.0 => {
                            let kernel = sm.kernels.marginal(self.arity);
                            let scale = sm.delta * norm;
                            kernel
                                .nodes()
                                .iter()
                                .zip(kernel.weights())
                                .map(|(nu, w)| w * profile(s - scale * nu))
                                .sum()
                        }
                        _ => profile(s),
                    }
                }
                Shape::Joint(_) => f64::NAN,
            })
            .collect();
        Prepared {
            map: self,
            smoothing,
            xi: xi.iter().copied().collect(),
            values,
        }
    }
}

impl fmt::Debug for CoefficientMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientMap")
            .field("arity", &self.arity)
            .field("terms", &self.terms.len())
            .finish()
    }
}

/// A map with its control-independent parts already evaluated at a fixed `xi`.
pub struct Prepared<'a> {
    map: &'a CoefficientMap,
    smoothing: Option<Smoothing<'a>>,
    xi: Args,
    values: SmallVec<[f64; 6]>,
}

impl Prepared<'_> {
    pub fn at(&self, u: f64) -> f64 {
        let mut total = 0.0;
        for (term, &value) in self.map.terms.iter().zip(&self.values) {
            let shape = match &term.shape {
                Shape::Joint(h) => match self.smoothing {
                    Some(sm) => {
                        let kernel = sm.kernels.full(self.map.arity);
                        smooth_scalar(|p| h(p, u), kernel, sm.delta, &self.xi)
                    }
                    None => h(&self.xi, u),
                },
                _ => value,
            };
            total += match &term.factor {
                Some(c) => c(u) * shape,
                None => shape,
            };
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terms_add_up() {
        let m = CoefficientMap::zero(3)
            .plus_constant(1.0)
            .plus_control(|u| u * u)
            .plus_controlled_ridge(|u| u, &[1.0, 0.0, 0.0], f64::tanh)
            .plus_ridge(&[0.0, 0.0, 1.0], |s| 0.25 * s.tanh())
            .plus_joint(|xi, u| xi[1] * u);
        let xi = [0.3, -0.2, 0.7];
        let u = 0.4;
        let expected = 1.0 + u * u + u * 0.3f64.tanh() + 0.25 * 0.7f64.tanh() + (-0.2) * u;
        assert!((m.eval(&xi, u) - expected).abs() < 1e-15);
        let prep = m.prepare(&xi, None);
        assert!((prep.at(u) - expected).abs() < 1e-15);
    }

    #[test]
    fn control_dependence_is_detected() {
        assert!(!CoefficientMap::constant(2, 3.0).depends_on_control());
        assert!(!CoefficientMap::zero(2).plus_ridge(&[1.0, 1.0], f64::tanh).depends_on_control());
        assert!(CoefficientMap::zero(2).plus_control(|u| u).depends_on_control());
        assert!(CoefficientMap::zero(2)
            .plus_controlled_ridge(|u| u, &[1.0, 0.0], f64::tanh)
            .depends_on_control());
    }
}
