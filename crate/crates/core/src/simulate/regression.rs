//! Least-squares projection on tensor Hermite polynomials of the standardized state.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{Vector, MAX_DIM};

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 8;

/// Eigenvalues below this fraction of the largest one count as rank loss.
const RANK_TOLERANCE: f64 = 1e-10;
/// Axes whose sample spread is below this are treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-12;

fn hermite(s: f64, degree: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if degree >= 1 {
        out[1] = s;
    }
    for n in 1..degree {
        out[n + 1] = s * out[n] - n as f64 * out[n - 1];
    }
}

/// Polynomial basis in standardized coordinates, fitted to a sample cloud.
#[derive(Clone, Debug)]
pub struct Basis {
    dim: usize,
    degree: usize,
    mean: [f64; MAX_DIM],
    scale: [f64; MAX_DIM],
    active: [bool; MAX_DIM],
    lo: [f64; MAX_DIM],
    hi: [f64; MAX_DIM],
    exponents: Vec<[usize; MAX_DIM]>,
}

impl Basis {
    /// Standardizes each axis over `points`; constant axes drop out of the basis.
    pub fn fit(points: &[Vector], degree: usize) -> Self {
        let dim = points[0].dim();
        let n = points.len() as f64;
        let mut mean = [0.0; MAX_DIM];
        let mut scale = [1.0; MAX_DIM];
        let mut active = [false; MAX_DIM];
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for k in 0..dim {
            let m = points.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean[k] = m;
            if sd > DEGENERATE_SPREAD * (1.0 + m.abs()) {
                active[k] = true;
                scale[k] = sd;
                lo[k] = points.iter().map(|p| (p[k] - m) / sd).fold(f64::INFINITY, f64::min);
                hi[k] = points.iter().map(|p| (p[k] - m) / sd).fold(f64::NEG_INFINITY, f64::max);
            }
        }
        let mut exponents = Vec::new();
        let cap = |k: usize| if k < dim && active[k] { degree } else { 0 };
        for a in 0..=cap(0) {
            for b in 0..=cap(1) {
                if a + b <= degree {
                    exponents.push([a, b]);
                }
            }
        }
        Basis {
            dim,
            degree,
            mean,
            scale,
            active,
            lo,
            hi,
            exponents,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Basis values at `x`; standardized coordinates are clamped to the fitted range.
    pub fn eval_into(&self, x: &Vector, out: &mut [f64]) {
        let mut table = [[0.0; 16]; MAX_DIM];
        for k in 0..MAX_DIM {
            if k < self.dim && self.active[k] {
                let s = ((x[k] - self.mean[k]) / self.scale[k]).clamp(self.lo[k], self.hi[k]);
                hermite(s, self.degree, &mut table[k]);
            } else {
                table[k][0] = 1.0;
            }
        }
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = table[0][e[0]] * table[1][e[1]];
        }
    }

    pub fn eval(&self, x: &Vector) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }
}

/// Fitted least-squares projector for one sample cloud.
#[derive(Clone, Debug)]
pub struct Regression {
    basis: Basis,
    design: DMatrix<f64>,
    pinv_gram: DMatrix<f64>,
}

/// A fitted function `x -> sum_j c_j psi_j(x)`.
#[derive(Clone, Debug)]
pub struct Fit {
    basis: Basis,
    coefficients: Vec<f64>,
}

impl Fit {
    pub fn eval(&self, x: &Vector) -> f64 {
        let mut buf = [0.0; 64];
        let n = self.basis.len();
        self.basis.eval_into(x, &mut buf[..n]);
        buf[..n].iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}

impl Regression {
    /// Builds the projector; fails when the Gram matrix loses rank.
    pub fn new(points: &[Vector], degree: usize, step: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::invalid(format!("basis degree above {MAX_DEGREE} is unsupported")));
        }
        let basis = Basis::fit(points, degree);
        let p = basis.len();
        let n = points.len();
        let mut design = DMatrix::<f64>::zeros(n, p);
        let mut row = vec![0.0; p];
        for (i, x) in points.iter().enumerate() {
            basis.eval_into(x, &mut row);
            for j in 0..p {
                design[(i, j)] = row[j];
            }
        }
        let gram = design.transpose() * &design;
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
        let rank = eig.eigenvalues.iter().filter(|&&v| v > RANK_TOLERANCE * top).count();
        if rank < p || top <= 0.0 {
            return Err(Error::RankDeficient { step, rank, basis: p });
        }
        let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
        let pinv_gram = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
        Ok(Regression {
            basis,
            design,
            pinv_gram,
        })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// Least-squares fit of `targets` (one per sample point).
    pub fn fit(&self, targets: &[f64]) -> Fit {
        let y = DVector::from_column_slice(targets);
        let c = &self.pinv_gram * (self.design.transpose() * y);
        Fit {
            basis: self.basis.clone(),
            coefficients: c.iter().copied().collect(),
        }
    }

    /// Fitted values at the sample points.
    pub fn fitted(&self, fit: &Fit) -> Vec<f64> {
        let c = DVector::from_column_slice(&fit.coefficients);
        (&self.design * c).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_recursion() {
        let mut h = [0.0; 5];
        hermite(2.0, 4, &mut h);
        assert_eq!(h, [1.0, 2.0, 3.0, 2.0, -5.0]);
    }

    #[test]
    fn polynomials_are_recovered_exactly() {
        let pts: Vec<Vector> = (0..200).map(|i| Vector::scalar(-2.0 + 0.02 * i as f64)).collect();
        let y: Vec<f64> = pts.iter().map(|x| 1.0 - 2.0 * x[0] + 0.5 * x[0].powi(3)).collect();
        let r = Regression::new(&pts, 4, 0).unwrap();
        let fit = r.fit(&y);
        for (x, v) in pts.iter().zip(&y) {
            assert!((fit.eval(x) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_cloud_reduces_to_the_mean() {
        let pts = vec![Vector::from_slice(&[0.5, -1.0]); 10];
        let r = Regression::new(&pts, 6, 0).unwrap();
        assert_eq!(r.basis().len(), 1);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!((r.fit(&y).eval(&pts[0]) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_points_is_rank_deficient() {
        let pts: Vec<Vector> = (0..20).map(|i| Vector::scalar((i % 3) as f64)).collect();
        assert!(matches!(Regression::new(&pts, 6, 7), Err(Error::RankDeficient { step: 7, .. })));
    }

    #[test]
    fn planar_basis_size() {
        let pts: Vec<Vector> = (0..400)
            .map(|i| Vector::from_slice(&[(i % 20) as f64, (i / 20) as f64 * 0.3]))
            .collect();
        let r = Regression::new(&pts, 3, 0).unwrap();
        assert_eq!(r.basis().len(), 10);
    }
}
