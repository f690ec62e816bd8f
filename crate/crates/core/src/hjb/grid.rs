use smallvec::SmallVec;

use super::BoundaryMode;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Space-time grid on the truncation box `[x_lo, x_hi]` and `[t0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    x_lo: Vector,
    x_hi: Vector,
    nx: usize,
    nt: usize,
    t0: f64,
    horizon: f64,
}

/// Value, gradient and Hessian at a node, from finite differences.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

/// Weighted differences `w (V[a] - V[b])` along one axis.
type Stencil = SmallVec<[(usize, usize, f64); 3]>;

impl GridSpec {
    pub fn new(x_lo: Vector, x_hi: Vector, nx: usize, nt: usize, t0: f64, horizon: f64) -> Result<Self> {
        if x_lo.dim() != x_hi.dim() {
            return Err(Error::invalid("box corners have different dimensions"));
        }
        if (0..x_lo.dim()).any(|k| !(x_lo[k] < x_hi[k])) {
            return Err(Error::invalid(format!("empty box {x_lo:?} .. {x_hi:?}")));
        }
        if nx < 3 {
            return Err(Error::invalid("a grid needs at least 3 points per axis"));
        }
        if nt < 1 {
            return Err(Error::invalid("a grid needs at least one time step"));
        }
        if !(t0 >= 0.0 && t0 < horizon) {
            return Err(Error::invalid(format!("time window [{t0}, {horizon}] is empty")));
        }
        Ok(GridSpec {
            x_lo,
            x_hi,
            nx,
            nt,
            t0,
            horizon,
        })
    }

    /// The box `[-half_width, half_width]^d`.
    pub fn cube(dim: usize, half_width: f64, nx: usize, nt: usize, t0: f64, horizon: f64) -> Result<Self> {
        Self::new(
            Vector::splat(dim, -half_width),
            Vector::splat(dim, half_width),
            nx,
            nt,
            t0,
            horizon,
        )
    }

    pub fn with_nt(&self, nt: usize) -> Result<Self> {
        Self::new(self.x_lo, self.x_hi, self.nx, nt, self.t0, self.horizon)
    }

    pub fn dim(&self) -> usize {
        self.x_lo.dim()
    }

    pub fn x_lo(&self) -> Vector {
        self.x_lo
    }

    pub fn x_hi(&self) -> Vector {
        self.x_hi
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Spatial step per axis.
    pub fn h(&self) -> Vector {
        let mut h = Vector::zeros(self.dim());
        for k in 0..self.dim() {
            h[k] = (self.x_hi[k] - self.x_lo[k]) / (self.nx - 1) as f64;
        }
        h
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.nt as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        if level == self.nt {
            self.horizon
        } else {
            self.t0 + level as f64 * self.dt()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.dim() as u32)
    }

    /// Axis indices of a flat node index; the last axis varies fastest.
    pub fn unravel(&self, idx: usize) -> [usize; 2] {
        match self.dim() {
            1 => [idx, 0],
            _ => [idx / self.nx, idx % self.nx],
        }
    }

    pub fn ravel(&self, ij: [usize; 2]) -> usize {
        match self.dim() {
            1 => ij[0],
            _ => ij[0] * self.nx + ij[1],
        }
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_hi[axis]
        } else {
            self.x_lo[axis] + i as f64 * self.h()[axis]
        }
    }

    pub fn node(&self, idx: usize) -> Vector {
        let ij = self.unravel(idx);
        let mut x = Vector::zeros(self.dim());
        for k in 0..self.dim() {
            x[k] = self.coordinate(k, ij[k]);
        }
        x
    }

    /// True when node `idx` lies within `layers` nodes of the boundary.
    pub fn near_boundary(&self, idx: usize, layers: usize) -> bool {
        let ij = self.unravel(idx);
        (0..self.dim()).any(|k| ij[k] < layers || ij[k] + layers >= self.nx)
    }

    /// Whether `x` lies in the box shrunk by `margin` on every side.
    pub fn contains(&self, x: &Vector, margin: f64) -> bool {
        x.dim() == self.dim() && (0..self.dim()).all(|k| x[k] >= self.x_lo[k] + margin && x[k] <= self.x_hi[k] - margin)
    }

    /// Projects `x` onto the box shrunk by `margin`.
    pub fn clamp(&self, x: &Vector, margin: f64) -> Vector {
        let mut out = *x;
        for k in 0..self.dim() {
            out[k] = out[k].clamp(self.x_lo[k] + margin, self.x_hi[k] - margin);
        }
        out
    }

    fn first_stencil(&self, i: usize, h: f64, mode: BoundaryMode) -> Stencil {
        let n = self.nx;
        let mut s = Stencil::new();
        if i > 0 && i + 1 < n {
            s.push((i + 1, i - 1, 0.5 / h));
            return s;
        }
        let sign = if i == 0 { 1.0 } else { -1.0 };
        let at = |k: usize| if i == 0 { k } else { n - 1 - k };
        match mode {
            BoundaryMode::OneSided => {
                s.push((at(1), at(0), sign * 1.5 / h));
                s.push((at(2), at(1), sign * -0.5 / h));
            }
            BoundaryMode::Linear => {
                s.push((at(1), at(0), sign / h));
            }
        }
        s
    }

    fn second_stencil(&self, i: usize, h: f64, mode: BoundaryMode) -> Stencil {
        let n = self.nx;
        let h2 = h * h;
        let mut s = Stencil::new();
        if i > 0 && i + 1 < n {
            s.push((i + 1, i, 1.0 / h2));
            s.push((i - 1, i, 1.0 / h2));
            return s;
        }
        let at = |k: usize| if i == 0 { k } else { n - 1 - k };
        match mode {
            BoundaryMode::OneSided if n >= 4 => {
                s.push((at(0), at(1), 2.0 / h2));
                s.push((at(2), at(1), 3.0 / h2));
                s.push((at(2), at(3), 1.0 / h2));
            }
            BoundaryMode::OneSided => {
                s.push((at(0), at(1), 1.0 / h2));
                s.push((at(2), at(1), 1.0 / h2));
            }
            BoundaryMode::Linear => {}
        }
        s
    }

    /// Finite-difference jet of `level` (one time slice) at node `idx`: central
    /// differences inside, the `mode` closure at the outermost nodes.
    pub fn jet(&self, level: &[f64], idx: usize, mode: BoundaryMode) -> Jet {
        let d = self.dim();
        let h = self.h();
        let ij = self.unravel(idx);
        let mut grad = Vector::zeros(d);
        let mut hess = Matrix::zeros(d);
        let at = |axis: usize, k: usize| {
            let mut c = ij;
            c[axis] = k;
            level[self.ravel(c)]
        };
        let apply = |axis: usize, s: &Stencil| -> f64 { s.iter().map(|&(a, b, w)| w * (at(axis, a) - at(axis, b))).sum() };
        for a in 0..d {
            grad[a] = apply(a, &self.first_stencil(ij[a], h[a], mode));
            hess.set(a, a, apply(a, &self.second_stencil(ij[a], h[a], mode)));
        }
        if d == 2 {
            let s0 = self.first_stencil(ij[0], h[0], mode);
            let s1 = self.first_stencil(ij[1], h[1], mode);
            let v = |i: usize, j: usize| level[self.ravel([i, j])];
            let mut cross = 0.0;
            for &(a0, b0, w0) in &s0 {
                for &(a1, b1, w1) in &s1 {
                    cross += w0 * w1 * ((v(a0, a1) - v(b0, a1)) - (v(a0, b1) - v(b0, b1)));
                }
            }
            if mode == BoundaryMode::Linear && self.near_boundary(idx, 1) {
                cross = 0.0;
            }
            hess.set(0, 1, cross);
            hess.set(1, 0, cross);
        }
        Jet {
            value: level[idx],
            grad,
            hess,
        }
    }
}
