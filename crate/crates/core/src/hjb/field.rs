use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BoundaryMode, GridSpec, Jet};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

const HEADER_TAG: &str = "hjb-field";
const HEADER_VERSION: &str = "v1";
const TIME_SLACK: f64 = 1e-12;

/// How a field was produced by the solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeMeta {
    pub cfl: f64,
    pub boundary: BoundaryMode,
    /// Smallest eigenvalue of `sigma sigma^T` measured before solving.
    pub min_ellipticity: f64,
}

/// A function of `(t, x)` tabulated on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    grid: GridSpec,
    values: Vec<f64>,
    delta: f64,
    meta: Option<SchemeMeta>,
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vector(v: &Vector) -> String {
    v.as_slice().iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(",")
}

impl ValueField {
    pub(crate) fn from_parts(grid: GridSpec, values: Vec<f64>, delta: f64, meta: Option<SchemeMeta>) -> Self {
        debug_assert_eq!(values.len(), (grid.nt() + 1) * grid.n_nodes());
        ValueField {
            grid,
            values,
            delta,
            meta,
        }
    }

    /// Tabulates `f(t, x)` on the grid.
    pub fn from_fn(grid: GridSpec, delta: f64, f: impl Fn(f64, &Vector) -> f64) -> Self {
        let n = grid.n_nodes();
        let mut values = Vec::with_capacity((grid.nt() + 1) * n);
        for level in 0..=grid.nt() {
            let t = grid.time(level);
            values.extend((0..n).map(|idx| f(t, &grid.node(idx))));
        }
        Self::from_parts(grid, values, delta, None)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn meta(&self) -> Option<&SchemeMeta> {
        self.meta.as_ref()
    }

    /// Boundary closure used for node jets (the solver's if known).
    pub fn boundary(&self) -> BoundaryMode {
        self.meta.map_or(BoundaryMode::default(), |m| m.boundary)
    }

    /// All values, time level major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self, level: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[level * n..(level + 1) * n]
    }

    /// Value and finite-difference derivatives at a grid node.
    pub fn node_jet(&self, level: usize, idx: usize) -> Jet {
        self.grid.jet(self.level(level), idx, self.boundary())
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let (t0, t1) = (self.grid.t0(), self.grid.horizon());
        if !(t >= t0 - TIME_SLACK && t <= t1 + TIME_SLACK) {
            return Err(Error::OutOfDomain { t, x: Vec::new() });
        }
        Ok(t.clamp(t0, t1))
    }

    fn time_bracket(&self, t: f64) -> (usize, f64) {
        let s = (t - self.grid.t0()) / self.grid.dt();
        let k = (s.floor() as usize).min(self.grid.nt() - 1);
        (k, (s - k as f64).clamp(0.0, 1.0))
    }

    fn spatial(&self, level: usize, x: &Vector) -> f64 {
        let g = &self.grid;
        let h = g.h();
        let lo = g.x_lo();
        let values = self.level(level);
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..g.dim() {
            let s = ((x[k] - lo[k]) / h[k]).clamp(0.0, (g.nx() - 1) as f64);
            let i = (s.floor() as usize).min(g.nx() - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        match g.dim() {
            1 => values[base[0]] * (1.0 - frac[0]) + values[base[0] + 1] * frac[0],
            _ => {
                let v = |a: usize, b: usize| values[g.ravel([base[0] + a, base[1] + b])];
                (1.0 - frac[0]) * ((1.0 - frac[1]) * v(0, 0) + frac[1] * v(0, 1))
                    + frac[0] * ((1.0 - frac[1]) * v(1, 0) + frac[1] * v(1, 1))
            }
        }
    }

    pub(crate) fn interpolate(&self, t: f64, x: &Vector) -> f64 {
        let (k, w) = self.time_bracket(t);
        let a = self.spatial(k, x);
        if w == 0.0 {
            return a;
        }
        (1.0 - w) * a + w * self.spatial(k + 1, x)
    }

    fn check(&self, t: f64, x: &Vector, margin: f64) -> Result<f64> {
        let t = self.check_time(t).map_err(|_| Error::OutOfDomain {
            t,
            x: x.as_slice().to_vec(),
        })?;
        if !self.grid.contains(x, margin - 1e-12 * margin.max(1.0)) {
            return Err(Error::OutOfDomain {
                t,
                x: x.as_slice().to_vec(),
            });
        }
        Ok(t)
    }

    /// Multilinear interpolation in space, linear in time, anywhere in the box.
    pub fn eval(&self, t: f64, x: &Vector) -> Result<f64> {
        let t = self.check(t, x, 0.0)?;
        Ok(self.interpolate(t, x))
    }

    fn derivative_margin(&self) -> f64 {
        2.0 * self.grid.h().max_abs()
    }

    /// Central differences of interpolated values with step `h`; needs a `2h` margin.
    pub fn grad(&self, t: f64, x: &Vector) -> Result<Vector> {
        let t = self.check(t, x, self.derivative_margin())?;
        Ok(self.grad_unchecked(t, x))
    }

    pub(crate) fn grad_unchecked(&self, t: f64, x: &Vector) -> Vector {
        let h = self.grid.h();
        let mut g = Vector::zeros(self.grid.dim());
        for k in 0..self.grid.dim() {
            let mut e = Vector::zeros(self.grid.dim());
            e[k] = h[k];
            g[k] = (self.interpolate(t, &(*x + e)) - self.interpolate(t, &(*x - e))) / (2.0 * h[k]);
        }
        g
    }

    pub fn hess(&self, t: f64, x: &Vector) -> Result<Matrix> {
        let t = self.check(t, x, self.derivative_margin())?;
        let d = self.grid.dim();
        let h = self.grid.h();
        let f = |y: Vector| self.interpolate(t, &y);
        let unit = |k: usize| {
            let mut e = Vector::zeros(d);
            e[k] = h[k];
            e
        };
        let mut m = Matrix::zeros(d);
        let centre = f(*x);
        for a in 0..d {
            let e = unit(a);
            m.set(a, a, (f(*x + e) - 2.0 * centre + f(*x - e)) / (h[a] * h[a]));
        }
        if d == 2 {
            let (e0, e1) = (unit(0), unit(1));
            let c = (f(*x + e0 + e1) - f(*x + e0 - e1) - f(*x - e0 + e1) + f(*x - e0 - e1)) / (4.0 * h[0] * h[1]);
            m.set(0, 1, c);
            m.set(1, 0, c);
        }
        Ok(m)
    }

    /// Largest `|grad V|` over all nodes and time levels.
    pub fn gradient_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for level in 0..=self.grid.nt() {
            for idx in 0..self.grid.n_nodes() {
                best = best.max(self.node_jet(level, idx).grad.norm());
            }
        }
        best
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Text form: a header line `hjb-field v1 d nx nt t0 T x_lo x_hi delta`
    /// (box corners comma-joined when `d = 2`), then one line per time level.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        writeln!(
            out,
            "{HEADER_TAG} {HEADER_VERSION} {} {} {} {} {} {} {} {}",
            g.dim(),
            g.nx(),
            g.nt(),
            fmt_real(g.t0()),
            fmt_real(g.horizon()),
            fmt_vector(&g.x_lo()),
            fmt_vector(&g.x_hi()),
            fmt_real(self.delta)
        )
        .expect("string write");
        for level in 0..=g.nt() {
            let line: Vec<String> = self.level(level).iter().map(|v| fmt_real(*v)).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty field file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 10 || parts[0] != HEADER_TAG || parts[1] != HEADER_VERSION {
            return Err(err(1, format!("expected `{HEADER_TAG} {HEADER_VERSION}` header with 10 fields")));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(1, format!("`{s}`: {e}")));
        let real = |s: &str| s.parse::<f64>().map_err(|e| err(1, format!("`{s}`: {e}")));
        let vector = |s: &str| -> Result<Vector> {
            let v = s.split(',').map(real).collect::<Result<Vec<_>>>()?;
            if v.is_empty() || v.len() > crate::linalg::MAX_DIM {
                return Err(err(1, format!("bad box corner `{s}`")));
            }
            Ok(Vector::from_slice(&v))
        };
        let d = int(parts[2])?;
        let nx = int(parts[3])?;
        let nt = int(parts[4])?;
        let t0 = real(parts[5])?;
        let horizon = real(parts[6])?;
        let (lo, hi) = (vector(parts[7])?, vector(parts[8])?);
        let delta = real(parts[9])?;
        if lo.dim() != d || hi.dim() != d {
            return Err(err(1, format!("box corners do not have dimension {d}")));
        }
        let grid = GridSpec::new(lo, hi, nx, nt, t0, horizon).map_err(|e| err(1, e.to_string()))?;
        let n = grid.n_nodes();
        let mut values = Vec::with_capacity((nt + 1) * n);
        for level in 0..=nt {
            let lineno = level + 2;
            let line = lines
                .next()
                .ok_or_else(|| err(lineno, format!("missing time level {level}")))?;
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| err(lineno, format!("`{tok}`: {e}")))?);
            }
            if values.len() - before != n {
                return Err(err(lineno, format!("expected {n} values, found {}", values.len() - before)));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err(nt + 3, "trailing data after the last time level".into()));
        }
        Ok(Self::from_parts(grid, values, delta, None))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }

    /// `t,x,v` rows (`t,x1,x2,v` when `d = 2`) for every node and level.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::from(if g.dim() == 1 { "t,x,v\n" } else { "t,x1,x2,v\n" });
        for level in 0..=g.nt() {
            let t = fmt_real(g.time(level));
            for (idx, v) in self.level(level).iter().enumerate() {
                writeln!(out, "{t},{},{}", fmt_vector(&g.node(idx)), fmt_real(*v)).expect("string write");
            }
        }
        out
    }
}
