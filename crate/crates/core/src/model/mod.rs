//! Control problems: coefficients, declared constants, and the compact control set.

mod coefficient;
pub mod presets;
pub mod validate;

use arrayvec::ArrayVec;

pub use coefficient::{Args, CoefficientMap, Prepared, Smoothing, MAX_ARITY};
pub use presets::{preset, PresetRegistry};
pub use validate::{
    validate_all, validate_bounds, validate_ellipticity, validate_lipschitz, SamplingBox, ValidationReport,
    Violation,
};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector, MAX_DIM};

#[derive(Clone, Debug, PartialEq)]
enum ControlKind {
    Interval { lo: f64, hi: f64 },
    Finite,
}

/// The compact control set `U` together with the grid used for minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    kind: ControlKind,
    grid: Vec<f64>,
}

impl ControlSet {
    /// `[lo, hi]` discretized by `resolution` equispaced points including both ends.
    pub fn interval(lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("control interval [{lo}, {hi}] is empty")));
        }
        if resolution < 2 {
            return Err(Error::invalid("an interval control set needs resolution >= 2"));
        }
        let n = (resolution - 1) as f64;
        let grid = (0..resolution)
            .map(|i| if i + 1 == resolution { hi } else { lo + (hi - lo) * i as f64 / n })
            .collect();
        Ok(ControlSet {
            kind: ControlKind::Interval { lo, hi },
            grid,
        })
    }

    /// A finite set of strictly increasing points.
    pub fn finite(points: &[f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a finite control set needs at least one point"));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("finite control points must be strictly increasing"));
        }
        Ok(ControlSet {
            kind: ControlKind::Finite,
            grid: points.to_vec(),
        })
    }

    /// Minimization grid, ascending.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn resolution(&self) -> usize {
        self.grid.len()
    }

    pub fn is_interval(&self) -> bool {
        matches!(self.kind, ControlKind::Interval { .. })
    }

    /// Smallest and largest admissible values.
    pub fn bounds(&self) -> (f64, f64) {
        match self.kind {
            ControlKind::Interval { lo, hi } => (lo, hi),
            ControlKind::Finite => (self.grid[0], self.grid[self.grid.len() - 1]),
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        match self.kind {
            ControlKind::Interval { lo, hi } => (lo..=hi).contains(&u),
            ControlKind::Finite => self.grid.contains(&u),
        }
    }

    /// Same set with a different grid resolution (interval sets only).
    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        match self.kind {
            ControlKind::Interval { lo, hi } => Self::interval(lo, hi, resolution),
            ControlKind::Finite => Ok(self.clone()),
        }
    }

    /// Grid point closest to `u`, ties to the smaller point.
    pub fn nearest(&self, u: f64) -> f64 {
        let mut best = self.grid[0];
        for &p in &self.grid {
            if (p - u).abs() < (best - u).abs() {
                best = p;
            }
        }
        best
    }
}

/// Declared constants of the standing assumptions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    /// Uniform Lipschitz constant `K`.
    pub lipschitz: f64,
    /// Ellipticity constant `lambda`.
    pub ellipticity: f64,
    /// Common sup bound `M` of `b`, `sigma`, `f`, `Phi`.
    pub bound: f64,
}

/// The coefficient quadruple `(b, sigma, f, Phi)` with its constants and control set.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    name: String,
    dim: usize,
    horizon: f64,
    drift: Vec<CoefficientMap>,
    diffusion: Vec<CoefficientMap>,
    driver: CoefficientMap,
    terminal: CoefficientMap,
    constants: Constants,
    controls: ControlSet,
}

impl ProblemSpec {
    /// Starts a problem with `b = 0`, `sigma = I`, `f = 0`, `Phi = 0`.
    pub fn builder(name: impl Into<String>, dim: usize) -> ProblemBuilder {
        assert!((1..=MAX_DIM).contains(&dim), "state dimension {dim} unsupported");
        let diffusion = (0..dim * dim)
            .map(|k| CoefficientMap::constant(dim + 1, if k % (dim + 1) == 0 { 1.0 } else { 0.0 }))
            .collect();
        ProblemBuilder {
            spec: ProblemSpec {
                name: name.into(),
                dim,
                horizon: 1.0,
                drift: (0..dim).map(|_| CoefficientMap::zero(dim + 1)).collect(),
                diffusion,
                driver: CoefficientMap::zero(2 * dim + 1),
                terminal: CoefficientMap::zero(dim),
                constants: Constants {
                    lipschitz: 1.0,
                    ellipticity: 1.0,
                    bound: 1.0,
                },
                controls: ControlSet::finite(&[0.0]).expect("singleton control set"),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn constants(&self) -> Constants {
        self.constants
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn drift_map(&self, i: usize) -> &CoefficientMap {
        &self.drift[i]
    }

    pub fn diffusion_map(&self, i: usize, j: usize) -> &CoefficientMap {
        &self.diffusion[i * self.dim + j]
    }

    pub fn driver_map(&self) -> &CoefficientMap {
        &self.driver
    }

    pub fn terminal_map(&self) -> &CoefficientMap {
        &self.terminal
    }

    /// Whether `b` or `sigma` read the backward component `y`.
    pub fn is_coupled(&self) -> bool {
        let probe = |m: &CoefficientMap| {
            let mut a: Args = ArrayVec::new();
            let mut b: Args = ArrayVec::new();
            for k in 0..m.arity() {
                let v = 0.37 + 0.11 * k as f64;
                a.push(v);
                b.push(if k == self.dim { v + 0.83 } else { v });
            }
            self.controls.grid().iter().any(|&u| m.eval(&a, u) != m.eval(&b, u))
        };
        self.drift.iter().chain(&self.diffusion).any(probe)
    }

    /// Copy with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    /// Copy with a replaced driver.
    pub fn with_driver(&self, driver: CoefficientMap) -> Result<Self> {
        check_arity("driver", &driver, 2 * self.dim + 1)?;
        let mut out = self.clone();
        out.driver = driver;
        Ok(out)
    }

    /// Copy with `c` added to the driver everywhere.
    pub fn with_driver_shift(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.driver = out.driver.plus_constant(c);
        out.name = format!("{}+f{:+}", self.name, c);
        out
    }

    /// Copy with a replaced control set.
    pub fn with_controls(&self, controls: ControlSet) -> Self {
        let mut out = self.clone();
        out.controls = controls;
        out
    }
}

fn check_arity(what: &str, map: &CoefficientMap, arity: usize) -> Result<()> {
    if map.arity() != arity {
        return Err(Error::invalid(format!(
            "{what} has arity {} but {arity} is required",
            map.arity()
        )));
    }
    Ok(())
}

pub struct ProblemBuilder {
    spec: ProblemSpec,
}

impl ProblemBuilder {
    pub fn horizon(mut self, horizon: f64) -> Self {
        self.spec.horizon = horizon;
        self
    }

    /// Component `i` of the drift, a map of `(x, y)`.
    pub fn drift(mut self, i: usize, map: CoefficientMap) -> Self {
        self.spec.drift[i] = map;
        self
    }

    /// Entry `(i, j)` of the diffusion matrix, a map of `(x, y)`.
    pub fn diffusion(mut self, i: usize, j: usize, map: CoefficientMap) -> Self {
        let d = self.spec.dim;
        self.spec.diffusion[i * d + j] = map;
        self
    }

    /// The driver, a map of `(x, y, z)`.
    pub fn driver(mut self, map: CoefficientMap) -> Self {
        self.spec.driver = map;
        self
    }

    /// The terminal cost, a map of `x`.
    pub fn terminal(mut self, map: CoefficientMap) -> Self {
        self.spec.terminal = map;
        self
    }

    pub fn constants(mut self, lipschitz: f64, ellipticity: f64, bound: f64) -> Self {
        self.spec.constants = Constants {
            lipschitz,
            ellipticity,
            bound,
        };
        self
    }

    pub fn controls(mut self, controls: ControlSet) -> Self {
        self.spec.controls = controls;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        let s = self.spec;
        let d = s.dim;
        if !(s.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let c = s.constants;
        if !(c.lipschitz > 0.0 && c.ellipticity > 0.0 && c.bound > 0.0) {
            return Err(Error::invalid("declared constants must be positive"));
        }
        for m in &s.drift {
            check_arity("drift", m, d + 1)?;
        }
        for m in &s.diffusion {
            check_arity("diffusion", m, d + 1)?;
            if m.depends_on_control() {
                return Err(Error::invalid("the diffusion may not depend on the control"));
            }
        }
        check_arity("driver", &s.driver, 2 * d + 1)?;
        check_arity("terminal cost", &s.terminal, d)?;
        if s.terminal.depends_on_control() {
            return Err(Error::invalid("the terminal cost may not depend on the control"));
        }
        Ok(s)
    }
}

pub(crate) fn pack_xy(x: &Vector, y: f64) -> Args {
    let mut a = Args::new();
    a.try_extend_from_slice(x.as_slice()).expect("capacity");
    a.push(y);
    a
}

pub(crate) fn pack_xyz(x: &Vector, y: f64, z: &Vector) -> Args {
    let mut a = pack_xy(x, y);
    a.try_extend_from_slice(z.as_slice()).expect("capacity");
    a
}

/// Drift components prepared at a fixed `(x, y)`.
pub struct PreparedDrift<'a> {
    parts: ArrayVec<Prepared<'a>, MAX_DIM>,
}

impl PreparedDrift<'_> {
    pub fn at(&self, u: f64) -> Vector {
        let mut out = Vector::zeros(self.parts.len());
        for (i, p) in self.parts.iter().enumerate() {
            out[i] = p.at(u);
        }
        out
    }
}

/// Evaluation interface shared by a raw [`ProblemSpec`] and its mollified version.
pub trait Coefficients: Send + Sync {
    /// The underlying problem (dimension, horizon, constants, controls).
    fn problem(&self) -> &ProblemSpec;

    /// Mollification applied on evaluation, if any.
    fn smoothing(&self) -> Option<Smoothing<'_>>;

    fn delta(&self) -> f64 {
        self.smoothing().map_or(0.0, |s| s.delta)
    }

    fn dim(&self) -> usize {
        self.problem().dim()
    }

    fn horizon(&self) -> f64 {
        self.problem().horizon()
    }

    fn controls(&self) -> &ControlSet {
        self.problem().controls()
    }

    fn prepared_drift(&self, x: &Vector, y: f64) -> PreparedDrift<'_> {
        let p = self.problem();
        let xi = pack_xy(x, y);
        let sm = self.smoothing();
        PreparedDrift {
            parts: (0..p.dim()).map(|i| p.drift_map(i).prepare(&xi, sm)).collect(),
        }
    }

    fn drift(&self, x: &Vector, y: f64, u: f64) -> Vector {
        self.prepared_drift(x, y).at(u)
    }

    fn diffusion(&self, x: &Vector, y: f64) -> Matrix {
        let p = self.problem();
        let d = p.dim();
        let xi = pack_xy(x, y);
        let sm = self.smoothing();
        let mut m = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.set(i, j, p.diffusion_map(i, j).prepare(&xi, sm).at(0.0));
            }
        }
        m
    }

    fn prepared_driver(&self, x: &Vector, y: f64, z: &Vector) -> Prepared<'_> {
        self.problem().driver_map().prepare(&pack_xyz(x, y, z), self.smoothing())
    }

    fn driver(&self, x: &Vector, y: f64, z: &Vector, u: f64) -> f64 {
        self.prepared_driver(x, y, z).at(u)
    }

    fn terminal(&self, x: &Vector) -> f64 {
        self.problem().terminal_map().prepare(x.as_slice(), self.smoothing()).at(0.0)
    }
}

impl Coefficients for ProblemSpec {
    fn problem(&self) -> &ProblemSpec {
        self
    }

    fn smoothing(&self) -> Option<Smoothing<'_>> {
        None
    }
}

impl<C: Coefficients + ?Sized> Coefficients for std::sync::Arc<C> {
    fn problem(&self) -> &ProblemSpec {
        (**self).problem()
    }

    fn smoothing(&self) -> Option<Smoothing<'_>> {
        (**self).smoothing()
    }
}
