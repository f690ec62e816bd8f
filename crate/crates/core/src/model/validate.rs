//! Empirical audits of the Lipschitz, boundedness and ellipticity assumptions.
//!
//! Audits never prove anything; they sample the fixed [`SamplingBox`] and report
//! the worst quantity observed. Sample `i` is drawn from its own random stream,
//! so enlarging `samples` only appends points and the reported extrema are
//! monotone in the sample count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Coefficients;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng::{substream, Channel};

/// Relative slack applied to declared constants before flagging a violation.
pub const RELATIVE_SLACK: f64 = 1e-6;

/// Region audited by the validators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingBox {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for SamplingBox {
    fn default() -> Self {
        SamplingBox {
            x: 4.0,
            y: 2.0,
            z: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// Which assumption and coefficient, e.g. `A1:phi`.
    pub assumption: String,
    /// Sampled point(s) exhibiting the violation, packed as `(x, y, z, u)` prefixes.
    pub witness: Vec<f64>,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub empirical_k: f64,
    /// Smallest eigenvalue of `sigma sigma^T` observed.
    pub empirical_lambda: f64,
    /// Smallest eigenvalue of the symmetric part of `sigma` observed.
    pub empirical_lambda_sym: f64,
    pub empirical_bound: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn empty() -> Self {
        ValidationReport {
            empirical_k: 0.0,
            empirical_lambda: f64::INFINITY,
            empirical_lambda_sym: f64::INFINITY,
            empirical_bound: 0.0,
            violations: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn merge(mut self, other: ValidationReport) -> Self {
        self.empirical_k = self.empirical_k.max(other.empirical_k);
        self.empirical_lambda = self.empirical_lambda.min(other.empirical_lambda);
        self.empirical_lambda_sym = self.empirical_lambda_sym.min(other.empirical_lambda_sym);
        self.empirical_bound = self.empirical_bound.max(other.empirical_bound);
        self.violations.extend(other.violations);
        self
    }
}

/// Running maximum with its witness.
struct Worst {
    label: &'static str,
    value: f64,
    witness: Vec<f64>,
}

impl Worst {
    fn new(label: &'static str) -> Self {
        Worst {
            label,
            value: 0.0,
            witness: Vec::new(),
        }
    }

    fn offer(&mut self, value: f64, witness: impl FnOnce() -> Vec<f64>) {
        if value > self.value {
            self.value = value;
            self.witness = witness();
        }
    }
}

struct Sample {
    x: Vector,
    y: f64,
    z: Vector,
    u: f64,
}

impl Sample {
    fn draw<C: Coefficients + ?Sized>(c: &C, rng: &mut ChaCha8Rng, bx: &SamplingBox) -> Self {
        let d = c.dim();
        let mut x = Vector::zeros(d);
        let mut z = Vector::zeros(d);
        for i in 0..d {
            x[i] = rng.random_range(-bx.x..=bx.x);
            z[i] = rng.random_range(-bx.z..=bx.z);
        }
        let y = rng.random_range(-bx.y..=bx.y);
        let grid = c.controls().grid();
        let u = grid[rng.random_range(0..grid.len())];
        Sample { x, y, z, u }
    }

    /// A second point: anywhere in the box, or a small perturbation of `self`.
    fn partner(&self, rng: &mut ChaCha8Rng, bx: &SamplingBox, local: bool) -> Self {
        let d = self.x.dim();
        let mut x = self.x;
        let mut z = self.z;
        let mut y = self.y;
        if local {
            let scale = 10f64.powf(-rng.random_range(1.0..4.0));
            for i in 0..d {
                x[i] = (x[i] + scale * rng.random_range(-1.0..=1.0)).clamp(-bx.x, bx.x);
                z[i] = (z[i] + scale * rng.random_range(-1.0..=1.0)).clamp(-bx.z, bx.z);
            }
            y = (y + scale * rng.random_range(-1.0..=1.0)).clamp(-bx.y, bx.y);
        } else {
            for i in 0..d {
                x[i] = rng.random_range(-bx.x..=bx.x);
                z[i] = rng.random_range(-bx.z..=bx.z);
            }
            y = rng.random_range(-bx.y..=bx.y);
        }
        Sample { x, y, z, u: self.u }
    }

    fn packed(&self) -> Vec<f64> {
        let mut v = self.x.as_slice().to_vec();
        v.push(self.y);
        v.extend_from_slice(self.z.as_slice());
        v.push(self.u);
        v
    }
}

fn quotient(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Audits the uniform Lipschitz condition with the declared constant `K`.
///
/// Differences are measured as `|x - x'| + |y - y'| (+ |z - z'|)`; matrices in
/// Frobenius norm.
pub fn validate_lipschitz<C: Coefficients + ?Sized>(c: &C, samples: usize, seed: u64) -> Result<ValidationReport> {
    if samples < 2 {
        return Err(Error::invalid("the Lipschitz audit needs at least 2 samples"));
    }
    let bx = SamplingBox::default();
    let mut worst = [Worst::new("A1:b"), Worst::new("A1:sigma"), Worst::new("A1:f"), Worst::new("A1:phi")];
    for i in 0..samples {
        let mut rng = substream(seed, Channel::Audit, i as u64);
        let p = Sample::draw(c, &mut rng, &bx);
        let q = p.partner(&mut rng, &bx, i % 2 == 1);
        let dx = (p.x - q.x).norm();
        let dy = (p.y - q.y).abs();
        let dz = (p.z - q.z).norm();
        let w = || {
            let mut v = p.packed();
            v.extend(q.packed());
            v
        };

        let db = (c.drift(&p.x, p.y, p.u) - c.drift(&q.x, q.y, p.u)).norm();
        worst[0].offer(quotient(db, dx + dy), w);
        let sp = c.diffusion(&p.x, p.y);
        let sq = c.diffusion(&q.x, q.y);
        let mut ds = 0.0;
        for r in 0..c.dim() {
            for k in 0..c.dim() {
                ds += (sp.get(r, k) - sq.get(r, k)).powi(2);
            }
        }
        worst[1].offer(quotient(ds.sqrt(), dx + dy), w);
        let df = (c.driver(&p.x, p.y, &p.z, p.u) - c.driver(&q.x, q.y, &q.z, p.u)).abs();
        worst[2].offer(quotient(df, dx + dy + dz), w);
        let dphi = (c.terminal(&p.x) - c.terminal(&q.x)).abs();
        worst[3].offer(quotient(dphi, dx), w);
    }
    let k = c.problem().constants().lipschitz;
    let mut report = ValidationReport::empty();
    for w in worst {
        report.empirical_k = report.empirical_k.max(w.value);
        if w.value > k * (1.0 + RELATIVE_SLACK) {
            report.violations.push(Violation {
                assumption: w.label.to_string(),
                witness: w.witness,
                measured: w.value,
            });
        }
    }
    Ok(report)
}

/// Audits uniform ellipticity of `sigma sigma^T` against the declared `lambda`.
/// The smallest eigenvalue of the symmetric part of `sigma` is reported alongside.
pub fn validate_ellipticity<C: Coefficients + ?Sized>(c: &C, samples: usize, seed: u64) -> Result<ValidationReport> {
    if samples < 1 {
        return Err(Error::invalid("the ellipticity audit needs at least 1 sample"));
    }
    let bx = SamplingBox::default();
    let mut report = ValidationReport::empty();
    let mut witness = Vec::new();
    for i in 0..samples {
        let mut rng = substream(seed, Channel::Audit, i as u64);
        let p = Sample::draw(c, &mut rng, &bx);
        let sigma = c.diffusion(&p.x, p.y);
        let lam = sigma.gram().min_sym_eigenvalue();
        if lam < report.empirical_lambda {
            report.empirical_lambda = lam;
            witness = p.packed();
        }
        report.empirical_lambda_sym = report.empirical_lambda_sym.min(sigma.min_sym_eigenvalue());
    }
    let lambda = c.problem().constants().ellipticity;
    if report.empirical_lambda < lambda {
        report.violations.push(Violation {
            assumption: "A3:sigma".to_string(),
            witness,
            measured: report.empirical_lambda,
        });
    }
    Ok(report)
}

/// Audits the common sup bound `M` of `b`, `sigma`, `f` and `Phi`.
pub fn validate_bounds<C: Coefficients + ?Sized>(c: &C, samples: usize, seed: u64) -> Result<ValidationReport> {
    if samples < 1 {
        return Err(Error::invalid("the bound audit needs at least 1 sample"));
    }
    let bx = SamplingBox::default();
    let mut worst = [
        Worst::new("A1.2:b"),
        Worst::new("A1.2:sigma"),
        Worst::new("A1.2:f"),
        Worst::new("A1.2:phi"),
    ];
    for i in 0..samples {
        let mut rng = substream(seed, Channel::Audit, i as u64);
        let p = Sample::draw(c, &mut rng, &bx);
        let w = || p.packed();
        worst[0].offer(c.drift(&p.x, p.y, p.u).norm(), w);
        worst[1].offer(c.diffusion(&p.x, p.y).frobenius(), w);
        worst[2].offer(c.driver(&p.x, p.y, &p.z, p.u).abs(), w);
        worst[3].offer(c.terminal(&p.x).abs(), w);
    }
    let m = c.problem().constants().bound;
    let mut report = ValidationReport::empty();
    for w in worst {
        report.empirical_bound = report.empirical_bound.max(w.value);
        if w.value > m * (1.0 + RELATIVE_SLACK) {
            report.violations.push(Violation {
                assumption: w.label.to_string(),
                witness: w.witness,
                measured: w.value,
            });
        }
    }
    Ok(report)
}

/// Runs all three audits and merges their reports.
pub fn validate_all<C: Coefficients + ?Sized>(c: &C, samples: usize, seed: u64) -> Result<ValidationReport> {
    Ok(validate_lipschitz(c, samples, seed)?
        .merge(validate_ellipticity(c, samples, seed)?)
        .merge(validate_bounds(c, samples, seed)?))
}
