//! Built-in benchmark problems and the name -> problem registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{CoefficientMap, ControlSet, ProblemSpec};
use crate::error::{Error, Result};

/// Control grid resolution used by the interval presets.
pub const PRESET_CONTROL_RESOLUTION: usize = 41;

pub type PresetFactory = Arc<dyn Fn() -> ProblemSpec + Send + Sync>;

/// Maps preset names to problem constructors. Additional problems can be
/// registered at runtime.
#[derive(Clone)]
pub struct PresetRegistry {
    entries: BTreeMap<String, PresetFactory>,
}

impl PresetRegistry {
    pub fn empty() -> Self {
        PresetRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding `uncontrolled-linear`, `B1` and `B2`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("uncontrolled-linear", uncontrolled_linear);
        r.register("B1", || b1_with_control_weight(1.0));
        r.register("B2", b2);
        r
    }

    pub fn register(&mut self, name: impl Into<String>, factory: impl Fn() -> ProblemSpec + Send + Sync + 'static) {
        self.entries.insert(name.into(), Arc::new(factory));
    }

    pub fn get(&self, name: &str) -> Result<ProblemSpec> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownPreset(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl Default for PresetRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Looks up a built-in preset.
pub fn preset(name: &str) -> Result<ProblemSpec> {
    PresetRegistry::builtin().get(name)
}

fn symmetric_unit_interval() -> ControlSet {
    ControlSet::interval(-1.0, 1.0, PRESET_CONTROL_RESOLUTION).expect("valid interval")
}

/// `sigma(x, y) = 1 + tanh(y) / 4`, shared by B1 and B2.
fn y_modulated_diffusion() -> CoefficientMap {
    CoefficientMap::constant(2, 1.0).plus_ridge(&[0.0, 1.0], |y| 0.25 * y.tanh())
}

/// `dX = dW`, `f = 0`, `Phi = tanh`: the value is a Gaussian expectation.
pub fn uncontrolled_linear() -> ProblemSpec {
    ProblemSpec::builder("uncontrolled-linear", 1)
        .horizon(1.0)
        .terminal(CoefficientMap::zero(1).plus_ridge(&[1.0], f64::tanh))
        .constants(1.0, 1.0, 1.0)
        .controls(ControlSet::finite(&[0.0]).expect("singleton"))
        .build()
        .expect("uncontrolled-linear is well formed")
}

/// B1 with the running cost `weight * u^2`; the pointwise minimizer is `u = 0`
/// for every `weight > 0`.
pub fn b1_with_control_weight(weight: f64) -> ProblemSpec {
    ProblemSpec::builder("B1", 1)
        .horizon(1.0)
        .drift(0, CoefficientMap::zero(2).plus_ridge(&[1.0, 1.0], |s| 0.5 * s.tanh()))
        .diffusion(0, 0, y_modulated_diffusion())
        .driver(
            CoefficientMap::zero(3)
                .plus_control(move |u| weight * u * u)
                .plus_ridge(&[0.0, 0.0, 1.0], |z| 0.25 * z.tanh())
                .plus_ridge(&[0.0, 1.0, 0.0], |y| 0.1 * y.tanh()),
        )
        .terminal(CoefficientMap::zero(1).plus_ridge(&[1.0], f64::tanh))
        .constants(2.0, 0.5, 2.0)
        .controls(symmetric_unit_interval())
        .build()
        .expect("B1 is well formed")
}

/// B2: drift `u`, running cost `u^2/2 + u tanh(x) + ...`; the pointwise
/// minimizer is `clip(-(p + tanh x), -1, 1)`.
pub fn b2() -> ProblemSpec {
    ProblemSpec::builder("B2", 1)
        .horizon(1.0)
        .drift(0, CoefficientMap::zero(2).plus_control(|u| u))
        .diffusion(0, 0, y_modulated_diffusion())
        .driver(
            CoefficientMap::zero(3)
                .plus_control(|u| 0.5 * u * u)
                .plus_controlled_ridge(|u| u, &[1.0, 0.0, 0.0], f64::tanh)
                .plus_ridge(&[0.0, 0.0, 1.0], |z| 0.25 * z.tanh())
                .plus_ridge(&[0.0, 1.0, 0.0], |y| 0.1 * y.tanh()),
        )
        .terminal(CoefficientMap::zero(1).plus_ridge(&[1.0], f64::tanh))
        .constants(2.0, 0.5, 2.0)
        .controls(symmetric_unit_interval())
        .build()
        .expect("B2 is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::model::Coefficients;

    #[test]
    fn registry_knows_builtin_names() {
        let r = PresetRegistry::builtin();
        let names: Vec<_> = r.names().collect();
        assert_eq!(names, ["B1", "B2", "uncontrolled-linear"]);
        assert!(matches!(r.get("B3"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn custom_presets_can_be_registered() {
        let mut r = PresetRegistry::empty();
        r.register("tilted", || b2().with_driver_shift(0.5));
        let p = r.get("tilted").unwrap();
        let x = Vector::scalar(0.0);
        let z = Vector::scalar(0.0);
        assert!((p.driver(&x, 0.0, &z, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn preset_formulas() {
        let x = Vector::scalar(0.4);
        let z = Vector::scalar(-0.3);
        let (y, u) = (0.2, -0.6);
        let b1 = preset("B1").unwrap();
        assert!((b1.drift(&x, y, u)[0] - 0.5 * (0.6f64).tanh()).abs() < 1e-15);
        assert!((b1.diffusion(&x, y).get(0, 0) - (1.0 + 0.25 * y.tanh())).abs() < 1e-15);
        let f1 = u * u + 0.25 * (-0.3f64).tanh() + 0.1 * y.tanh();
        assert!((b1.driver(&x, y, &z, u) - f1).abs() < 1e-15);
        let b2 = preset("B2").unwrap();
        assert_eq!(b2.drift(&x, y, u)[0], u);
        let f2 = 0.5 * u * u + u * 0.4f64.tanh() + 0.25 * (-0.3f64).tanh() + 0.1 * y.tanh();
        assert!((b2.driver(&x, y, &z, u) - f2).abs() < 1e-15);
        assert!((b2.terminal(&x) - 0.4f64.tanh()).abs() < 1e-15);
        assert!(b1.is_coupled() && b2.is_coupled());
        assert!(!preset("uncontrolled-linear").unwrap().is_coupled());
    }
}
