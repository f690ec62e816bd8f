//! C interface to the solver stack.
//!
//! Every function returns an [`FbsdeStatus`]. On failure the message is kept per thread
//! and can be read with [`fbsde_last_error`]. Handles are opaque and freed with the
//! matching `*_free` function; passing null to a `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use fbsde_core::hjb::{required_nt, solve_hjb, GridSpec, ValueField};
use fbsde_core::linalg::{Vector, MAX_DIM};
use fbsde_core::model::{preset, Coefficients, ProblemSpec};
use fbsde_core::mollify::{smooth_coefficients, DEFAULT_RESOLUTION};
use fbsde_core::policy::{extract_policy, AdmissibleControl, FeedbackPolicy};
use fbsde_core::relaxed::{chattering_reduce, Atom, DiscreteMeasure};
use fbsde_core::simulate::{estimate_cost, SimConfig};
use fbsde_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbsdeStatus {
    Ok = 0,
    InvalidArgument = 1,
    UnknownPreset = 2,
    CflViolation = 3,
    Ellipticity = 4,
    OutOfDomain = 5,
    RankDeficient = 6,
    OutsideBall = 7,
    Parse = 8,
    Io = 9,
    NullPointer = 10,
    Panic = 11,
}

/// A problem definition.
pub struct FbsdeProblem(ProblemSpec);

/// A solved value field together with the smoothing radius it was built with.
pub struct FbsdeField(ValueField);

/// A feedback policy table.
pub struct FbsdePolicy(Arc<FeedbackPolicy>);

/// Output of [`fbsde_chattering`].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct FbsdeChattering {
    pub u_bar: f64,
    pub w_bar: [f64; 2],
    pub theta_bar: f64,
    pub residual: f64,
    pub alpha: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FbsdeStatus {
    match e {
        Error::InvalidArgument(_) => FbsdeStatus::InvalidArgument,
        Error::UnknownPreset(_) => FbsdeStatus::UnknownPreset,
        Error::CflViolation { .. } => FbsdeStatus::CflViolation,
        Error::Ellipticity { .. } => FbsdeStatus::Ellipticity,
        Error::OutOfDomain { .. } => FbsdeStatus::OutOfDomain,
        Error::RankDeficient { .. } => FbsdeStatus::RankDeficient,
        Error::OutsideBall { .. } => FbsdeStatus::OutsideBall,
        Error::Parse { .. } => FbsdeStatus::Parse,
        Error::Io(_) => FbsdeStatus::Io,
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FbsdeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FbsdeStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("`{what}` is null"));
            FbsdeStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            FbsdeStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("`{what}` is not valid UTF-8")).into())
}

unsafe fn point(x: *const f64, dim: usize) -> Result<Vector, Failure> {
    if x.is_null() {
        return Err(Failure::Null("x"));
    }
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidArgument(format!("dimension {dim} is not supported")).into());
    }
    Ok(Vector::from_slice(std::slice::from_raw_parts(x, dim)))
}

/// Message of the last failed call on this thread. Empty after a successful call.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fbsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a built-in problem by name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_preset(name: *const c_char, out: *mut *mut FbsdeProblem) -> FbsdeStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let spec = preset(string(name, "name")?)?;
        *slot = Box::into_raw(Box::new(FbsdeProblem(spec)));
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_dim(problem: *const FbsdeProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.dim())
}

/// # Safety
/// `problem` must be null or a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_horizon(problem: *const FbsdeProblem, out: *mut f64) -> FbsdeStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(problem, "problem")?.0.horizon();
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fbsde_problem_free(problem: *mut FbsdeProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Smooths the problem with radius `delta` and solves the HJB equation on
/// `[-half_width, half_width]^d` with `nx` nodes per axis. `nt = 0` picks the
/// smallest stable number of time levels.
///
/// # Safety
/// `problem` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_solve(
    problem: *const FbsdeProblem,
    delta: f64,
    nx: usize,
    half_width: f64,
    nt: usize,
    out: *mut *mut FbsdeField,
) -> FbsdeStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let spec = &deref(problem, "problem")?.0;
        let c = smooth_coefficients(spec.clone(), delta, DEFAULT_RESOLUTION)?;
        let base = GridSpec::cube(c.dim(), half_width, nx, 1, 0.0, c.horizon())?;
        let nt = if nt == 0 { required_nt(&c, &base, c.controls()) } else { nt };
        let field = solve_hjb(&c, &base.with_nt(nt)?, c.controls())?;
        *slot = Box::into_raw(Box::new(FbsdeField(field)));
        Ok(())
    })
}

/// # Safety
/// `field` must be a live handle, `x` must hold `dim` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_eval(
    field: *const FbsdeField,
    t: f64,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> FbsdeStatus {
    guard(|| {
        let v = deref(field, "field")?.0.eval(t, &point(x, dim)?)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Writes the `dim` components of the spatial gradient to `out`.
///
/// # Safety
/// `field` must be a live handle; `x` and `out` must each hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_grad(
    field: *const FbsdeField,
    t: f64,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> FbsdeStatus {
    guard(|| {
        let g = deref(field, "field")?.0.grad(t, &point(x, dim)?)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// # Safety
/// `field` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_save(field: *const FbsdeField, path: *const c_char) -> FbsdeStatus {
    guard(|| {
        let f = deref(field, "field")?;
        f.0.save(Path::new(string(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_load(path: *const c_char, out: *mut *mut FbsdeField) -> FbsdeStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let f = ValueField::load(Path::new(string(path, "path")?))?;
        *slot = Box::into_raw(Box::new(FbsdeField(f)));
        Ok(())
    })
}

/// Smoothing radius the field was solved with.
///
/// # Safety
/// `field` must be null or a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_delta(field: *const FbsdeField, out: *mut f64) -> FbsdeStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(field, "field")?.0.delta();
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fbsde_field_free(field: *mut FbsdeField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Extracts the feedback policy of `field` for `problem`, smoothed at the field's radius.
///
/// # Safety
/// `problem` and `field` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_policy_extract(
    problem: *const FbsdeProblem,
    field: *const FbsdeField,
    out: *mut *mut FbsdePolicy,
) -> FbsdeStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let spec = &deref(problem, "problem")?.0;
        let field = &deref(field, "field")?.0;
        if field.grid().dim() != spec.dim() {
            return Err(Error::InvalidArgument("field and problem dimensions differ".into()).into());
        }
        let c = smooth_coefficients(spec.clone(), field.delta(), DEFAULT_RESOLUTION)?;
        let policy = extract_policy(field, &c, c.controls());
        *slot = Box::into_raw(Box::new(FbsdePolicy(Arc::new(policy))));
        Ok(())
    })
}

/// # Safety
/// `policy` must be a live handle, `x` must hold `dim` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fbsde_policy_lookup(
    policy: *const FbsdePolicy,
    t: f64,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> FbsdeStatus {
    guard(|| {
        let p = &deref(policy, "policy")?.0;
        let x = point(x, dim)?;
        if dim != p.grid().dim() {
            return Err(Error::InvalidArgument("dimension mismatch".into()).into());
        }
        *out_ref(out, "out")? = p.lookup(t, &x);
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fbsde_policy_free(policy: *mut FbsdePolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Monte Carlo cost of the constant control `u` started at `(t, x)`.
///
/// # Safety
/// `problem` and `field` must be live handles, `x` must hold `dim` values and
/// `mean` and `std_error` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fbsde_constant_cost(
    problem: *const FbsdeProblem,
    field: *const FbsdeField,
    u: f64,
    t: f64,
    x: *const f64,
    dim: usize,
    paths: usize,
    steps: usize,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> FbsdeStatus {
    guard(|| {
        let spec = &deref(problem, "problem")?.0;
        let field = &deref(field, "field")?.0;
        let x = point(x, dim)?;
        if !spec.controls().contains(u) {
            return Err(Error::InvalidArgument(format!("control {u} is not admissible")).into());
        }
        let c = smooth_coefficients(spec.clone(), field.delta(), DEFAULT_RESOLUTION)?;
        let cfg = SimConfig::new(paths, steps, seed)?;
        let est = estimate_cost(&c, field, &AdmissibleControl::Constant(u), t, &x, &cfg)?;
        *out_ref(mean, "mean")? = est.mean;
        *out_ref(std_error, "std_error")? = est.std_error;
        Ok(())
    })
}

/// Reduces the measure with atoms `(u[i], w[i*dim..(i+1)*dim])` and weights `weights[i]`
/// at state `(x, y)` to a single control with an extra noise intensity.
///
/// # Safety
/// `problem` must be a live handle; `x` holds `dim` values, `u` and `weights` hold `n`
/// values, `w` holds `n * dim` values and `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fbsde_chattering(
    problem: *const FbsdeProblem,
    x: *const f64,
    dim: usize,
    y: f64,
    u: *const f64,
    w: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut FbsdeChattering,
) -> FbsdeStatus {
    guard(|| {
        let spec = &deref(problem, "problem")?.0;
        let x = point(x, dim)?;
        if dim != spec.dim() {
            return Err(Error::InvalidArgument("dimension mismatch".into()).into());
        }
        if u.is_null() || w.is_null() || weights.is_null() {
            return Err(Failure::Null("atoms"));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("the measure needs at least one atom".into()).into());
        }
        let us = std::slice::from_raw_parts(u, n);
        let ws = std::slice::from_raw_parts(w, n * dim);
        let atoms = us
            .iter()
            .zip(ws.chunks(dim))
            .map(|(&u, w)| Atom { u, w: Vector::from_slice(w) })
            .collect();
        let mu = DiscreteMeasure::new(atoms, std::slice::from_raw_parts(weights, n).to_vec())?;
        let r = chattering_reduce(&mu, &x, y, spec);
        let slot = out_ref(out, "out")?;
        let mut w_bar = [0.0; 2];
        w_bar[..dim].copy_from_slice(r.w_bar.as_slice());
        *slot = FbsdeChattering {
            u_bar: r.u_bar,
            w_bar,
            theta_bar: r.theta_bar,
            residual: r.residual,
            alpha: r.alpha,
        };
        Ok(())
    })
}
