//! C ABI over `robust-l2d`.
//!
//! Every fallible call returns an [`L2dStatus`]; on failure the message is
//! available from [`l2d_last_error`] on the same thread. Scorers are opaque
//! handles released with [`l2d_scorer_free`]. Strings returned by the library
//! are released with [`l2d_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_l2d::attacks::{untargeted_attack, AttackSpec};
use robust_l2d::costs::{aggregate_costs, true_deferral_loss, AggregatedCosts, CostVector};
use robust_l2d::losses::{comp_sum_deferral, psi_rho, psi_u};
use robust_l2d::oracle::BoundConstant;
use robust_l2d::scorer::{Scorer, ScorerSpec};
use robust_l2d::verify::{run_suite, Suite, VerifyOptions};
use robust_l2d::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2dNorm {
    Linf = 0,
    L2 = 1,
}

/// Opaque rejector scorer.
pub struct L2dScorer {
    inner: Scorer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> L2dStatus {
    match e {
        Error::Dimension { .. } | Error::LengthMismatch { .. } | Error::AgentIndex { .. } => L2dStatus::Dimension,
        Error::Io { .. } | Error::Dataset { .. } => L2dStatus::Io,
        Error::Serde(_) | Error::Schema(_) => L2dStatus::Parse,
        Error::Stage { source, .. } => status_of(source),
        _ => L2dStatus::InvalidArgument,
    }
}

struct Fail(L2dStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(L2dStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> L2dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => L2dStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            L2dStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(L2dStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn scorer<'a>(s: *const L2dScorer) -> Result<&'a Scorer, Fail> {
    s.as_ref().map(|h| &h.inner).ok_or_else(|| null("scorer"))
}

fn fill(out: &mut [f64], v: &[f64], what: &str) -> Result<(), Fail> {
    if out.len() != v.len() {
        return Err(Fail(
            L2dStatus::Dimension,
            format!("{what} buffer holds {} values, {} needed", out.len(), v.len()),
        ));
    }
    out.copy_from_slice(v);
    Ok(())
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn l2d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn l2d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn l2d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an MLP scorer (linear when `n_hidden` is 0) with seeded weights.
///
/// # Safety
/// `hidden` points to `n_hidden` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_new(
    input_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    num_agents: usize,
    seed: u64,
    out: *mut *mut L2dScorer,
) -> L2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let h: &[usize] = if n_hidden == 0 {
            &[]
        } else if hidden.is_null() {
            return Err(null("hidden"));
        } else {
            slice::from_raw_parts(hidden, n_hidden)
        };
        let spec = if h.is_empty() {
            ScorerSpec::linear(input_dim, num_agents)
        } else {
            ScorerSpec::mlp(input_dim, h, num_agents)
        };
        let inner = Scorer::init(spec, seed)?;
        *out = Box::into_raw(Box::new(L2dScorer { inner }));
        Ok(())
    })
}

/// Loads a scorer checkpoint written by the command-line tool.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_load(path: *const c_char, out: *mut *mut L2dScorer) -> L2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Scorer::load(Path::new(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(L2dScorer { inner }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_free(s: *mut L2dScorer) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` is a live scorer handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_input_dim(s: *const L2dScorer) -> usize {
    s.as_ref().map_or(0, |h| h.inner.spec().input_dim)
}

/// # Safety
/// `s` is a live scorer handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_num_agents(s: *const L2dScorer) -> usize {
    s.as_ref().map_or(0, |h| h.inner.spec().output_dim)
}

/// Scores `x` (length `input_dim`) into `out` (length `num_agents`).
///
/// # Safety
/// Buffers hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_forward(
    s: *const L2dScorer,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> L2dStatus {
    guard(|| {
        let r = scorer(s)?;
        let v = r.forward(input(x, x_len, "x")?)?;
        fill(output(out, out_len, "out")?, v.as_slice(), "score")
    })
}

/// Agent the rejector routes `x` to.
///
/// # Safety
/// `x` holds `x_len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_scorer_route(s: *const L2dScorer, x: *const f64, x_len: usize, out: *mut usize) -> L2dStatus {
    guard(|| {
        let r = scorer(s)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = r.forward(input(x, x_len, "x")?)?.argmax();
        Ok(())
    })
}

/// `Psi^u(v)`.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_psi_u(v: f64, u: f64, out: *mut f64) -> L2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = psi_u(v, u)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn l2d_psi_rho(v: f64, rho: f64) -> f64 {
    psi_rho(v, rho)
}

/// `tau[j]`: sum of the other agents' costs.
///
/// # Safety
/// `costs` and `tau` hold `n` values each.
#[no_mangle]
pub unsafe extern "C" fn l2d_aggregate_costs(costs: *const f64, n: usize, tau: *mut f64) -> L2dStatus {
    guard(|| {
        let c = CostVector::new(input(costs, n, "costs")?.to_vec())?;
        fill(output(tau, n, "tau")?, aggregate_costs(&c).as_slice(), "tau")
    })
}

/// Cost paid when the query goes to agent `chosen`.
///
/// # Safety
/// `costs` holds `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_deferral_loss(costs: *const f64, n: usize, chosen: usize, out: *mut f64) -> L2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = CostVector::new(input(costs, n, "costs")?.to_vec())?;
        *out = true_deferral_loss(&c, chosen)?;
        Ok(())
    })
}

/// Comp-sum deferral surrogate of scores `s` under weights `tau`.
///
/// # Safety
/// `tau` and `s` hold `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_comp_sum_deferral(tau: *const f64, s: *const f64, n: usize, u: f64, out: *mut f64) -> L2dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = AggregatedCosts::from_weights(input(tau, n, "tau")?.to_vec())?;
        *out = comp_sum_deferral(&t, input(s, n, "scores")?, u)?;
        Ok(())
    })
}

/// Untargeted PGD on the comp-sum deferral surrogate, started at `x`.
///
/// # Safety
/// `x` and `x_out` hold `dim` values; `tau` holds `num_agents` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn l2d_untargeted_attack(
    s: *const L2dScorer,
    tau: *const f64,
    n_tau: usize,
    x: *const f64,
    dim: usize,
    norm: L2dNorm,
    gamma: f64,
    steps: usize,
    step_size: f64,
    seed: u64,
    x_out: *mut f64,
) -> L2dStatus {
    guard(|| {
        let r = scorer(s)?;
        let t = AggregatedCosts::from_weights(input(tau, n_tau, "tau")?.to_vec())?;
        let spec = match norm {
            L2dNorm::Linf => AttackSpec::linf(gamma, steps),
            L2dNorm::L2 => AttackSpec::l2(gamma, steps),
        }
        .with_step_size(step_size);
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adv = untargeted_attack(r, &t, input(x, dim, "x")?, &spec, 1.0, &mut rng)?;
        fill(output(x_out, dim, "x_out")?, &adv, "x_out")
    })
}

/// Runs one verification suite (`identities`, `gradients`, `attacks`,
/// `bounds`) and returns its JSON report in `json_out`. `proof_derived`
/// selects the bound constant. `passed` is set to 1 when every check holds.
///
/// # Safety
/// `suite` is a NUL-terminated string; `json_out` and `passed` are writable.
/// The returned string is released with [`l2d_string_free`].
#[no_mangle]
pub unsafe extern "C" fn l2d_verify(
    suite: *const c_char,
    seed: u64,
    proof_derived: bool,
    json_out: *mut *mut c_char,
    passed: *mut i32,
) -> L2dStatus {
    guard(|| {
        if json_out.is_null() || passed.is_null() {
            return Err(null("output pointer"));
        }
        let name = text(suite, "suite")?;
        let suite = Suite::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Fail(L2dStatus::InvalidArgument, format!("unknown suite '{name}'")))?;
        let opts = VerifyOptions {
            seed,
            constant: if proof_derived { BoundConstant::ProofDerived } else { BoundConstant::Stated },
            ..Default::default()
        };
        let rep = run_suite(suite, &opts)?;
        let json = serde_json::to_string_pretty(&rep).map_err(|e| Fail(L2dStatus::Parse, e.to_string()))?;
        *passed = i32::from(rep.passed());
        *json_out = CString::new(json).map_err(|e| Fail(L2dStatus::Parse, e.to_string()))?.into_raw();
        Ok(())
    })
}
