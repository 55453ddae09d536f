//! C ABI over `asynczo`.
//!
//! Objectives are opaque heap handles created by `azo_*_new` and released
//! with `azo_objective_free`. Every fallible call returns an [`AzoStatus`];
//! on failure `azo_last_error_message` describes the error for the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use asynczo::analysis::{recursive_sequence_bound, SequenceBoundParams};
use asynczo::objectives::{make_benchmark, Objective, ObjectiveHandle, QuadraticObjective};
use asynczo::scheduler::{
    rate_schedule_variant, run_async, ActivationModel, Budget, EstimatorKind, NullRecorder, RateScheduleVariant,
    RunConfig, Schedule,
};
use asynczo::{BlockLayout, BlockVector, Error, RngStream, StreamRole};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AzoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Layout = 3,
    Evaluation = 4,
    Diverged = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AzoEstimator {
    ResidualAsync = 0,
    TwoPointAsync = 1,
    TwoPointAsyncStored = 2,
}

/// Opaque objective handle.
pub struct AzoObjective {
    inner: Arc<dyn Objective>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AzoRunOptions {
    pub estimator: AzoEstimator,
    /// Total function-query budget.
    pub budget_queries: u64,
    pub alpha: f64,
    pub mu: f64,
    pub seed: u64,
    pub trial_id: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AzoRunStats {
    pub iterations: u64,
    pub queries: u64,
    pub updates: u64,
    pub bootstraps: u64,
    pub final_loss: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AzoStatus {
    match e {
        Error::Layout(_) => AzoStatus::Layout,
        Error::Evaluation { .. } => AzoStatus::Evaluation,
        Error::Divergence { .. } => AzoStatus::Diverged,
        Error::Io(_) => AzoStatus::Io,
        Error::Config(_) | Error::Domain(_) => AzoStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> AzoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AzoStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AzoStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            AzoStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AzoStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn objective_ref<'a>(p: *const AzoObjective) -> Result<&'a AzoObjective, Failure> {
    p.as_ref().ok_or(Failure::Null("objective"))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(Failure::Core(Error::Layout(format!("{what} has length {got}, objective dimension is {want}"))));
    }
    Ok(())
}

unsafe fn publish(out: *mut *mut AzoObjective, obj: Arc<dyn Objective>) -> Result<(), Failure> {
    let slot = out_ref(out, "out")?;
    *slot = Box::into_raw(Box::new(AzoObjective { inner: obj }));
    Ok(())
}

/// Message describing the last failed call on this thread, or NULL.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn azo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Feature-learning benchmark with `agents` blocks of `input_dim` weights,
/// `samples` labelled samples, data drawn from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn azo_benchmark_new(
    agents: usize,
    samples: usize,
    input_dim: usize,
    seed: u64,
    out: *mut *mut AzoObjective,
) -> AzoStatus {
    guarded(|| {
        let mut rng = RngStream::new(seed, StreamRole::Dataset.stream_id(0));
        let obj = make_benchmark(agents, samples, input_dim, &mut rng)?;
        publish(out, Arc::new(obj))
    })
}

/// `f(x) = ½xᵀAx + bᵀx + c` with `A` row-major `n×n`, `n = Σ block_dims`.
///
/// # Safety
/// `block_dims` must point to `num_blocks` values, `a` to `n·n` and `b` to
/// `n`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn azo_quadratic_new(
    block_dims: *const usize,
    num_blocks: usize,
    a: *const f64,
    b: *const f64,
    c: f64,
    out: *mut *mut AzoObjective,
) -> AzoStatus {
    guarded(|| {
        let layout = BlockLayout::new(slice_in(block_dims, num_blocks, "block_dims")?.to_vec())?;
        let n = layout.total_dim();
        let a = slice_in(a, n * n, "a")?;
        let b = slice_in(b, n, "b")?;
        publish(out, Arc::new(QuadraticObjective::from_row_major(layout, a, b, c)?))
    })
}

/// Random positive-definite quadratic with spectrum in `[1, 2]`.
///
/// # Safety
/// `block_dims` must point to `num_blocks` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn azo_quadratic_random(
    block_dims: *const usize,
    num_blocks: usize,
    seed: u64,
    out: *mut *mut AzoObjective,
) -> AzoStatus {
    guarded(|| {
        let layout = BlockLayout::new(slice_in(block_dims, num_blocks, "block_dims")?.to_vec())?;
        let mut rng = RngStream::new(seed, StreamRole::Dataset.stream_id(0));
        publish(out, Arc::new(QuadraticObjective::random(layout, &mut rng)?))
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `obj` must come from an `azo_*_new` call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn azo_objective_free(obj: *mut AzoObjective) {
    if !obj.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(obj))));
    }
}

/// Total dimension and number of blocks.
///
/// # Safety
/// `obj` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn azo_objective_dims(
    obj: *const AzoObjective,
    out_dim: *mut usize,
    out_blocks: *mut usize,
) -> AzoStatus {
    guarded(|| {
        let layout = objective_ref(obj)?.inner.layout();
        *out_ref(out_dim, "out_dim")? = layout.total_dim();
        *out_ref(out_blocks, "out_blocks")? = layout.num_blocks();
        Ok(())
    })
}

/// Noiseless objective value at `x`.
///
/// # Safety
/// `x` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn azo_objective_value(
    obj: *const AzoObjective,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> AzoStatus {
    guarded(|| {
        let obj = objective_ref(obj)?;
        check_len(len, obj.inner.layout().total_dim(), "x")?;
        let v = obj.inner.value(slice_in(x, len, "x")?);
        if !v.is_finite() {
            return Err(Failure::Core(Error::Evaluation { value: v, x: slice_in(x, len, "x")?.to_vec() }));
        }
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Analytic gradient at `x` into `grad` (both of length `len`).
///
/// # Safety
/// `x` and `grad` must point to `len` values each.
#[no_mangle]
pub unsafe extern "C" fn azo_objective_gradient(
    obj: *const AzoObjective,
    x: *const f64,
    len: usize,
    grad: *mut f64,
) -> AzoStatus {
    guarded(|| {
        let obj = objective_ref(obj)?;
        check_len(len, obj.inner.layout().total_dim(), "x")?;
        let g = obj
            .inner
            .gradient(slice_in(x, len, "x")?)
            .ok_or_else(|| Failure::Invalid(format!("{} has no analytic gradient", obj.inner.name())))?;
        slice_out(grad, len, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Step size and smoothing radius for horizon `horizon`. With
/// `step_scaled`, the `√n̄` factor moves from the radius to the step size.
///
/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn azo_rate_schedule(
    l0: f64,
    n_bar: u64,
    p_min: f64,
    horizon: u64,
    step_scaled: bool,
    out_alpha: *mut f64,
    out_mu: *mut f64,
) -> AzoStatus {
    guarded(|| {
        let variant = if step_scaled { RateScheduleVariant::StepScaled } else { RateScheduleVariant::SmoothingScaled };
        let (alpha, mu) = rate_schedule_variant(l0, n_bar, p_min, horizon, variant)?;
        *out_ref(out_alpha, "out_alpha")? = alpha;
        *out_ref(out_mu, "out_mu")? = mu;
        Ok(())
    })
}

/// Closed-form bound on step `k ≥ 1` of `V_k ≤ γ Σ_m β^m V_{k−1−m} + M`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn azo_sequence_bound(
    gamma: f64,
    beta: f64,
    m_const: f64,
    v0: f64,
    k: u64,
    out: *mut f64,
) -> AzoStatus {
    guarded(|| {
        if k == 0 {
            return Err(Failure::Invalid("k must be at least 1".into()));
        }
        let p = SequenceBoundParams::new(gamma, beta, m_const, v0, k)?;
        *out_ref(out, "out")? = recursive_sequence_bound(&p, k)?;
        Ok(())
    })
}

/// Residual-async, `10⁴` queries, `α = 0.01`, `μ = 0.1`, seed 1.
#[no_mangle]
pub extern "C" fn azo_run_options_default() -> AzoRunOptions {
    AzoRunOptions {
        estimator: AzoEstimator::ResidualAsync,
        budget_queries: 10_000,
        alpha: 0.01,
        mu: 0.1,
        seed: 1,
        trial_id: 0,
    }
}

/// Runs the asynchronous optimizer from `x` (overwritten with the final
/// iterate) with uniform activation.
///
/// # Safety
/// `options` must be readable, `x` must point to `len` values and `stats`
/// must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn azo_run(
    obj: *const AzoObjective,
    options: *const AzoRunOptions,
    x: *mut f64,
    len: usize,
    stats: *mut AzoRunStats,
) -> AzoStatus {
    guarded(|| {
        let obj = objective_ref(obj)?;
        let opts = *options.as_ref().ok_or(Failure::Null("options"))?;
        let layout = obj.inner.layout().clone();
        check_len(len, layout.total_dim(), "x")?;
        let x = slice_out(x, len, "x")?;
        let estimator = match opts.estimator {
            AzoEstimator::ResidualAsync => EstimatorKind::ResidualAsync,
            AzoEstimator::TwoPointAsync => EstimatorKind::TwoPointAsync,
            AzoEstimator::TwoPointAsyncStored => EstimatorKind::TwoPointAsyncStored,
        };
        let mut config = RunConfig::new(
            Budget::Queries(opts.budget_queries),
            estimator,
            Schedule::Manual { alpha: opts.alpha, mu: opts.mu },
            opts.seed,
        );
        config.trial_id = opts.trial_id;
        let x0 = BlockVector::from_values(&layout, x.to_vec())?;
        let out = run_async(
            ObjectiveHandle::new(obj.inner.clone()),
            ActivationModel::uniform(layout.num_blocks()),
            config,
            x0,
            &mut NullRecorder,
        )?;
        x.copy_from_slice(out.x.values());
        if let Some(s) = stats.as_mut() {
            *s = AzoRunStats {
                iterations: out.clock.iteration,
                queries: out.clock.queries,
                updates: out.clock.updates,
                bootstraps: out.clock.bootstraps,
                final_loss: obj.inner.value(out.x.values()),
            };
        }
        Ok(())
    })
}
