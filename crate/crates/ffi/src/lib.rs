//! C ABI over the abcprune cost model, search space and structure search.
//!
//! Every fallible function returns an [`AbcStatus`]; on failure the message
//! is available from [`abc_last_error`] on the same thread. Handles are opaque
//! and owned by the caller until passed to the matching `_free`.
//!
//! Array outputs use `(buf, cap, out_len)`: `*out_len` always receives the
//! required element count (strings include the NUL), and a `cap` smaller than
//! that returns `ABC_STATUS_BUFFER_TOO_SMALL` without writing to `buf`.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use abcprune::arch::{cost_report, load_architecture, ArchitectureSpec};
use abcprune::fitness::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use abcprune::search::history::write_jsonl;
use abcprune::search::{run_search_in, SearchConfig, SearchOutcome};
use abcprune::space::{Alpha, PrunedStructure, SearchSpace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Evaluator = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque architecture handle.
pub struct AbcArch {
    spec: ArchitectureSpec,
}

/// Opaque search-space handle.
pub struct AbcSpace {
    space: SearchSpace,
}

/// Opaque search result handle.
pub struct AbcResult {
    outcome: SearchOutcome,
    history: CString,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AbcCost {
    pub channels: u64,
    pub flops: u64,
    pub params: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcSearchConfig {
    pub cycles: u32,
    pub population: u32,
    pub max_trials: u32,
    pub fitness_epochs: u32,
    pub seed: u64,
}

/// Fitness callback. Writes a value in `[0, 1]` to `out_fitness` and
/// returns 0; any other return value marks the evaluation as failed.
/// Always invoked on the thread that called [`abc_search_run`].
pub type AbcEvaluateFn = Option<
    unsafe extern "C" fn(
        user_data: *mut c_void,
        channels: *const usize,
        len: usize,
        seed: u64,
        epochs: u32,
        out_fitness: *mut f64,
    ) -> i32,
>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(AbcStatus, String);

impl Failure {
    fn new(status: AbcStatus, message: impl ToString) -> Self {
        Failure(status, message.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AbcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AbcStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AbcStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(AbcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(AbcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(AbcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(AbcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(AbcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    *out(out_len, "out_len")? = src.len();
    if cap < src.len() {
        return Err(Failure::new(
            AbcStatus::BufferTooSmall,
            format!("buffer holds {cap}, need {}", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(Failure::new(AbcStatus::NullPointer, "buf is null"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

unsafe fn copy_str(s: &CStr, buf: *mut c_char, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    copy_out(s.to_bytes_with_nul(), buf.cast::<u8>(), cap, out_len)
}

fn to_c(report: &abcprune::arch::CostReport) -> AbcCost {
    AbcCost {
        channels: report.channels,
        flops: report.flops,
        params: report.params,
    }
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn abc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a descriptor file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_arch` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_arch_load(path: *const c_char, out_arch: *mut *mut AbcArch) -> AbcStatus {
    guard(|| {
        let dest = out(out_arch, "out_arch")?;
        let path = c_str(path, "path")?;
        let spec = load_architecture(path).map_err(|e| match e {
            abcprune::arch::ArchError::Io { .. } => Failure::new(AbcStatus::Io, e),
            other => Failure::new(AbcStatus::Parse, other),
        })?;
        *dest = Box::into_raw(Box::new(AbcArch { spec }));
        Ok(())
    })
}

/// Parses a descriptor from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_arch` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_arch_from_json(json: *const c_char, out_arch: *mut *mut AbcArch) -> AbcStatus {
    guard(|| {
        let dest = out(out_arch, "out_arch")?;
        let spec = ArchitectureSpec::from_json(c_str(json, "json")?).map_err(|e| Failure::new(AbcStatus::Parse, e))?;
        *dest = Box::into_raw(Box::new(AbcArch { spec }));
        Ok(())
    })
}

/// # Safety
/// `arch` must be NULL or a handle from `abc_arch_load`/`abc_arch_from_json`
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_arch_free(arch: *mut AbcArch) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// Number of searchable dimensions (tie groups count once); 0 for NULL.
///
/// # Safety
/// `arch` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abc_arch_dimensions(arch: *const AbcArch) -> usize {
    arch.as_ref().map_or(0, |a| a.spec.num_dimensions())
}

/// Base channel count of every searchable dimension.
///
/// # Safety
/// `arch` must be a live handle; `buf` must hold `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn abc_arch_base_channels(
    arch: *const AbcArch,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> AbcStatus {
    guard(|| copy_out(&handle(arch, "arch")?.spec.base_channels(), buf, cap, out_len))
}

/// Cost of a pruned structure, or of the baseline when `channels` is NULL.
///
/// # Safety
/// `arch` must be a live handle; `channels` must be NULL or hold `len`
/// elements; `out_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_arch_cost(
    arch: *const AbcArch,
    channels: *const usize,
    len: usize,
    out_cost: *mut AbcCost,
) -> AbcStatus {
    guard(|| {
        let spec = &handle(arch, "arch")?.spec;
        let dest = out(out_cost, "out_cost")?;
        let structure = if channels.is_null() {
            None
        } else {
            Some(PrunedStructure::new(slice(channels, len, "channels")?.to_vec()))
        };
        let report = cost_report(spec, structure.as_ref()).map_err(|e| Failure::new(AbcStatus::InvalidArgument, e))?;
        *dest = to_c(&report);
        Ok(())
    })
}

/// Builds the candidate lists at upper bound `alpha_tenths / 10`.
///
/// # Safety
/// `arch` must be a live handle; `out_space` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_space_build(arch: *const AbcArch, alpha_tenths: u8, out_space: *mut *mut AbcSpace) -> AbcStatus {
    guard(|| {
        let spec = &handle(arch, "arch")?.spec;
        let dest = out(out_space, "out_space")?;
        let alpha = Alpha::from_tenths(alpha_tenths).map_err(|e| Failure::new(AbcStatus::InvalidArgument, e))?;
        let space = SearchSpace::build(spec, alpha.value()).map_err(|e| Failure::new(AbcStatus::InvalidArgument, e))?;
        *dest = Box::into_raw(Box::new(AbcSpace { space }));
        Ok(())
    })
}

/// # Safety
/// `space` must be NULL or a handle from `abc_space_build` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_space_free(space: *mut AbcSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// # Safety
/// `space` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abc_space_dimensions(space: *const AbcSpace) -> usize {
    space.as_ref().map_or(0, |s| s.space.dimensions())
}

/// Sorted candidate list of dimension `dim`.
///
/// # Safety
/// `space` must be a live handle; `buf` must hold `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn abc_space_candidates(
    space: *const AbcSpace,
    dim: usize,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> AbcStatus {
    guard(|| {
        let space = &handle(space, "space")?.space;
        if dim >= space.dimensions() {
            return Err(Failure::new(
                AbcStatus::InvalidArgument,
                format!("dimension {dim} out of range (space has {})", space.dimensions()),
            ));
        }
        copy_out(space.candidates(dim), buf, cap, out_len)
    })
}

/// Nearest candidate of dimension `dim` to `value`; ties go to the smaller.
///
/// # Safety
/// `space` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_space_snap(space: *const AbcSpace, value: f64, dim: usize, out_value: *mut usize) -> AbcStatus {
    guard(|| {
        let space = &handle(space, "space")?.space;
        let dest = out(out_value, "out_value")?;
        if dim >= space.dimensions() || !value.is_finite() {
            return Err(Failure::new(AbcStatus::InvalidArgument, "dimension out of range or value not finite"));
        }
        *dest = space.snap(value, dim);
        Ok(())
    })
}

/// Number of structures in the space as a decimal string.
///
/// # Safety
/// `space` must be a live handle; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn abc_space_size_string(
    space: *const AbcSpace,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> AbcStatus {
    guard(|| {
        let size = handle(space, "space")?.space.size().to_string();
        copy_str(&CString::new(size).expect("digits"), buf, cap, out_len)
    })
}

#[no_mangle]
pub extern "C" fn abc_search_config_default() -> AbcSearchConfig {
    let d = SearchConfig::default();
    AbcSearchConfig {
        cycles: d.cycles as u32,
        population: d.population as u32,
        max_trials: d.max_trials,
        fitness_epochs: d.fitness_epochs,
        seed: d.seed,
    }
}

struct Callback {
    f: unsafe extern "C" fn(*mut c_void, *const usize, usize, u64, u32, *mut f64) -> i32,
    user_data: *mut c_void,
}

// Evaluations run on the calling thread only (one worker).
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

impl Evaluator for Callback {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<EvaluationResult, EvalError> {
        let channels = request.structure.channels();
        let mut fitness = f64::NAN;
        let code = unsafe {
            (self.f)(
                self.user_data,
                channels.as_ptr(),
                channels.len(),
                request.seed,
                request.epochs,
                &mut fitness,
            )
        };
        if code != 0 {
            return Err(EvalError::Remote(format!("callback returned {code}")));
        }
        EvaluationResult::new(fitness)
    }
}

/// Runs the search over `space`, calling `evaluate` once per fitness
/// evaluation. A failure during initialisation aborts with
/// `ABC_STATUS_EVALUATOR`; later failures reject the candidate.
///
/// # Safety
/// `space` must be a live handle; `config` must be NULL (defaults) or point
/// to a valid config; `out_result` must be writable. `user_data` is passed
/// through untouched.
#[no_mangle]
pub unsafe extern "C" fn abc_search_run(
    space: *const AbcSpace,
    config: *const AbcSearchConfig,
    evaluate: AbcEvaluateFn,
    user_data: *mut c_void,
    out_result: *mut *mut AbcResult,
) -> AbcStatus {
    guard(|| {
        let space = &handle(space, "space")?.space;
        let dest = out(out_result, "out_result")?;
        let f = evaluate.ok_or_else(|| Failure::new(AbcStatus::NullPointer, "evaluate is null"))?;
        let c = config.as_ref().copied().unwrap_or_else(|| abc_search_config_default());
        let alpha = space
            .alpha()
            .ok_or_else(|| Failure::new(AbcStatus::InvalidArgument, "space has no alpha"))?;
        let search = SearchConfig {
            cycles: c.cycles as usize,
            population: c.population as usize,
            max_trials: c.max_trials,
            alpha: alpha.value(),
            seed: c.seed,
            fitness_epochs: c.fitness_epochs,
        };
        search.validate().map_err(|e| Failure::new(AbcStatus::InvalidArgument, e))?;
        let outcome = run_search_in(space, &search, &Callback { f, user_data }, 1)
            .map_err(|e| Failure::new(AbcStatus::Evaluator, e.error))?;
        let mut jsonl = Vec::new();
        write_jsonl(outcome.history(), &mut jsonl).expect("write to memory");
        let history = CString::new(jsonl).map_err(|e| Failure::new(AbcStatus::Parse, e))?;
        *dest = Box::into_raw(Box::new(AbcResult { outcome, history }));
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle from `abc_search_run` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abc_result_free(result: *mut AbcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Best fitness found; NaN for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abc_result_fitness(result: *const AbcResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.outcome.best_fitness)
}

/// Number of fitness evaluations; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abc_result_evaluations(result: *const AbcResult) -> u64 {
    result.as_ref().map_or(0, |r| r.outcome.evaluations)
}

/// Channel counts of the best structure.
///
/// # Safety
/// `result` must be a live handle; `buf` must hold `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn abc_result_structure(
    result: *const AbcResult,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> AbcStatus {
    guard(|| copy_out(handle(result, "result")?.outcome.best_structure.channels(), buf, cap, out_len))
}

/// Event history as newline-delimited JSON.
///
/// # Safety
/// `result` must be a live handle; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn abc_result_history(
    result: *const AbcResult,
    buf: *mut c_char,
    cap: usize,
    out_len: *mut usize,
) -> AbcStatus {
    guard(|| copy_str(&handle(result, "result")?.history, buf, cap, out_len))
}
