//! C ABI for the architecture-search engine.
//!
//! Conventions:
//!
//! * Handles (`MoTransConfig`, `MoTransGenome`, `MoTransSearch`) are opaque;
//!   create and destroy them only through these functions.
//! * Every fallible call returns a [`MoTransStatus`]; on anything except
//!   `OK`, [`mo_trans_last_error`] holds a human-readable message valid
//!   until the same thread's next call into this library.
//! * Returned `char*` strings are owned by the caller and must be released
//!   with [`mo_trans_string_free`] — except `mo_trans_version` and
//!   `mo_trans_last_error`, which borrow.
//! * Panics never unwind across the boundary; they surface as
//!   `MO_TRANS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mo_trans::data::gen_synthetic;
use mo_trans::evaluator::{surrogate_evaluate, Evaluator, NeuralEvaluator, SurrogateEvaluator};
use mo_trans::genome::{
    self, decode_flat, encode_flat, from_json, param_count, render_dot, search_space_size, to_json,
    Genome, ModelGlobals, SearchConfig,
};
use mo_trans::moead::{checkpoint_load, checkpoint_save, pareto_csv, Search};

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoTransStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration failed validation or could not be parsed.
    InvalidConfig = 3,
    /// The genome failed validation or could not be parsed.
    InvalidGenome = 4,
    /// The search engine reported an error.
    SearchFailed = 5,
    /// Reading or writing a file failed.
    IoFailed = 6,
    /// An index was out of range.
    OutOfRange = 7,
    /// A panic was caught at the boundary.
    Panic = 8,
}

/// Which fitness function a search handle uses. Neural variants train real
/// models on a synthetic task corpus derived from the config seed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoTransEvaluatorKind {
    Surrogate = 0,
    NeuralCopy = 1,
    NeuralReverse = 2,
    NeuralSort = 3,
}

/// Opaque search configuration handle.
pub struct MoTransConfig {
    inner: SearchConfig,
}

/// Opaque architecture genome handle.
pub struct MoTransGenome {
    inner: Genome,
}

/// Opaque search handle: optimizer state plus the evaluator chosen at
/// construction.
pub struct MoTransSearch {
    search: Search,
    evaluator: Box<dyn Evaluator>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl Into<String>) {
    let message: String = message.into();
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::default();
    });
}

fn fail(status: MoTransStatus, message: impl Into<String>) -> MoTransStatus {
    set_last_error(message);
    status
}

/// Runs the body with a panic guard; the body must already have stored an
/// error message for non-OK statuses.
fn guarded(body: impl FnOnce() -> MoTransStatus) -> MoTransStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MoTransStatus::Panic, format!("panic at FFI boundary: {detail}"))
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, MoTransStatus> {
    if ptr.is_null() {
        return Err(fail(MoTransStatus::NullArgument, "string argument is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(MoTransStatus::InvalidUtf8, format!("argument is not UTF-8: {e}")))
}

fn give_string(out: *mut *mut c_char, s: String) -> MoTransStatus {
    let c = match CString::new(s.replace('\0', " ")) {
        Ok(c) => c,
        Err(e) => return fail(MoTransStatus::Panic, format!("string conversion: {e}")),
    };
    unsafe { *out = c.into_raw() };
    clear_last_error();
    MoTransStatus::Ok
}

fn build_evaluator(
    kind: MoTransEvaluatorKind,
    config: &SearchConfig,
) -> Result<Box<dyn Evaluator>, MoTransStatus> {
    let task = match kind {
        MoTransEvaluatorKind::Surrogate => {
            let globals =
                ModelGlobals { embed_dim: config.embed_dim, src_vocab: 16, tgt_vocab: 16 };
            return Ok(Box::new(SurrogateEvaluator { globals }));
        }
        MoTransEvaluatorKind::NeuralCopy => mo_trans::data::SyntheticTask::Copy,
        MoTransEvaluatorKind::NeuralReverse => mo_trans::data::SyntheticTask::Reverse,
        MoTransEvaluatorKind::NeuralSort => mo_trans::data::SyntheticTask::Sort,
    };
    let corpus = gen_synthetic(task, 2000, 16, [3, 10], config.seed)
        .map_err(|e| fail(MoTransStatus::SearchFailed, format!("corpus: {e}")))?;
    Ok(Box::new(NeuralEvaluator {
        corpus,
        embed_dim: config.embed_dim,
        train: config.training.clone(),
        seed: config.seed,
    }))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn mo_trans_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the calling thread's most recent failure; empty when
/// the last call succeeded. Borrowed — do not free.
#[no_mangle]
pub extern "C" fn mo_trans_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer previously returned by a `char**` out
/// parameter of this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a configuration with the built-in defaults.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_config_default(out: *mut *mut MoTransConfig) -> MoTransStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MoTransStatus::NullArgument, "out is null");
        }
        let handle = Box::new(MoTransConfig { inner: SearchConfig::default() });
        *out = Box::into_raw(handle);
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Parses and validates a configuration from its JSON form.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_config_from_json(
    json: *const c_char,
    out: *mut *mut MoTransConfig,
) -> MoTransStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MoTransStatus::NullArgument, "out is null");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let config: SearchConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(MoTransStatus::InvalidConfig, format!("config JSON: {e}")),
        };
        if let Err(e) = config.validate() {
            return fail(MoTransStatus::InvalidConfig, e.to_string());
        }
        *out = Box::into_raw(Box::new(MoTransConfig { inner: config }));
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Serializes a configuration to JSON.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_config_to_json(
    config: *const MoTransConfig,
    out: *mut *mut c_char,
) -> MoTransStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "config/out is null");
        }
        match serde_json::to_string_pretty(&(*config).inner) {
            Ok(json) => give_string(out, json),
            Err(e) => fail(MoTransStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Destroys a configuration handle.
///
/// # Safety
/// `config` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_config_free(config: *mut MoTransConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Writes the exact architecture-space size for `ne` encoder and `nd`
/// decoder blocks as a decimal string.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_space_size(
    config: *const MoTransConfig,
    ne: usize,
    nd: usize,
    out: *mut *mut c_char,
) -> MoTransStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "config/out is null");
        }
        if ne < 1 || nd < 1 {
            return fail(MoTransStatus::InvalidConfig, "ne and nd must be at least 1");
        }
        let size = search_space_size(ne, nd, &(*config).inner);
        give_string(out, size.to_string())
    })
}

/// Parses a genome from its JSON form (structural checks only; use
/// [`mo_trans_genome_check`] for config-level validation).
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_from_json(
    json: *const c_char,
    out: *mut *mut MoTransGenome,
) -> MoTransStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MoTransStatus::NullArgument, "out is null");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match from_json(text) {
            Ok(genome) => {
                *out = Box::into_raw(Box::new(MoTransGenome { inner: genome }));
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::InvalidGenome, e.to_string()),
        }
    })
}

/// Decodes a genome from its flat integer encoding.
///
/// # Safety
/// `values` must point to `len` readable u32s; `config` must be a live
/// handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_from_flat(
    values: *const u32,
    len: usize,
    config: *const MoTransConfig,
    out: *mut *mut MoTransGenome,
) -> MoTransStatus {
    guarded(|| {
        if values.is_null() || config.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "values/config/out is null");
        }
        let xs = std::slice::from_raw_parts(values, len);
        match decode_flat(xs, &(*config).inner) {
            Ok(genome) => {
                *out = Box::into_raw(Box::new(MoTransGenome { inner: genome }));
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::InvalidGenome, e.to_string()),
        }
    })
}

/// Serializes a genome to JSON.
///
/// # Safety
/// `genome` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_to_json(
    genome: *const MoTransGenome,
    out: *mut *mut c_char,
) -> MoTransStatus {
    guarded(|| {
        if genome.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "genome/out is null");
        }
        give_string(out, to_json(&(*genome).inner))
    })
}

/// Writes the flat encoding into `buffer`. Call with `buffer = NULL` to
/// query the required length via `len`.
///
/// # Safety
/// `genome` must be a live handle; `len` must be valid; `buffer`, when
/// non-null, must hold at least `*len` writable u32s (its capacity on input).
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_to_flat(
    genome: *const MoTransGenome,
    buffer: *mut u32,
    len: *mut usize,
) -> MoTransStatus {
    guarded(|| {
        if genome.is_null() || len.is_null() {
            return fail(MoTransStatus::NullArgument, "genome/len is null");
        }
        let flat = match encode_flat(&(*genome).inner) {
            Ok(f) => f,
            Err(e) => return fail(MoTransStatus::InvalidGenome, e.to_string()),
        };
        if buffer.is_null() {
            *len = flat.len();
            clear_last_error();
            return MoTransStatus::Ok;
        }
        if *len < flat.len() {
            return fail(
                MoTransStatus::OutOfRange,
                format!("buffer holds {} values, need {}", *len, flat.len()),
            );
        }
        std::ptr::copy_nonoverlapping(flat.as_ptr(), buffer, flat.len());
        *len = flat.len();
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Renders a genome as a Graphviz DOT schematic.
///
/// # Safety
/// `genome` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_to_dot(
    genome: *const MoTransGenome,
    out: *mut *mut c_char,
) -> MoTransStatus {
    guarded(|| {
        if genome.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "genome/out is null");
        }
        give_string(out, render_dot(&(*genome).inner))
    })
}

/// Validates a genome against a configuration; violations are reported
/// through [`mo_trans_last_error`], newline-separated.
///
/// # Safety
/// `genome` and `config` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_check(
    genome: *const MoTransGenome,
    config: *const MoTransConfig,
) -> MoTransStatus {
    guarded(|| {
        if genome.is_null() || config.is_null() {
            return fail(MoTransStatus::NullArgument, "genome/config is null");
        }
        let violations = genome::validate(&(*genome).inner, &(*config).inner);
        if violations.is_empty() {
            clear_last_error();
            MoTransStatus::Ok
        } else {
            fail(MoTransStatus::InvalidGenome, violations.join("\n"))
        }
    })
}

/// Exact trainable-parameter count of the genome's model.
///
/// # Safety
/// `genome` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_param_count(
    genome: *const MoTransGenome,
    embed_dim: usize,
    src_vocab: usize,
    tgt_vocab: usize,
    out: *mut u64,
) -> MoTransStatus {
    guarded(|| {
        if genome.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "genome/out is null");
        }
        let globals = ModelGlobals { embed_dim, src_vocab, tgt_vocab };
        *out = param_count(&(*genome).inner, &globals);
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Destroys a genome handle.
///
/// # Safety
/// `genome` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_genome_free(genome: *mut MoTransGenome) {
    if !genome.is_null() {
        drop(Box::from_raw(genome));
    }
}

/// Evaluates a genome with the closed-form surrogate; writes the metrics as
/// JSON.
///
/// # Safety
/// `genome` and `config` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_eval_surrogate(
    genome: *const MoTransGenome,
    config: *const MoTransConfig,
    out: *mut *mut c_char,
) -> MoTransStatus {
    guarded(|| {
        if genome.is_null() || config.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "genome/config/out is null");
        }
        let globals =
            ModelGlobals { embed_dim: (*config).inner.embed_dim, src_vocab: 16, tgt_vocab: 16 };
        let metrics = surrogate_evaluate(&(*genome).inner, &globals);
        match serde_json::to_string_pretty(&metrics) {
            Ok(json) => give_string(out, json),
            Err(e) => fail(MoTransStatus::SearchFailed, e.to_string()),
        }
    })
}

/// Creates a fresh (uninitialized) search from a configuration, master
/// seed, and evaluator choice.
///
/// # Safety
/// `config` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_new(
    config: *const MoTransConfig,
    seed: u64,
    evaluator: MoTransEvaluatorKind,
    out: *mut *mut MoTransSearch,
) -> MoTransStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "config/out is null");
        }
        let mut cfg = (*config).inner.clone();
        cfg.seed = seed;
        let evaluator = match build_evaluator(evaluator, &cfg) {
            Ok(e) => e,
            Err(status) => return status,
        };
        match Search::new(cfg, seed) {
            Ok(search) => {
                *out = Box::into_raw(Box::new(MoTransSearch { search, evaluator }));
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Restores a search from a checkpoint file. Pass the evaluator the
/// original run used; the checkpoint stores only the optimizer state.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_load(
    path: *const c_char,
    evaluator: MoTransEvaluatorKind,
    out: *mut *mut MoTransSearch,
) -> MoTransStatus {
    guarded(|| {
        if out.is_null() {
            return fail(MoTransStatus::NullArgument, "out is null");
        }
        let path = match read_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let (config, state) = match checkpoint_load(Path::new(path)) {
            Ok(pair) => pair,
            Err(e) => return fail(MoTransStatus::IoFailed, e.to_string()),
        };
        let evaluator = match build_evaluator(evaluator, &config) {
            Ok(e) => e,
            Err(status) => return status,
        };
        match Search::restore(config, state) {
            Ok(search) => {
                *out = Box::into_raw(Box::new(MoTransSearch { search, evaluator }));
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Writes the search state to a checkpoint file (atomically).
///
/// # Safety
/// `search` must be a live handle; `path` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_save(
    search: *const MoTransSearch,
    path: *const c_char,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() {
            return fail(MoTransStatus::NullArgument, "search is null");
        }
        let path = match read_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let handle = &*search;
        match checkpoint_save(&handle.search.state(), handle.search.config(), Path::new(path)) {
            Ok(()) => {
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::IoFailed, e.to_string()),
        }
    })
}

/// Draws and evaluates the initial population with up to `workers` threads.
///
/// # Safety
/// `search` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_initialize(
    search: *mut MoTransSearch,
    workers: usize,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() {
            return fail(MoTransStatus::NullArgument, "search is null");
        }
        let handle = &mut *search;
        match handle.search.initialize(&*handle.evaluator, workers.max(1)) {
            Ok(()) => {
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::SearchFailed, e.to_string()),
        }
    })
}

/// Advances the search by one subproblem update; sets `done` when all
/// configured generations have been swept.
///
/// # Safety
/// `search` must be a live, initialized handle; `done` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_step(
    search: *mut MoTransSearch,
    done: *mut bool,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || done.is_null() {
            return fail(MoTransStatus::NullArgument, "search/done is null");
        }
        let handle = &mut *search;
        match handle.search.step_subproblem(&*handle.evaluator) {
            Ok(()) => {
                *done = handle.search.done();
                clear_last_error();
                MoTransStatus::Ok
            }
            Err(e) => fail(MoTransStatus::SearchFailed, e.to_string()),
        }
    })
}

/// Runs to completion: initializes if necessary, then sweeps every
/// remaining generation.
///
/// # Safety
/// `search` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_run(search: *mut MoTransSearch) -> MoTransStatus {
    guarded(|| {
        if search.is_null() {
            return fail(MoTransStatus::NullArgument, "search is null");
        }
        let handle = &mut *search;
        if !handle.search.is_initialized() {
            if let Err(e) = handle.search.initialize(&*handle.evaluator, 1) {
                return fail(MoTransStatus::SearchFailed, e.to_string());
            }
        }
        while !handle.search.done() {
            if let Err(e) = handle.search.step_subproblem(&*handle.evaluator) {
                return fail(MoTransStatus::SearchFailed, e.to_string());
            }
        }
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Completed generation count.
///
/// # Safety
/// `search` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_generation(
    search: *const MoTransSearch,
    out: *mut usize,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "search/out is null");
        }
        *out = (*search).search.generation();
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Number of evaluator calls recorded in the run history.
///
/// # Safety
/// `search` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_eval_count(
    search: *const MoTransSearch,
    out: *mut usize,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "search/out is null");
        }
        *out = (*search).search.eval_log().len();
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Size of the non-dominated archive.
///
/// # Safety
/// `search` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_ep_len(
    search: *const MoTransSearch,
    out: *mut usize,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "search/out is null");
        }
        *out = (*search).search.ep().len();
        clear_last_error();
        MoTransStatus::Ok
    })
}

/// Objective pair of archive entry `index`.
///
/// # Safety
/// `search` must be a live handle; `f1` and `f2` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_ep_objectives(
    search: *const MoTransSearch,
    index: usize,
    f1: *mut f64,
    f2: *mut f64,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || f1.is_null() || f2.is_null() {
            return fail(MoTransStatus::NullArgument, "search/f1/f2 is null");
        }
        let ep = (*search).search.ep();
        match ep.entries.get(index) {
            Some(entry) => {
                *f1 = entry.objectives.f1;
                *f2 = entry.objectives.f2;
                clear_last_error();
                MoTransStatus::Ok
            }
            None => fail(
                MoTransStatus::OutOfRange,
                format!("index {index} out of range for archive of {}", ep.len()),
            ),
        }
    })
}

/// Genome of archive entry `index`, as a fresh handle.
///
/// # Safety
/// `search` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_ep_genome(
    search: *const MoTransSearch,
    index: usize,
    out: *mut *mut MoTransGenome,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "search/out is null");
        }
        let ep = (*search).search.ep();
        match ep.entries.get(index) {
            Some(entry) => {
                *out = Box::into_raw(Box::new(MoTransGenome { inner: entry.genome.clone() }));
                clear_last_error();
                MoTransStatus::Ok
            }
            None => fail(
                MoTransStatus::OutOfRange,
                format!("index {index} out of range for archive of {}", ep.len()),
            ),
        }
    })
}

/// The archive as CSV (header `genome_flat,bleu,perplexity,f1,f2,params`,
/// sorted by f1).
///
/// # Safety
/// `search` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_pareto_csv(
    search: *const MoTransSearch,
    out: *mut *mut c_char,
) -> MoTransStatus {
    guarded(|| {
        if search.is_null() || out.is_null() {
            return fail(MoTransStatus::NullArgument, "search/out is null");
        }
        match pareto_csv((*search).search.ep()) {
            Ok(csv) => give_string(out, csv),
            Err(e) => fail(MoTransStatus::SearchFailed, e.to_string()),
        }
    })
}

/// Destroys a search handle.
///
/// # Safety
/// `search` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mo_trans_search_free(search: *mut MoTransSearch) {
    if !search.is_null() {
        drop(Box::from_raw(search));
    }
}
