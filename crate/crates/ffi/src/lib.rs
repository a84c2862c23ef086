//! C ABI over `graphmtl`.
//!
//! Objects cross the boundary as opaque handles created by `gmtl_*_new` /
//! `gmtl_*_generate` style constructors and released with the matching
//! `gmtl_*_free`. Every fallible call returns a [`GmtlStatus`]; the message of
//! the most recent failure on the calling thread is available from
//! [`gmtl_last_error_message`]. Panics never unwind into C: they are caught
//! and reported as [`GmtlStatus::Panic`].
//!
//! Matrices are exchanged column-major as `double` buffers: a `d × m`
//! predictor matrix holds `w_1` in its first `d` entries.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use graphmtl::graph::TaskGraph;
use graphmtl::harness::config::{ExperimentConfig, WorldSource};
use graphmtl::harness::runner::{execute, prepare_world, run_experiment};
use graphmtl::synthdata::{generate_world, GeneratedWorld, TaskSpec};
use graphmtl::trace::RunTrace;
use graphmtl::Error;
use nalgebra::DMatrix;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmtlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    Io = 5,
    Panic = 6,
}

/// A generated or loaded synthetic world.
pub struct GmtlWorld(GeneratedWorld);

/// A parsed experiment configuration.
pub struct GmtlConfig(ExperimentConfig);

/// The trace and final predictors of one run.
pub struct GmtlRun(RunTrace);

/// One trace row. `population_loss` and `dist_to_oracle` are NaN when absent.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmtlTraceRow {
    pub round: u64,
    pub comm_rounds: u64,
    pub vectors_per_machine: f64,
    pub samples_per_machine: u64,
    pub erm_objective: f64,
    pub population_loss: f64,
    pub dist_to_oracle: f64,
    pub wall_ms: f64,
}

/// Parameters of a generated world; see [`gmtl_world_spec_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmtlWorldSpec {
    pub d: usize,
    pub m: usize,
    pub clusters: usize,
    pub n: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Neighbours per task in the relatedness graph; 0 picks `min(10, m − 1)`.
    pub knn: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GmtlStatus {
    match e {
        Error::Config(_) | Error::Parse(_) => GmtlStatus::Config,
        Error::Io(_) | Error::Csv(_) => GmtlStatus::Io,
        Error::Dimension(_) | Error::Domain(_) | Error::InvalidAdjacency { .. } | Error::Empty(_) => {
            GmtlStatus::InvalidArgument
        }
        _ => GmtlStatus::Solver,
    }
}

/// Runs `f`, translating errors and panics into a status and the thread's
/// last error.
fn guard<F: FnOnce() -> Result<(), (GmtlStatus, String)>>(f: F) -> GmtlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GmtlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GmtlStatus::Panic
        }
    }
}

fn lib<T>(r: graphmtl::Result<T>) -> Result<T, (GmtlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (GmtlStatus, String) {
    (GmtlStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GmtlStatus, String)> {
    // SAFETY: caller passes either NULL or a live handle of type T.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GmtlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (GmtlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    // SAFETY: checked non-NULL by the caller of this helper.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

unsafe fn copy_matrix(m: &DMatrix<f64>, buf: *mut f64, len: usize) -> Result<(), (GmtlStatus, String)> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < m.len() {
        return Err((
            GmtlStatus::InvalidArgument,
            format!("buffer holds {len} values, need {}", m.len()),
        ));
    }
    // SAFETY: `buf` has room for `len >= m.len()` doubles.
    unsafe { ptr::copy_nonoverlapping(m.as_ptr(), buf, m.len()) };
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gmtl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Clears the thread's last error.
#[no_mangle]
pub extern "C" fn gmtl_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gmtl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults of the synthetic benchmark (`d = m = 100`, `n = 500`, ...).
#[no_mangle]
pub extern "C" fn gmtl_world_spec_default() -> GmtlWorldSpec {
    let s = TaskSpec::default();
    GmtlWorldSpec {
        d: s.d,
        m: s.m,
        clusters: s.clusters,
        n: s.n,
        dev_size: s.dev_size,
        test_size: s.test_size,
        noise_std: s.noise_std,
        seed: s.seed,
        knn: s.knn.unwrap_or(0),
    }
}

/// Generates a world.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_generate(spec: GmtlWorldSpec, out: *mut *mut GmtlWorld) -> GmtlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = TaskSpec {
            d: spec.d,
            m: spec.m,
            clusters: spec.clusters,
            n: spec.n,
            dev_size: spec.dev_size,
            test_size: spec.test_size,
            noise_std: spec.noise_std,
            seed: spec.seed,
            knn: (spec.knn > 0).then_some(spec.knn),
        };
        let world = lib(generate_world(&spec))?;
        unsafe { write_out(out, GmtlWorld(world)) };
        Ok(())
    })
}

/// Loads a world saved by [`gmtl_world_save`] or the `gen` command.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_load(dir: *const c_char, out: *mut *mut GmtlWorld) -> GmtlStatus {
    guard(|| {
        let dir = unsafe { str_arg(dir, "dir") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let world = lib(GeneratedWorld::load(&PathBuf::from(dir)))?;
        unsafe { write_out(out, GmtlWorld(world)) };
        Ok(())
    })
}

/// Saves a world to a directory.
///
/// # Safety
/// `world` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_save(world: *const GmtlWorld, dir: *const c_char) -> GmtlStatus {
    guard(|| {
        let world = unsafe { as_ref(world, "world") }?;
        let dir = unsafe { str_arg(dir, "dir") }?;
        lib(world.0.save(&PathBuf::from(dir)))
    })
}

/// Dimension, task count and connectivity of a world.
///
/// # Safety
/// `world` must be a live handle; the output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_shape(
    world: *const GmtlWorld,
    d: *mut usize,
    m: *mut usize,
    connected: *mut bool,
) -> GmtlStatus {
    guard(|| {
        let w = unsafe { as_ref(world, "world") }?;
        unsafe {
            if let Some(d) = d.as_mut() {
                *d = w.0.spec.d;
            }
            if let Some(m) = m.as_mut() {
                *m = w.0.spec.m;
            }
            if let Some(c) = connected.as_mut() {
                *c = w.0.connected;
            }
        }
        Ok(())
    })
}

/// Copies the `m × m` adjacency matrix.
///
/// # Safety
/// `world` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_adjacency(world: *const GmtlWorld, buf: *mut f64, len: usize) -> GmtlStatus {
    guard(|| {
        let w = unsafe { as_ref(world, "world") }?;
        unsafe { copy_matrix(&w.0.adjacency, buf, len) }
    })
}

/// Copies the `d × m` true predictor matrix.
///
/// # Safety
/// `world` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_true_predictors(
    world: *const GmtlWorld,
    buf: *mut f64,
    len: usize,
) -> GmtlStatus {
    guard(|| {
        let w = unsafe { as_ref(world, "world") }?;
        unsafe { copy_matrix(&w.0.true_predictors, buf, len) }
    })
}

/// Releases a world. NULL is ignored.
///
/// # Safety
/// `world` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gmtl_world_free(world: *mut GmtlWorld) {
    if !world.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(world) });
    }
}

/// Parses a configuration from its text form (`key = value` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gmtl_config_parse(text: *const c_char, out: *mut *mut GmtlConfig) -> GmtlStatus {
    guard(|| {
        let text = unsafe { str_arg(text, "text") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = lib(ExperimentConfig::parse(text))?;
        lib(cfg.validate())?;
        unsafe { write_out(out, GmtlConfig(cfg)) };
        Ok(())
    })
}

/// Replaces the run and world seeds.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmtl_config_set_seed(config: *mut GmtlConfig, seed: u64) -> GmtlStatus {
    guard(|| {
        let cfg = unsafe { config.as_mut() }.ok_or_else(|| null("config"))?;
        cfg.0 = cfg.0.clone().with_seed(seed);
        Ok(())
    })
}

/// Releases a configuration. NULL is ignored.
///
/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gmtl_config_free(config: *mut GmtlConfig) {
    if !config.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Runs a configuration in memory. With `world` NULL the world comes from
/// the configuration itself.
///
/// # Safety
/// `config` must be a live handle, `world` NULL or a live handle, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gmtl_run(
    config: *const GmtlConfig,
    world: *const GmtlWorld,
    out: *mut *mut GmtlRun,
) -> GmtlStatus {
    guard(|| {
        let cfg = unsafe { as_ref(config, "config") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let owned;
        let world = match unsafe { world.as_ref() } {
            Some(w) => {
                if !w.0.connected {
                    return Err((GmtlStatus::Config, "world graph is disconnected".into()));
                }
                &w.0
            }
            None => {
                owned = lib(prepare_world(&cfg.0))?;
                &owned
            }
        };
        let trace = lib(execute(&cfg.0, world, None))?;
        unsafe { write_out(out, GmtlRun(trace)) };
        Ok(())
    })
}

/// Runs a configuration file end to end, writing its output directory.
/// A solver failure inside the run returns [`GmtlStatus::Solver`] after the
/// partial outputs are written.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gmtl_run_config_file(path: *const c_char) -> GmtlStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path") }?;
        let cfg = lib(ExperimentConfig::load(&PathBuf::from(path)))?;
        let summary = lib(run_experiment(&cfg))?;
        match summary.error {
            None => Ok(()),
            Some(e) => Err((GmtlStatus::Solver, e)),
        }
    })
}

/// Number of recorded trace rows.
///
/// # Safety
/// `run` must be NULL or a live handle; NULL gives 0.
#[no_mangle]
pub unsafe extern "C" fn gmtl_run_row_count(run: *const GmtlRun) -> usize {
    unsafe { run.as_ref() }.map_or(0, |r| r.0.rows.len())
}

/// Copies trace row `index`.
///
/// # Safety
/// `run` must be a live handle; `row` writable.
#[no_mangle]
pub unsafe extern "C" fn gmtl_run_row(run: *const GmtlRun, index: usize, row: *mut GmtlTraceRow) -> GmtlStatus {
    guard(|| {
        let r = unsafe { as_ref(run, "run") }?;
        let row = unsafe { row.as_mut() }.ok_or_else(|| null("row"))?;
        let src = r.0.rows.get(index).ok_or_else(|| {
            (
                GmtlStatus::InvalidArgument,
                format!("row {index} out of range ({} rows)", r.0.rows.len()),
            )
        })?;
        *row = GmtlTraceRow {
            round: src.round as u64,
            comm_rounds: src.comm_rounds as u64,
            vectors_per_machine: src.vectors_per_machine,
            samples_per_machine: src.samples_per_machine,
            erm_objective: src.erm_objective,
            population_loss: src.population_loss.unwrap_or(f64::NAN),
            dist_to_oracle: src.dist_to_oracle.unwrap_or(f64::NAN),
            wall_ms: src.wall_ms,
        };
        Ok(())
    })
}

/// Copies the final `d × m` predictor matrix.
///
/// # Safety
/// `run` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gmtl_run_predictors(run: *const GmtlRun, buf: *mut f64, len: usize) -> GmtlStatus {
    guard(|| {
        let r = unsafe { as_ref(run, "run") }?;
        unsafe { copy_matrix(&r.0.final_w, buf, len) }
    })
}

/// Releases a run. NULL is ignored.
///
/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gmtl_run_free(run: *mut GmtlRun) {
    if !run.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(run) });
    }
}

/// `ρ(B, S)` of the graph with the given `m × m` adjacency.
///
/// # Safety
/// `adjacency` must point to `m * m` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gmtl_rho(adjacency: *const f64, m: usize, b: f64, s: f64, out: *mut f64) -> GmtlStatus {
    guard(|| {
        if adjacency.is_null() {
            return Err(null("adjacency"));
        }
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        // SAFETY: caller guarantees m*m readable doubles.
        let a = DMatrix::from_column_slice(m, m, unsafe { std::slice::from_raw_parts(adjacency, m * m) });
        let graph = lib(TaskGraph::from_adjacency(a))?;
        *out = lib(graph.rho(b, s))?;
        Ok(())
    })
}

/// `(τ/(η+τ))^{t/(1+Γ)}·v0`, the delayed-gossip contraction bound.
#[no_mangle]
pub extern "C" fn gmtl_theorem7_bound(t: usize, eta: f64, tau: f64, gamma_max: usize, v0: f64) -> f64 {
    graphmtl::delay::theorem7_bound(t, eta, tau, gamma_max, v0)
}

/// Runs every verification suite, writing one report CSV per suite into
/// `out_dir` when it is not NULL. `all_pass` receives the overall verdict.
///
/// # Safety
/// `out_dir` must be NULL or a NUL-terminated string; `all_pass` writable.
#[no_mangle]
pub unsafe extern "C" fn gmtl_verify(seed: u64, out_dir: *const c_char, all_pass: *mut bool) -> GmtlStatus {
    guard(|| {
        let all_pass = unsafe { all_pass.as_mut() }.ok_or_else(|| null("all_pass"))?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(unsafe { str_arg(out_dir, "out_dir") }?))
        };
        let reports = lib(graphmtl::verification::full_suite(seed))?;
        if let Some(dir) = &dir {
            lib(std::fs::create_dir_all(dir).map_err(Error::from))?;
            for r in &reports {
                lib(r.save(&dir.join(format!("{}.csv", r.suite))))?;
            }
        }
        *all_pass = reports.iter().all(|r| r.all_pass());
        Ok(())
    })
}

/// Whether the world source of a configuration is generated (`true`) or
/// loaded from disk.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmtl_config_generates_world(config: *const GmtlConfig) -> bool {
    unsafe { config.as_ref() }.is_some_and(|c| matches!(c.0.world, WorldSource::Generate(_)))
}
