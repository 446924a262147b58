//! C ABI over the variational Monte Carlo engine: opaque engine handles,
//! integer status codes and a thread-local error message.
//!
//! The matching declarations live in `include/vmc.h`, which is maintained by
//! hand and covered by the tests in `tests/capi.rs`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use vmc_core::runner::{Checkpoint, EnergyLog, RunConfig, Trainer};

pub const VMC_OK: i32 = 0;
pub const VMC_ERR_INVALID_ARGUMENT: i32 = 1;
pub const VMC_ERR_CONFIG: i32 = 2;
pub const VMC_ERR_NUMERIC: i32 = 3;
pub const VMC_ERR_IO: i32 = 4;
pub const VMC_ERR_PANIC: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let owned = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

/// Opaque engine handle.
pub struct VmcEngine {
    trainer: Trainer,
}

/// Energy statistics returned by evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmcEnergyStats {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

fn guarded<F: FnOnce() -> i32>(body: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            VMC_ERR_PANIC
        }
    }
}

/// Copies the last error message for this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null with `len == 0`).
#[no_mangle]
pub unsafe extern "C" fn vmc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // Always NUL-terminate.
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates an engine from a TOML run configuration.
///
/// # Safety
/// `config_toml` must be a NUL-terminated UTF-8 string; `out` must be a
/// valid pointer to an engine pointer.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_new(
    config_toml: *const c_char,
    out: *mut *mut VmcEngine,
) -> i32 {
    guarded(|| {
        if config_toml.is_null() || out.is_null() {
            set_error("null argument");
            return VMC_ERR_INVALID_ARGUMENT;
        }
        let text = match CStr::from_ptr(config_toml).to_str() {
            Ok(text) => text,
            Err(_) => {
                set_error("config is not valid UTF-8");
                return VMC_ERR_INVALID_ARGUMENT;
            }
        };
        let config = match RunConfig::from_toml(text) {
            Ok(config) => config,
            Err(e) => {
                set_error(&e.to_string());
                return VMC_ERR_CONFIG;
            }
        };
        match Trainer::new(config) {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(VmcEngine { trainer }));
                VMC_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                VMC_ERR_CONFIG
            }
        }
    })
}

/// Releases an engine. Null is a no-op.
///
/// # Safety
/// `engine` must be a pointer returned by this library, released once.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_free(engine: *mut VmcEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Runs the supervised pretraining phase (a no-op when disabled).
///
/// # Safety
/// `engine` must be a valid engine pointer.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_pretrain(engine: *mut VmcEngine) -> i32 {
    guarded(|| {
        let Some(engine) = engine.as_mut() else {
            set_error("null engine");
            return VMC_ERR_INVALID_ARGUMENT;
        };
        match engine.trainer.pretrain() {
            Ok(_) => VMC_OK,
            Err(e) => {
                set_error(&e.to_string());
                VMC_ERR_NUMERIC
            }
        }
    })
}

/// Advances the optimization by `n_steps`. When `out_energy` is non-null it
/// receives the mean energy over the geometry walkers at the last step.
///
/// # Safety
/// `engine` must be a valid engine pointer; `out_energy` null or writable.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_train(
    engine: *mut VmcEngine,
    n_steps: u64,
    out_energy: *mut f64,
) -> i32 {
    guarded(|| {
        let Some(engine) = engine.as_mut() else {
            set_error("null engine");
            return VMC_ERR_INVALID_ARGUMENT;
        };
        let mut log = EnergyLog::memory();
        for _ in 0..n_steps {
            match engine.trainer.step() {
                Ok(records) => {
                    for record in records {
                        let _ = log.push(record);
                    }
                }
                Err(e) => {
                    set_error(&e.to_string());
                    return VMC_ERR_NUMERIC;
                }
            }
        }
        if !out_energy.is_null() {
            let last_step = log.records.last().map(|r| r.step);
            let tail: Vec<f64> = log
                .records
                .iter()
                .filter(|r| Some(r.step) == last_step)
                .map(|r| r.energy)
                .collect();
            *out_energy = if tail.is_empty() {
                f64::NAN
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            };
        }
        VMC_OK
    })
}

/// Evaluates the model at one geometry-template parameter value.
///
/// # Safety
/// `engine` must be a valid engine pointer and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_evaluate(
    engine: *const VmcEngine,
    param: f64,
    n_samples: u64,
    seed: u64,
    out: *mut VmcEnergyStats,
) -> i32 {
    guarded(|| {
        let Some(engine) = engine.as_ref() else {
            set_error("null engine");
            return VMC_ERR_INVALID_ARGUMENT;
        };
        if out.is_null() || n_samples == 0 {
            set_error("null output or zero sample count");
            return VMC_ERR_INVALID_ARGUMENT;
        }
        let config = match engine.trainer.source.realize(param) {
            Ok(config) => config,
            Err(e) => {
                set_error(&e.to_string());
                return VMC_ERR_CONFIG;
            }
        };
        match engine.trainer.evaluate(&config, n_samples as usize, seed) {
            Ok(stats) => {
                *out = VmcEnergyStats {
                    mean: stats.mean,
                    variance: stats.variance,
                    std_error: stats.std_error,
                    n_samples: stats.n_samples as u64,
                };
                VMC_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                VMC_ERR_NUMERIC
            }
        }
    })
}

/// Saves the engine state to a checkpoint file.
///
/// # Safety
/// `engine` valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_save(engine: *const VmcEngine, path: *const c_char) -> i32 {
    guarded(|| {
        let Some(engine) = engine.as_ref() else {
            set_error("null engine");
            return VMC_ERR_INVALID_ARGUMENT;
        };
        let Some(path) = cstr_path(path) else {
            return VMC_ERR_INVALID_ARGUMENT;
        };
        match engine.trainer.checkpoint().save(&path) {
            Ok(()) => VMC_OK,
            Err(e) => {
                set_error(&e.to_string());
                VMC_ERR_IO
            }
        }
    })
}

/// Restores an engine from a checkpoint file.
///
/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_load(path: *const c_char, out: *mut *mut VmcEngine) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("null output");
            return VMC_ERR_INVALID_ARGUMENT;
        }
        let Some(path) = cstr_path(path) else {
            return VMC_ERR_INVALID_ARGUMENT;
        };
        let checkpoint = match Checkpoint::load(&path) {
            Ok(checkpoint) => checkpoint,
            Err(e) => {
                set_error(&e.to_string());
                return VMC_ERR_IO;
            }
        };
        match Trainer::resume(checkpoint) {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(VmcEngine { trainer }));
                VMC_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                VMC_ERR_CONFIG
            }
        }
    })
}

/// Current optimization step of the engine.
///
/// # Safety
/// `engine` must be a valid engine pointer.
#[no_mangle]
pub unsafe extern "C" fn vmc_engine_step(engine: *const VmcEngine) -> u64 {
    engine.as_ref().map_or(0, |e| e.trainer.state.step)
}

unsafe fn cstr_path(path: *const c_char) -> Option<std::path::PathBuf> {
    if path.is_null() {
        set_error("null path");
        return None;
    }
    match CStr::from_ptr(path).to_str() {
        Ok(p) => Some(Path::new(p).to_path_buf()),
        Err(_) => {
            set_error("path is not valid UTF-8");
            None
        }
    }
}
