//! C ABI over the controller, the soft-body environment and stable rank.
//!
//! Every function returns an [`HmStatus`]. On failure a message is kept per
//! thread and can be read with [`hm_last_error`]. Handles are opaque and must
//! be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use heteromorpheus::analysis::stable_rank;
use heteromorpheus::env::{EnvConfig, SoftBodyEnv, GLOBAL_OBS_DIM, LOCAL_OBS_DIM};
use heteromorpheus::model::{policy_value, Checkpoint, GraphPlan, ModelConfig, Parameters};
use heteromorpheus::morphology::{build_graph, parse_grid, VoxelGrid};
use heteromorpheus::tensor::Tensor;

/// Result code of every `hm_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    BufferSize = 5,
    Io = 6,
    Runtime = 7,
    Panic = 8,
}

/// A validated voxel morphology.
pub struct HmMorphology {
    grid: VoxelGrid,
}

/// Controller parameters.
pub struct HmModel {
    params: Parameters,
    train_morphologies: Vec<String>,
}

/// One soft-body environment instance.
pub struct HmEnv {
    env: SoftBodyEnv,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(HmStatus, String);

type Outcome = Result<(), Failure>;

fn fail<T>(status: HmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HmStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return fail(HmStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .or_else(|_| fail(HmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().map_or_else(|| fail(HmStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn handle_mut<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().map_or_else(|| fail(HmStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return fail(HmStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return fail(HmStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return fail(HmStatus::NullPointer, "output handle pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure(HmStatus::Runtime, e.to_string())
}

/// Optional JSON config: null or empty means defaults.
unsafe fn optional_json<T: serde::de::DeserializeOwned + Default>(ptr: *const c_char, what: &str) -> Result<T, Failure> {
    if ptr.is_null() {
        return Ok(T::default());
    }
    let s = text(ptr, what)?;
    if s.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(s).map_err(|e| Failure(HmStatus::Parse, format!("{what}: {e}")))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next `hm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a `{"name": ..., "grid": [[...]]}` document.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_morphology_parse(json: *const c_char, out: *mut *mut HmMorphology) -> HmStatus {
    guard(|| {
        let grid = parse_grid(text(json, "json")?).map_err(|e| Failure(HmStatus::Parse, e.to_string()))?;
        store(out, HmMorphology { grid })
    })
}

/// Number of non-empty voxels, which is also the action length.
///
/// # Safety
/// `morphology` must come from [`hm_morphology_parse`].
#[no_mangle]
pub unsafe extern "C" fn hm_morphology_node_count(morphology: *const HmMorphology, out: *mut usize) -> HmStatus {
    guard(|| {
        let m = handle(morphology, "morphology")?;
        *handle_mut(out, "out")? = m.grid.voxel_count();
        Ok(())
    })
}

/// # Safety
/// `morphology` must come from [`hm_morphology_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hm_morphology_free(morphology: *mut HmMorphology) {
    if !morphology.is_null() {
        drop(Box::from_raw(morphology));
    }
}

/// Fresh parameters. `config_json` holds model options or is null for defaults.
///
/// # Safety
/// `config_json` is null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_model_init(config_json: *const c_char, seed: u64, out: *mut *mut HmModel) -> HmStatus {
    guard(|| {
        let config: ModelConfig = optional_json(config_json, "model config")?;
        let params = Parameters::init(&config, seed).map_err(|e| Failure(HmStatus::InvalidArgument, e.to_string()))?;
        store(
            out,
            HmModel {
                params,
                train_morphologies: Vec::new(),
            },
        )
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_model_load(path: *const c_char, out: *mut *mut HmModel) -> HmStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        let bytes = std::fs::read(&path).map_err(|e| Failure(HmStatus::Io, format!("cannot read {}: {e}", path.display())))?;
        let ck = Checkpoint::from_bytes(&bytes).map_err(|e| Failure(HmStatus::Parse, e.to_string()))?;
        store(
            out,
            HmModel {
                params: ck.params,
                train_morphologies: ck.train_morphologies,
            },
        )
    })
}

/// # Safety
/// `model` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hm_model_save(model: *const HmModel, path: *const c_char) -> HmStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = PathBuf::from(text(path, "path")?);
        Checkpoint::new(m.params.clone(), m.train_morphologies.clone())
            .save(&path)
            .map_err(|e| Failure(HmStatus::Io, format!("cannot write {}: {e}", path.display())))
    })
}

/// Policy mean and value for one observation. `local` is row-major
/// `node_count × 16`, `global` has 3 entries and `mean_out` holds
/// `node_count` values. `value_out` may be null.
///
/// # Safety
/// Buffers must hold at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn hm_model_act(
    model: *const HmModel,
    morphology: *const HmMorphology,
    local: *const f64,
    local_len: usize,
    global: *const f64,
    global_len: usize,
    mean_out: *mut f64,
    mean_len: usize,
    value_out: *mut f64,
) -> HmStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let g = &handle(morphology, "morphology")?.grid;
        let n = g.voxel_count();
        if local_len != n * LOCAL_OBS_DIM || global_len != GLOBAL_OBS_DIM {
            return fail(
                HmStatus::BufferSize,
                format!(
                    "expected {} local and {GLOBAL_OBS_DIM} global values, got {local_len} and {global_len}",
                    n * LOCAL_OBS_DIM
                ),
            );
        }
        if mean_len != n {
            return fail(HmStatus::BufferSize, format!("mean buffer holds {mean_len} values, need {n}"));
        }
        let local = Tensor::matrix(n, LOCAL_OBS_DIM, slice(local, local_len, "local")?.to_vec()).map_err(runtime)?;
        let global = Tensor::matrix(1, GLOBAL_OBS_DIM, slice(global, global_len, "global")?.to_vec()).map_err(runtime)?;
        let config = m.params.config();
        let plan = GraphPlan::new(&build_graph(g, config.scheme), config)
            .map_err(|e| Failure(HmStatus::InvalidArgument, e.to_string()))?;
        let (mean, value) = policy_value(&m.params, &plan, &local, &global).map_err(runtime)?;
        slice_mut(mean_out, mean_len, "mean_out")?.copy_from_slice(&mean);
        if !value_out.is_null() {
            *value_out = value;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hm_model_free(model: *mut HmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// New environment for `morphology`. `config_json` holds environment options
/// or is null for defaults.
///
/// # Safety
/// `morphology` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_env_new(
    morphology: *const HmMorphology,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut HmEnv,
) -> HmStatus {
    guard(|| {
        let g = &handle(morphology, "morphology")?.grid;
        let config: EnvConfig = optional_json(config_json, "env config")?;
        let env = SoftBodyEnv::new(g, config, seed).map_err(|e| Failure(HmStatus::InvalidArgument, e.to_string()))?;
        store(out, HmEnv { env })
    })
}

/// # Safety
/// `env` must be live.
#[no_mangle]
pub unsafe extern "C" fn hm_env_reset(env: *mut HmEnv, seed: u64) -> HmStatus {
    guard(|| {
        handle_mut(env, "env")?.env.reset(seed);
        Ok(())
    })
}

/// Copies the current observation: `node_count × 16` local values and 3
/// global values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn hm_env_observation(
    env: *const HmEnv,
    local_out: *mut f64,
    local_len: usize,
    global_out: *mut f64,
    global_len: usize,
) -> HmStatus {
    guard(|| {
        let e = handle(env, "env")?;
        let obs = e.env.observe();
        let local = obs.local_flat();
        if local_len != local.len() || global_len != GLOBAL_OBS_DIM {
            return fail(
                HmStatus::BufferSize,
                format!(
                    "expected {} local and {GLOBAL_OBS_DIM} global slots, got {local_len} and {global_len}",
                    local.len()
                ),
            );
        }
        slice_mut(local_out, local_len, "local_out")?.copy_from_slice(&local);
        slice_mut(global_out, global_len, "global_out")?.copy_from_slice(&obs.global);
        Ok(())
    })
}

/// Advances one control step. `done_out` receives 1 when the episode ended.
///
/// # Safety
/// `action` must hold `action_len` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_env_step(
    env: *mut HmEnv,
    action: *const f64,
    action_len: usize,
    reward_out: *mut f64,
    done_out: *mut i32,
) -> HmStatus {
    guard(|| {
        let e = handle_mut(env, "env")?;
        let action = slice(action, action_len, "action")?;
        let reward_out = handle_mut(reward_out, "reward_out")?;
        let done_out = handle_mut(done_out, "done_out")?;
        let outcome = e
            .env
            .step(action)
            .map_err(|err| Failure(HmStatus::InvalidArgument, err.to_string()))?;
        *reward_out = outcome.reward;
        *done_out = outcome.done as i32;
        Ok(())
    })
}

/// # Safety
/// `env` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hm_env_free(env: *mut HmEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Stable rank of a row-major `rows × cols` matrix.
///
/// # Safety
/// `data` must hold `rows * cols` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_stable_rank(data: *const f64, rows: usize, cols: usize, out: *mut f64) -> HmStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l > 0)
            .map_or_else(|| fail(HmStatus::InvalidArgument, "matrix must be non-empty"), Ok)?;
        let m = Tensor::matrix(rows, cols, slice(data, len, "data")?.to_vec()).map_err(runtime)?;
        let sr = stable_rank(&m).map_err(|e| Failure(HmStatus::InvalidArgument, e.to_string()))?;
        *handle_mut(out, "out")? = sr;
        Ok(())
    })
}
