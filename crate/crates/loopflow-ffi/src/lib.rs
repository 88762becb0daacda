//! C ABI for the loopflow backbone loop refinement library.
//!
//! The generated header lives at `include/loopflow.h` (rebuilt by
//! `build.rs` on every compile).  Conventions:
//!
//! * Every fallible entry point returns an [`LfStatus`]; `LF_STATUS_OK`
//!   is zero.  Output parameters are written only on success.
//! * [`LfStructure`] and [`LfModel`] are opaque handles, released with
//!   the matching `*_free` function.  Strings allocated by the library
//!   are released with [`lf_string_free`].  All `*_free` functions
//!   accept null.
//! * After a failure, [`lf_last_error`] returns a message describing the
//!   most recent error on the calling thread.
//! * Tunables are passed as nullable `key=value` configuration text, one
//!   assignment per line — the same format the `loopflow` CLI accepts
//!   via `--config`.  Null means library defaults.
//! * Every entry point catches panics; a caught panic is reported as
//!   `LF_STATUS_INTERNAL` instead of unwinding into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use loopflow::config::RunConfig;
use loopflow::energy::total_guidance_energy;
use loopflow::model::checkpoint::{load_checkpoint, save_checkpoint};
use loopflow::model::{init_params, ModelParams};
use loopflow::frames::BackboneChain;
use loopflow::pdb::{parse_pdb_backbone, write_pdb_backbone};
use loopflow::sampler::{refine, refine_sde};
use loopflow::structure::{
    resolve_selections, rmsd_backbone, synth_prior, NoiseSpec, RefinementProblem, Selection,
};
use loopflow::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input text could not be parsed (PDB records, a selection, or
    /// configuration syntax).
    Parse = 3,
    /// Arguments were well-formed but invalid together (selection names an
    /// absent chain, configuration value out of range, mismatched
    /// structures, bad checkpoint).
    Invalid = 4,
    /// A numerical routine hit degenerate geometry (collinear atoms,
    /// rotation log near pi, coincident atoms, time guard).
    Numeric = 5,
    /// A file could not be read or written.
    Io = 6,
    /// A panic was caught at the C boundary; treat the handles involved
    /// as poisoned.
    Internal = 7,
}

/// An ordered set of protein backbone chains (opaque).
pub struct LfStructure {
    chains: Vec<BackboneChain>,
}

/// Model parameters for the refinement network (opaque).
pub struct LfModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: LfStatus, msg: impl AsRef<str>) -> LfStatus {
    let clean: String = msg
        .as_ref()
        .chars()
        .map(|c| if c == '\0' { ' ' } else { c })
        .collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("NULs replaced"));
    status
}

fn status_of(err: &Error) -> LfStatus {
    match err {
        Error::MalformedRecord { .. } | Error::EmptyInput | Error::BadSelection(_) => {
            LfStatus::Parse
        }
        Error::Config(_)
        | Error::Checkpoint(_)
        | Error::Manifest(_)
        | Error::SelectionMismatch(_)
        | Error::LengthMismatch { .. }
        | Error::ShapeMismatch(_)
        | Error::MaskDegenerate { .. }
        | Error::NotCached
        | Error::MissingBackboneAtom { .. } => LfStatus::Invalid,
        Error::AngleAtPi { .. }
        | Error::TimeTooClose { .. }
        | Error::CollinearAtoms { .. }
        | Error::CoincidentAtoms { .. }
        | Error::NotARotation { .. } => LfStatus::Numeric,
        Error::Io(_) | Error::File { .. } => LfStatus::Io,
    }
}

fn fail_err(err: &Error) -> LfStatus {
    fail(status_of(err), err.to_string())
}

/// Runs the body under `catch_unwind` and funnels both early exits and the
/// final status through one return value.
fn run(f: impl FnOnce() -> Result<LfStatus, LfStatus>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(status)) => status,
        Err(_) => fail(LfStatus::Internal, "panic caught at the C boundary"),
    }
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn in_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, LfStatus> {
    if ptr.is_null() {
        return Err(fail(LfStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(LfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// As [`in_str`], but null is accepted and maps to `None`.
unsafe fn opt_str<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, LfStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    in_str(ptr, what).map(Some)
}

/// # Safety
/// `ptr` must be null or a valid, live pointer to `T`.
unsafe fn ref_in<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, LfStatus> {
    ptr.as_ref()
        .ok_or_else(|| fail(LfStatus::NullArgument, format!("{what} is null")))
}

/// # Safety
/// `out` must be null or a valid destination pointer.
unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<LfStatus, LfStatus> {
    if out.is_null() {
        return Err(fail(LfStatus::NullArgument, format!("{what} is null")));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(LfStatus::Ok)
}

/// # Safety
/// `out` must be null or a valid destination pointer.
unsafe fn put_f64(out: *mut f64, value: f64, what: &str) -> Result<LfStatus, LfStatus> {
    if out.is_null() {
        return Err(fail(LfStatus::NullArgument, format!("{what} is null")));
    }
    *out = value;
    Ok(LfStatus::Ok)
}

fn config_from(text: Option<&str>) -> Result<RunConfig, LfStatus> {
    RunConfig::resolve(text, &[]).map_err(|e| fail_err(&e))
}

/// Comma-separated `chain:start-end` selections, e.g. `"H:95-102,L:24-34"`.
fn parse_selections(text: &str) -> Result<Vec<Selection>, LfStatus> {
    let mut sels = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        sels.push(part.parse::<Selection>().map_err(|e| fail_err(&e))?);
    }
    if sels.is_empty() {
        return Err(fail(LfStatus::Parse, "selections string names no regions"));
    }
    Ok(sels)
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread (empty string
/// if nothing failed yet).  Valid until the next failing call on the same
/// thread; do not free.
#[no_mangle]
pub extern "C" fn lf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses PDB text (ATOM/TER records, N/CA/C/O backbone) into a structure
/// handle.
///
/// # Safety
/// `pdb_text` must be a NUL-terminated string; `out` must be a valid
/// destination for the handle.
#[no_mangle]
pub unsafe extern "C" fn lf_structure_from_pdb(
    pdb_text: *const c_char,
    out: *mut *mut LfStructure,
) -> LfStatus {
    run(|| {
        let text = in_str(pdb_text, "pdb_text")?;
        let chains = parse_pdb_backbone(text).map_err(|e| fail_err(&e))?;
        put(out, LfStructure { chains }, "out")
    })
}

/// Renders a structure as PDB text.  The returned string is owned by the
/// caller; release it with [`lf_string_free`].
///
/// # Safety
/// `structure` must be a live handle; `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lf_structure_to_pdb(
    structure: *const LfStructure,
    out: *mut *mut c_char,
) -> LfStatus {
    run(|| {
        let s = ref_in(structure, "structure")?;
        let text = write_pdb_backbone(&s.chains);
        let c = CString::new(text)
            .map_err(|_| fail(LfStatus::Internal, "PDB text contained a NUL byte"))?;
        if out.is_null() {
            return Err(fail(LfStatus::NullArgument, "out is null"));
        }
        *out = c.into_raw();
        Ok(LfStatus::Ok)
    })
}

/// Number of residues across all chains of the structure.
///
/// # Safety
/// `structure` must be a live handle; `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lf_structure_residue_count(
    structure: *const LfStructure,
    out: *mut usize,
) -> LfStatus {
    run(|| {
        let s = ref_in(structure, "structure")?;
        if out.is_null() {
            return Err(fail(LfStatus::NullArgument, "out is null"));
        }
        *out = s.chains.iter().map(|c| c.len()).sum();
        Ok(LfStatus::Ok)
    })
}

/// Releases a structure handle.  Null is a no-op.
///
/// # Safety
/// `structure` must be null or a handle produced by this library that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn lf_structure_free(structure: *mut LfStructure) {
    if !structure.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(structure))));
    }
}

/// Releases a string returned by this library.  Null is a no-op.
///
/// # Safety
/// `s` must be null or a string produced by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn lf_string_free(s: *mut c_char) {
    if !s.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(CString::from_raw(s))));
    }
}

/// Initializes fresh model parameters.  `config` selects `seed`, `hidden`
/// and `head_hidden` (null for defaults).
///
/// # Safety
/// `config` must be null or NUL-terminated; `out` must be a valid
/// destination for the handle.
#[no_mangle]
pub unsafe extern "C" fn lf_model_init(
    config: *const c_char,
    out: *mut *mut LfModel,
) -> LfStatus {
    run(|| {
        let cfg = config_from(opt_str(config, "config")?)?;
        let params = init_params(cfg.seed, cfg.model_dims());
        put(out, LfModel { params }, "out")
    })
}

/// Loads model parameters from a checkpoint file written by the CLI
/// `train` command (or by another binding).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid
/// destination for the handle.
#[no_mangle]
pub unsafe extern "C" fn lf_model_load(
    path: *const c_char,
    out: *mut *mut LfModel,
) -> LfStatus {
    run(|| {
        let path = in_str(path, "path")?;
        let params = load_checkpoint(Path::new(path)).map_err(|e| fail_err(&e))?;
        put(out, LfModel { params }, "out")
    })
}

/// Writes model parameters to a checkpoint file readable by
/// [`lf_model_load`] and the CLI.
///
/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lf_model_save(
    model: *const LfModel,
    path: *const c_char,
) -> LfStatus {
    run(|| {
        let m = ref_in(model, "model")?;
        let path = in_str(path, "path")?;
        save_checkpoint(Path::new(path), &m.params).map_err(|e| fail_err(&e))?;
        Ok(LfStatus::Ok)
    })
}

/// Releases a model handle.  Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle produced by this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn lf_model_free(model: *mut LfModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Refines the selected loop residues of `prior` with the model and
/// energy-guided flow sampler; context residues are untouched.
/// `selections` is comma-separated `chain:start-end`; `config` carries the
/// sampler tunables (`steps`, `beta`, `zeta`, ...; null for defaults).
///
/// # Safety
/// `model` and `prior` must be live handles, the strings NUL-terminated
/// (config nullable), and `out` a valid destination for the new handle.
#[no_mangle]
pub unsafe extern "C" fn lf_refine(
    model: *const LfModel,
    prior: *const LfStructure,
    selections: *const c_char,
    config: *const c_char,
    out: *mut *mut LfStructure,
) -> LfStatus {
    run(|| {
        let m = ref_in(model, "model")?;
        let p = ref_in(prior, "prior")?;
        let sels = parse_selections(in_str(selections, "selections")?)?;
        let cfg = config_from(opt_str(config, "config")?)?;
        let problem = RefinementProblem::new(p.chains.clone(), None, sels)
            .map_err(|e| fail_err(&e))?;
        let energy = cfg.energy_params();
        let sampler_cfg = cfg.sampler_config();
        let (refined, _trace) = if cfg.zeta > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            refine_sde(&problem, &m.params, &energy, &sampler_cfg, &mut rng)
        } else {
            refine(&problem, &m.params, &energy, &sampler_cfg)
        }
        .map_err(|e| fail_err(&e))?;
        put(out, LfStructure { chains: refined }, "out")
    })
}

/// Backbone RMSD (N, CA, C, O; no superposition) between two structures
/// over the selected residues.
///
/// # Safety
/// `a` and `b` must be live handles, `selections` NUL-terminated, and
/// `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lf_rmsd(
    a: *const LfStructure,
    b: *const LfStructure,
    selections: *const c_char,
    out: *mut f64,
) -> LfStatus {
    run(|| {
        let a = ref_in(a, "a")?;
        let b = ref_in(b, "b")?;
        let sels = parse_selections(in_str(selections, "selections")?)?;
        let value = rmsd_backbone(&a.chains, &b.chains, &sels).map_err(|e| fail_err(&e))?;
        put_f64(out, value, "out")
    })
}

/// Perturbs the selected residues of `target` into a synthetic prior
/// (Gaussian position noise, tangent-Gaussian rotation noise).  `config`
/// selects `sigma_x`, `sigma_r` and `seed` (null for defaults).
///
/// # Safety
/// `target` must be a live handle, the strings NUL-terminated (config
/// nullable), and `out` a valid destination for the new handle.
#[no_mangle]
pub unsafe extern "C" fn lf_synth_prior(
    target: *const LfStructure,
    selections: *const c_char,
    config: *const c_char,
    out: *mut *mut LfStructure,
) -> LfStatus {
    run(|| {
        let t = ref_in(target, "target")?;
        let sels = parse_selections(in_str(selections, "selections")?)?;
        let cfg = config_from(opt_str(config, "config")?)?;
        let noise = NoiseSpec {
            sigma_x: cfg.sigma_x,
            sigma_r: cfg.sigma_r,
            seed: cfg.seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let chains = synth_prior(&t.chains, &sels, &noise, &mut rng).map_err(|e| fail_err(&e))?;
        put(out, LfStructure { chains }, "out")
    })
}

/// Total guidance energy of the structure restricted to the selected
/// residues (harmonic backbone-geometry terms).  `config` selects the
/// term weights `omega` (null for defaults).
///
/// # Safety
/// `structure` must be a live handle, the strings NUL-terminated (config
/// nullable), and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn lf_guidance_energy(
    structure: *const LfStructure,
    selections: *const c_char,
    config: *const c_char,
    out: *mut f64,
) -> LfStatus {
    run(|| {
        let s = ref_in(structure, "structure")?;
        let sels = parse_selections(in_str(selections, "selections")?)?;
        let cfg = config_from(opt_str(config, "config")?)?;
        let params = cfg.energy_params();
        let per_chain = resolve_selections(&s.chains, &sels).map_err(|e| fail_err(&e))?;
        let mut total = 0.0;
        for (chain, idx) in s.chains.iter().zip(&per_chain) {
            if idx.is_empty() {
                continue;
            }
            let (e, _grad) = total_guidance_energy(chain, idx, &params).map_err(|e| fail_err(&e))?;
            total += e;
        }
        put_f64(out, total, "out")
    })
}
