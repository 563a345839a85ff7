//! C ABI over the cmdt toolkit.
//!
//! Every function returns a [`CmdtStatus`]; on failure the message is kept
//! per thread and can be fetched with [`cmdt_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cmdt::datakit::read_checkpoint;
use cmdt::denoiser::DenoiserParams;
use cmdt::diffusion::NoiseSchedule;
use cmdt::metrics::{ahd, kabsch_umeyama, lmd, LandmarkSequence};
use cmdt::motion::{AudioFeatureSequence, ComponentTag};
use cmdt::sampler::{generate_long, SamplerConfig, SamplerMode};
use cmdt::tensor::Mat;
use cmdt::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdtSamplerMode {
    Ancestral = 0,
    Ddim = 1,
}

/// Noise schedule handle.
pub struct CmdtSchedule {
    inner: NoiseSchedule,
}

/// Trained component denoiser handle.
pub struct CmdtModel {
    inner: DenoiserParams,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CmdtStatus {
    match e {
        Error::Shape(_) => CmdtStatus::Shape,
        Error::InvalidArgument(_) => CmdtStatus::InvalidArgument,
        Error::BadMagic { .. } | Error::Truncated(_) | Error::Malformed(_) => CmdtStatus::Format,
        Error::NonFinite(_) | Error::Degenerate(_) => CmdtStatus::Numeric,
        Error::Io(_) => CmdtStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CmdtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CmdtStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CmdtStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CmdtStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn as_pairs(flat: &[f64]) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cmdt_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// NUL-terminated toolkit version; static storage.
#[no_mangle]
pub extern "C" fn cmdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Linear beta schedule with `steps` entries.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cmdt_schedule_new(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut CmdtSchedule,
) -> CmdtStatus {
    guard(|| {
        let slot = output(out, "out")?;
        let inner = NoiseSchedule::linear(steps, beta_start, beta_end)?;
        *slot = Box::into_raw(Box::new(CmdtSchedule { inner }));
        Ok(())
    })
}

/// # Safety
/// `sched` must be null or a handle from [`cmdt_schedule_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cmdt_schedule_free(sched: *mut CmdtSchedule) {
    if !sched.is_null() {
        drop(Box::from_raw(sched));
    }
}

/// `ᾱ_t` for `t` in `0..=T`.
///
/// # Safety
/// `sched` must be a live schedule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cmdt_schedule_alpha_bar(sched: *const CmdtSchedule, t: usize, out: *mut f64) -> CmdtStatus {
    guard(|| {
        let s = &non_null(sched, "sched")?.inner;
        let slot = output(out, "out")?;
        if t > s.steps() {
            return Err(Error::InvalidArgument(format!("t = {t} exceeds T = {}", s.steps())).into());
        }
        *slot = s.alpha_bar(t);
        Ok(())
    })
}

/// # Safety
/// `sched` must be a live schedule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cmdt_schedule_steps(sched: *const CmdtSchedule, out: *mut usize) -> CmdtStatus {
    guard(|| {
        *output(out, "out")? = non_null(sched, "sched")?.inner.steps();
        Ok(())
    })
}

/// Load a checkpoint from a NUL-terminated UTF-8 path.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn cmdt_model_load(path: *const c_char, out: *mut *mut CmdtModel) -> CmdtStatus {
    guard(|| {
        let slot = output(out, "out")?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        let inner = read_checkpoint(path)?;
        *slot = Box::into_raw(Box::new(CmdtModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`cmdt_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cmdt_model_free(model: *mut CmdtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Motion width of the model (13 lips, 51 expression, 6 pose).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cmdt_model_motion_dim(model: *const CmdtModel, out: *mut usize) -> CmdtStatus {
    guard(|| {
        *output(out, "out")? = non_null(model, "model")?.inner.config().d_motion;
        Ok(())
    })
}

/// Recursive long-form generation. `audio` holds `n_frames × d_audio`
/// row-major features, `identity` the 70-d identity frame; `out` receives
/// `n_frames × 70` values.
///
/// # Safety
/// All handles must be live; buffers must hold the stated element counts.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cmdt_generate_long(
    lips: *const CmdtModel,
    expression: *const CmdtModel,
    pose: *const CmdtModel,
    sched: *const CmdtSchedule,
    audio: *const f64,
    n_frames: usize,
    d_audio: usize,
    fps: f64,
    identity: *const f64,
    mode: CmdtSamplerMode,
    ddim_steps: usize,
    chunk_len: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> CmdtStatus {
    guard(|| {
        let (l, e, p) = (non_null(lips, "lips")?, non_null(expression, "expression")?, non_null(pose, "pose")?);
        let s = &non_null(sched, "sched")?.inner;
        let full = ComponentTag::Full.dim();
        if out_len != n_frames * full {
            return Err(Error::Shape(format!("out_len {out_len} != {n_frames} x {full}")).into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let feats = Mat::from_vec(n_frames, d_audio, input(audio, n_frames * d_audio, "audio")?.to_vec())?;
        let audio = AudioFeatureSequence::new(feats, fps)?;
        let id = Mat::from_vec(1, full, input(identity, full, "identity")?.to_vec())?;
        let mode = match mode {
            CmdtSamplerMode::Ancestral => SamplerMode::Ancestral,
            CmdtSamplerMode::Ddim => SamplerMode::Ddim,
        };
        let cfg = SamplerConfig { mode, ddim_steps, chunk_len, seed };
        let seq = generate_long(&l.inner, &e.inner, &p.inner, &audio, &id, s, &cfg)?;
        slice::from_raw_parts_mut(out, out_len).copy_from_slice(seq.frames().as_slice());
        Ok(())
    })
}

/// Similarity transform mapping `src` onto `dst` (`k` points each, stored
/// as interleaved x, y). Writes scale, rotation angle, tx, ty to `out[0..4]`.
///
/// # Safety
/// `src` and `dst` must hold `2k` values and `out` must hold 4.
#[no_mangle]
pub unsafe extern "C" fn cmdt_kabsch_umeyama(src: *const f64, dst: *const f64, k: usize, out: *mut f64) -> CmdtStatus {
    guard(|| {
        let a = as_pairs(input(src, 2 * k, "src")?);
        let b = as_pairs(input(dst, 2 * k, "dst")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let t = kabsch_umeyama(&a, &b)?;
        let vals = [t.scale, t.angle(), t.translation[0], t.translation[1]];
        slice::from_raw_parts_mut(out, 4).copy_from_slice(&vals);
        Ok(())
    })
}

unsafe fn landmarks(p: *const f64, n: usize, k: usize, what: &'static str) -> Result<LandmarkSequence, Failure> {
    let data = input(p, n * k * 2, what)?.to_vec();
    Ok(LandmarkSequence::new(Mat::from_vec(n, 2 * k, data)?, k, 1.0)?)
}

/// Landmark distance over `n` frames of `k` points; `align` non-zero
/// aligns each frame first. Degenerate frames are dropped and counted.
///
/// # Safety
/// `gen` and `gt` must hold `n·k·2` values; outputs must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cmdt_lmd(
    gen: *const f64,
    gt: *const f64,
    n: usize,
    k: usize,
    align: i32,
    out_value: *mut f64,
    out_used: *mut usize,
    out_dropped: *mut usize,
) -> CmdtStatus {
    guard(|| {
        let g = landmarks(gen, n, k, "gen")?;
        let t = landmarks(gt, n, k, "gt")?;
        let (v, u, d) = (output(out_value, "out_value")?, output(out_used, "out_used")?, output(out_dropped, "out_dropped")?);
        let r = lmd(&g, &t, align != 0)?;
        (*v, *u, *d) = (r.value, r.frames_used, r.frames_dropped);
        Ok(())
    })
}

/// Average displacement of landmark `nose` from its first-frame position.
///
/// # Safety
/// `points` must hold `n·k·2` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmdt_ahd(points: *const f64, n: usize, k: usize, nose: usize, out: *mut f64) -> CmdtStatus {
    guard(|| {
        let seq = landmarks(points, n, k, "points")?;
        let slot = output(out, "out")?;
        *slot = ahd(&seq, nose)?;
        Ok(())
    })
}
