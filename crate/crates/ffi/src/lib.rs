//! C ABI over the `speechunits` core.
//!
//! Objects cross the boundary as opaque handles created by `su_*_new`,
//! `su_*_read` or compute functions and released with the matching
//! `su_*_free`. Every fallible function returns an [`SuStatus`]; on failure a
//! message is kept per thread and can be fetched with [`su_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use speechunits::audio_io::{read_features, FormatError, Waveform, CANONICAL_SAMPLE_RATE};
use speechunits::augment::mix_noise_at_snr;
use speechunits::kmeans::{read_codebook, write_codebook, KMeansError};
use speechunits::metrics::{accumulate_id_counts, cluster_purity, phone_purity};
use speechunits::segment::dedup_runs;
use speechunits::{
    dpdp_segment, kmeans_assign, kmeans_fit, Codebook, DpdpParams, FeatureMatrix, KMeansParams,
    UnitSequence,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Compute = 5,
    Panic = 6,
}

/// Frame-level feature matrix.
pub struct SuFeatures(FeatureMatrix);

/// k-means codebook.
pub struct SuCodebook(Codebook);

/// Unit sequence with per-unit run lengths.
pub struct SuUnits(UnitSequence);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(SuStatus, String);

impl From<FormatError> for Fail {
    fn from(e: FormatError) -> Self {
        let status = match e {
            FormatError::Io { .. } => SuStatus::Io,
            _ => SuStatus::Format,
        };
        Fail(status, e.to_string())
    }
}

impl From<KMeansError> for Fail {
    fn from(e: KMeansError) -> Self {
        match e {
            KMeansError::Format(f) => f.into(),
            other => Fail(SuStatus::Compute, other.to_string()),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SuStatus::InvalidArgument, msg.into())
}

fn compute(e: impl std::fmt::Display) -> Fail {
    Fail(SuStatus::Compute, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SuStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SuStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SuStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(SuStatus::NullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SuStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(SuStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(SuStatus::NullPointer, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn su_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn su_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_features_read(
    path: *const c_char,
    out: *mut *mut SuFeatures,
) -> SuStatus {
    guard(|| {
        let m = read_features(path_arg(path)?)?;
        put(out, SuFeatures(m))
    })
}

/// Copies `rows * cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_features_new(
    data: *const f32,
    rows: usize,
    cols: usize,
    frame_rate_hz: f32,
    out: *mut *mut SuFeatures,
) -> SuStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid("rows * cols overflows"))?;
        let values = slice(data, n, "data")?.to_vec();
        let m = FeatureMatrix::new(values, rows, cols, frame_rate_hz, 0)?;
        put(out, SuFeatures(m))
    })
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn su_features_rows(m: *const SuFeatures) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn su_features_cols(m: *const SuFeatures) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn su_features_free(m: *mut SuFeatures) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_codebook_read(
    path: *const c_char,
    out: *mut *mut SuCodebook,
) -> SuStatus {
    guard(|| {
        let cb = read_codebook(path_arg(path)?)?;
        put(out, SuCodebook(cb))
    })
}

/// # Safety
/// `cb` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn su_codebook_write(cb: *const SuCodebook, path: *const c_char) -> SuStatus {
    guard(|| {
        let cb = deref(cb, "codebook")?;
        write_codebook(&cb.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Fits a codebook on `n` matrices.
///
/// # Safety
/// `mats` must point to `n` live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_codebook_fit(
    mats: *const *const SuFeatures,
    n: usize,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
    out: *mut *mut SuCodebook,
) -> SuStatus {
    guard(|| {
        let handles = slice(mats, n, "matrices")?;
        let data: Vec<FeatureMatrix> = handles
            .iter()
            .map(|&h| deref(h, "matrix").map(|m| m.0.clone()))
            .collect::<Result<_, _>>()?;
        let params = KMeansParams {
            max_iters,
            tol,
            ..KMeansParams::new(k, seed)
        };
        let cb = kmeans_fit(&data, &params)?;
        put(out, SuCodebook(cb))
    })
}

/// # Safety
/// `cb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn su_codebook_k(cb: *const SuCodebook) -> usize {
    cb.as_ref().map_or(0, |c| c.0.k())
}

/// # Safety
/// `cb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn su_codebook_dim(cb: *const SuCodebook) -> usize {
    cb.as_ref().map_or(0, |c| c.0.dim())
}

/// # Safety
/// `cb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn su_codebook_free(cb: *mut SuCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// Nearest-centroid unit for every frame, one unit per frame.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_kmeans_assign(
    m: *const SuFeatures,
    cb: *const SuCodebook,
    out: *mut *mut SuUnits,
) -> SuStatus {
    guard(|| {
        let m = deref(m, "features")?;
        let cb = deref(cb, "codebook")?;
        let units = kmeans_assign(&m.0, &cb.0)?;
        put(
            out,
            SuUnits(UnitSequence::framewise(units, m.0.frame_rate_hz as f64)),
        )
    })
}

/// Duration-penalized segmentation, one unit per frame; pass the result to
/// [`su_units_dedup`] for segment-level runs.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_dpdp_segment(
    m: *const SuFeatures,
    cb: *const SuCodebook,
    lambda: f64,
    max_segment_frames: usize,
    out: *mut *mut SuUnits,
) -> SuStatus {
    guard(|| {
        let m = deref(m, "features")?;
        let cb = deref(cb, "codebook")?;
        let params = DpdpParams {
            lambda,
            max_segment_frames,
        };
        let seg = dpdp_segment(&m.0, &cb.0, &params).map_err(compute)?;
        put(out, SuUnits(seg.to_unit_sequence()))
    })
}

/// # Safety
/// `u` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn su_units_dedup(u: *const SuUnits, out: *mut *mut SuUnits) -> SuStatus {
    guard(|| {
        let u = deref(u, "units")?;
        put(out, SuUnits(dedup_runs(&u.0)))
    })
}

/// # Safety
/// `u` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn su_units_len(u: *const SuUnits) -> usize {
    u.as_ref().map_or(0, |u| u.0.len())
}

/// Unit id and run length at position `i`.
///
/// # Safety
/// `u` must be a live handle; `unit` and `duration` writable or null.
#[no_mangle]
pub unsafe extern "C" fn su_units_get(
    u: *const SuUnits,
    i: usize,
    unit: *mut u32,
    duration: *mut u32,
) -> SuStatus {
    guard(|| {
        let u = deref(u, "units")?;
        if i >= u.0.len() {
            return Err(invalid(format!(
                "index {i} out of range for {} units",
                u.0.len()
            )));
        }
        if !unit.is_null() {
            *unit = u.0.units[i];
        }
        if !duration.is_null() {
            *duration = u.0.durations[i];
        }
        Ok(())
    })
}

/// # Safety
/// `u` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn su_units_free(u: *mut SuUnits) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Phone and cluster purity of frame-level unit ids against frame-level
/// phone ids.
///
/// # Safety
/// `units` and `phones` must point to `n` values; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn su_purity(
    units: *const u32,
    phones: *const u32,
    n: usize,
    phone_purity_out: *mut f64,
    cluster_purity_out: *mut f64,
) -> SuStatus {
    guard(|| {
        let u = slice(units, n, "units")?;
        let p = slice(phones, n, "phones")?;
        let table = accumulate_id_counts(u, p).map_err(compute)?;
        let pp = phone_purity(&table).map_err(compute)?;
        let cp = cluster_purity(&table).map_err(compute)?;
        if !phone_purity_out.is_null() {
            *phone_purity_out = pp;
        }
        if !cluster_purity_out.is_null() {
            *cluster_purity_out = cp;
        }
        Ok(())
    })
}

/// Mixes `noise` into `signal` at the requested SNR, writing `signal_len`
/// samples to `out`. Output is hard-clipped to [-1, 1] when `clip` is
/// non-zero; the number of clipped samples goes to `clipped_out`.
///
/// # Safety
/// Buffers must hold the stated number of samples; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn su_mix_noise_at_snr(
    signal: *const f32,
    signal_len: usize,
    noise: *const f32,
    noise_len: usize,
    snr_db: f64,
    seed: u64,
    clip: i32,
    out: *mut f32,
    gain_out: *mut f64,
    clipped_out: *mut usize,
) -> SuStatus {
    guard(|| {
        let s = Waveform::new(
            slice(signal, signal_len, "signal")?.to_vec(),
            CANONICAL_SAMPLE_RATE,
        );
        let n = Waveform::new(
            slice(noise, noise_len, "noise")?.to_vec(),
            CANONICAL_SAMPLE_RATE,
        );
        if out.is_null() {
            return Err(Fail(SuStatus::NullPointer, "output buffer is null".into()));
        }
        let mix = mix_noise_at_snr(&s, &n, snr_db, seed, clip != 0).map_err(compute)?;
        std::slice::from_raw_parts_mut(out, signal_len).copy_from_slice(&mix.mixed.samples);
        if !gain_out.is_null() {
            *gain_out = mix.gain;
        }
        if !clipped_out.is_null() {
            *clipped_out = mix.clipped;
        }
        Ok(())
    })
}
