//! C interface to `pvc-core`.
//!
//! Objects cross the boundary as opaque handles created by a `pvc_*_new`,
//! `pvc_*_load` or computing function and released with the matching
//! `pvc_*_free`. Every fallible function returns a [`PvcStatus`]; on failure
//! the message is available from [`pvc_last_error`] on the same thread until
//! the next failing call. Output handles are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use pvc_core::alignment::{parse_alignment, to_frames};
use pvc_core::config::RunConfig;
use pvc_core::features::{mel_spectrogram, resample, FeatureConfig, FeatureKind, FrameMatrix, Waveform};
use pvc_core::model::{Checkpoint, ProsodyMode};
use pvc_core::pipeline::Pipeline;
use pvc_core::prosody::{rdpf, RdpfMode};
use pvc_core::quantizer::{ProductCodebook, NUM_GROUPS};
use pvc_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of range or inconsistent with another.
    InvalidArgument = 2,
    /// A file could not be read or written.
    Io = 3,
    /// A file or buffer is malformed.
    Format = 4,
    /// A required input (alignment, artifact) is missing.
    MissingInput = 5,
    /// A configuration value is invalid.
    Config = 6,
    /// A computation produced an invalid result.
    Numeric = 7,
    /// A panic was caught at the boundary.
    Internal = 8,
}

/// Prosody handling of a conversion.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvcMode {
    None = 0,
    Base = 1,
    Rdpf = 2,
    Adpf = 3,
}

impl From<PvcMode> for ProsodyMode {
    fn from(m: PvcMode) -> Self {
        match m {
            PvcMode::None => ProsodyMode::None,
            PvcMode::Base => ProsodyMode::Base,
            PvcMode::Rdpf => ProsodyMode::Rdpf,
            PvcMode::Adpf => ProsodyMode::Adpf,
        }
    }
}

/// Time-major matrix of per-frame features.
pub struct PvcMatrix(FrameMatrix);

/// Mono waveform.
pub struct PvcWaveform(Waveform);

/// Trained product codebook.
pub struct PvcCodebook(ProductCodebook);

/// Everything needed to convert a waveform.
pub struct PvcConverter(Pipeline);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PvcStatus {
    match e {
        Error::Io { .. } | Error::Wav { .. } => PvcStatus::Io,
        Error::Format(_) | Error::Parse { .. } => PvcStatus::Format,
        Error::MissingInput(_) => PvcStatus::MissingInput,
        Error::Config(_) => PvcStatus::Config,
        Error::NonFiniteLoss { .. } | Error::Validation(_) => PvcStatus::Numeric,
        Error::EmptyInput(_) | Error::Contract(_) | Error::InsufficientData { .. } => PvcStatus::InvalidArgument,
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

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, converting errors and panics into a status and the
/// thread's last error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> PvcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PvcStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(&format!("{name} is null"));
            PvcStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(&msg);
            PvcStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PvcStatus::Internal
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> FfiResult<&'a T> {
    // SAFETY: callers pass either null or a pointer from this library.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn path(p: *const c_char, name: &'static str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    // SAFETY: `out` is non-null and writable by contract.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this library and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message of the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pvc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pvc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `len` samples in [-1, 1] at `sample_rate` Hz into a new waveform.
#[no_mangle]
pub extern "C" fn pvc_waveform_new(samples: *const f64, len: usize, sample_rate: u32, out: *mut *mut PvcWaveform) -> PvcStatus {
    guard(|| {
        let w = Waveform::new(slice(samples, len, "samples")?.to_vec(), sample_rate)?;
        put(out, PvcWaveform(w))
    })
}

#[no_mangle]
pub extern "C" fn pvc_waveform_len(w: *const PvcWaveform) -> usize {
    non_null(w, "waveform").map_or(0, |w| w.0.len())
}

#[no_mangle]
pub extern "C" fn pvc_waveform_sample_rate(w: *const PvcWaveform) -> u32 {
    non_null(w, "waveform").map_or(0, |w| w.0.sample_rate())
}

/// Copies the samples into `buf`, which must hold `pvc_waveform_len` values.
#[no_mangle]
pub extern "C" fn pvc_waveform_copy(w: *const PvcWaveform, buf: *mut f64, capacity: usize) -> PvcStatus {
    guard(|| {
        let w = non_null(w, "waveform")?;
        copy_out(w.0.samples(), buf, capacity)
    })
}

#[no_mangle]
pub extern "C" fn pvc_waveform_free(w: *mut PvcWaveform) {
    free(w)
}

fn copy_out(src: &[f64], buf: *mut f64, capacity: usize) -> FfiResult<()> {
    if capacity < src.len() {
        return Err(Failure::Invalid(format!("buffer holds {capacity} values, need {}", src.len())));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Failure::Null("buf"));
    }
    // SAFETY: `buf` holds at least `src.len()` values.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Log-mel spectrogram with the default analysis settings (24 kHz, 80 bins,
/// 50 ms window, 10 ms hop). The input is resampled when needed.
#[no_mangle]
pub extern "C" fn pvc_mel_spectrogram(w: *const PvcWaveform, out: *mut *mut PvcMatrix) -> PvcStatus {
    guard(|| {
        let w = non_null(w, "waveform")?;
        let cfg = FeatureConfig::default();
        let wave = resample(&w.0, cfg.sample_rate);
        put(out, PvcMatrix(mel_spectrogram(&wave, &cfg)?))
    })
}

/// Copies a row-major `rows x cols` prosody matrix with the given hop.
#[no_mangle]
pub extern "C" fn pvc_prosody_new(data: *const f64, rows: usize, cols: usize, hop_seconds: f64, out: *mut *mut PvcMatrix) -> PvcStatus {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| Failure::Invalid("rows * cols overflows".into()))?;
        let values = slice(data, n, "data")?.to_vec();
        let a = Array2::from_shape_vec((rows, cols), values).map_err(|e| Failure::Invalid(e.to_string()))?;
        put(out, PvcMatrix(FrameMatrix::new(a, hop_seconds, FeatureKind::Prosody)?))
    })
}

#[no_mangle]
pub extern "C" fn pvc_matrix_rows(m: *const PvcMatrix) -> usize {
    non_null(m, "matrix").map_or(0, |m| m.0.num_frames())
}

#[no_mangle]
pub extern "C" fn pvc_matrix_cols(m: *const PvcMatrix) -> usize {
    non_null(m, "matrix").map_or(0, |m| m.0.dim())
}

/// Copies the matrix row-major into `buf`, which must hold rows * cols values.
#[no_mangle]
pub extern "C" fn pvc_matrix_copy(m: *const PvcMatrix, buf: *mut f64, capacity: usize) -> PvcStatus {
    guard(|| {
        let m = non_null(m, "matrix")?;
        let values: Vec<f64> = m.0.data().iter().copied().collect();
        copy_out(&values, buf, capacity)
    })
}

#[no_mangle]
pub extern "C" fn pvc_matrix_free(m: *mut PvcMatrix) {
    free(m)
}

/// Reads a codebook file written by `pvc train-codebook`.
#[no_mangle]
pub extern "C" fn pvc_codebook_load(file: *const c_char, out: *mut *mut PvcCodebook) -> PvcStatus {
    guard(|| put(out, PvcCodebook(ProductCodebook::load(path(file, "path")?)?)))
}

/// Nearest-centroid indices of every mel frame, two per frame
/// (frame-major). `indices` must hold 2 * frames values.
#[no_mangle]
pub extern "C" fn pvc_codebook_quantize(cb: *const PvcCodebook, mel: *const PvcMatrix, indices: *mut u32, capacity: usize) -> PvcStatus {
    guard(|| {
        let cb = non_null(cb, "codebook")?;
        let mel = non_null(mel, "mel")?;
        let seq = cb.0.quantize(&mel.0)?;
        let n = seq.len() * NUM_GROUPS;
        if capacity < n {
            return Err(Failure::Invalid(format!("buffer holds {capacity} indices, need {n}")));
        }
        if indices.is_null() {
            return Err(Failure::Null("indices"));
        }
        // SAFETY: `indices` holds at least `n` values.
        let dst = unsafe { std::slice::from_raw_parts_mut(indices, n) };
        for (d, s) in dst.iter_mut().zip(seq.indices().iter().flatten()) {
            *d = *s as u32;
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pvc_codebook_free(cb: *mut PvcCodebook) {
    free(cb)
}

/// Fixed-rate filter with deterministic selection: each block of `tau`
/// frames repeats its last frame.
#[no_mangle]
pub extern "C" fn pvc_rdpf(prosody: *const PvcMatrix, tau: usize, out: *mut *mut PvcMatrix) -> PvcStatus {
    guard(|| {
        let p = non_null(prosody, "prosody")?;
        p.0.expect_kind(FeatureKind::Prosody)?;
        let f = rdpf(&p.0, tau, RdpfMode::Deterministic, 0)?;
        put(out, PvcMatrix(f.into_matrix()))
    })
}

/// Loads a converter from a `pvc` work directory (projection, codebook and
/// checkpoint). `config` is the run configuration used to build it, or null
/// for the defaults.
#[no_mangle]
pub extern "C" fn pvc_converter_load(work_dir: *const c_char, config: *const c_char, out: *mut *mut PvcConverter) -> PvcStatus {
    guard(|| {
        let dir = path(work_dir, "work_dir")?;
        let cfg = if config.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(path(config, "config")?)?
        };
        let pipeline = Pipeline {
            features: cfg.features,
            projection: pvc_core::features::ContentProjection::load(&dir.join("projection.json"))?,
            codebook: ProductCodebook::load(dir.join("codebook.pvcb"))?,
            checkpoint: Checkpoint::load(dir.join("checkpoint.pvck"))?,
            vocoder: cfg.vocoder,
        };
        put(out, PvcConverter(pipeline))
    })
}

/// Number of speakers the converter was trained on.
#[no_mangle]
pub extern "C" fn pvc_converter_num_speakers(c: *const PvcConverter) -> usize {
    non_null(c, "converter").map_or(0, |c| c.0.checkpoint.model.config.num_speakers)
}

/// Converts `source` to speaker `target` and reconstructs a waveform.
/// `alignment` is a phone alignment file (TSV or TextGrid), required in
/// adpf mode and otherwise may be null. `mode` must be the mode the
/// checkpoint was trained in.
#[no_mangle]
pub extern "C" fn pvc_convert(
    c: *const PvcConverter,
    source: *const PvcWaveform,
    alignment: *const c_char,
    target: usize,
    mode: PvcMode,
    out: *mut *mut PvcWaveform,
) -> PvcStatus {
    guard(|| {
        let c = &non_null(c, "converter")?.0;
        let source = non_null(source, "source")?;
        let wave = resample(&source.0, c.features.sample_rate);
        let mode = ProsodyMode::from(mode);
        let speakers = c.checkpoint.model.config.num_speakers;
        if target >= speakers {
            return Err(Failure::Invalid(format!("target {target} out of range for {speakers} speakers")));
        }
        let map = if alignment.is_null() {
            if mode == ProsodyMode::Adpf {
                return Err(Error::MissingInput("adpf mode needs a phone alignment".into()).into());
            }
            None
        } else {
            let raw = parse_alignment(path(alignment, "alignment")?)?;
            let frames = c.features.num_frames(wave.len());
            Some(to_frames(&raw, frames, c.features.hop_seconds())?.1)
        };
        let conv = c.convert_waveform(&wave, map.as_ref(), target, mode)?;
        let w = conv.waveform.expect("convert_waveform reconstructs audio");
        put(out, PvcWaveform(w))
    })
}

#[no_mangle]
pub extern "C" fn pvc_converter_free(c: *mut PvcConverter) {
    free(c)
}
