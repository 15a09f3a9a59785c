//! C ABI over the `agesim` library.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`AgesimStatus`]; results come back
//!   through out-pointers, which are written only on success.
//! * On failure a message is stored per thread and can be read with
//!   [`agesim_last_error`].
//! * Handles ([`AgesimConfig`], [`AgesimResult`], [`AgesimEncoder`]) are
//!   opaque; each has a matching `_free` function that accepts NULL.
//! * Strings returned as `char *` are owned by the caller and released with
//!   [`agesim_string_free`].
//! * Panics never cross the boundary; they surface as `AGESIM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use agesim::encoders::{decode_in_place, BalanceClock, Control, Encoder, EncodingPolicy, TrbgParams};
use agesim::probmodel::{ln_p_at_least_n, p_duty_deviation};
use agesim::report;
use agesim::sim::{self, RunConfig, RunResult};
use agesim::word::Word;
use agesim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgesimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Overflow = 5,
    BufferTooSmall = 6,
    Utf8 = 7,
    Panic = 8,
    Other = 9,
}

impl From<&Error> for AgesimStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => AgesimStatus::Io,
            Error::Config(_) | Error::Manifest { .. } | Error::UnknownLayerKind(_) => AgesimStatus::Config,
            Error::CounterOverflow(_) => AgesimStatus::Overflow,
            Error::InvalidParam(_) | Error::ShapeMismatch { .. } | Error::Empty(_) | Error::RowOutOfRange { .. } => {
                AgesimStatus::InvalidArgument
            }
            _ => AgesimStatus::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(AgesimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(AgesimStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> AgesimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgesimStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AgesimStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err(Failure(AgesimStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AgesimStatus::Utf8, format!("{what} is not valid UTF-8")))
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(AgesimStatus::Other, "string contains NUL".into()))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn agesim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn agesim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn agesim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Probability that a cell written `k` times with '1'-probability `rho` ends
/// with a duty-cycle `≤ b/k` or `≥ 1 − b/k`.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn agesim_p_duty_deviation(k: u64, rho: f64, b: u64, out: *mut f64) -> AgesimStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = p_duty_deviation(k, rho, b)?;
        Ok(())
    })
}

/// Natural log of the probability that at least `n` of `cells` cells deviate.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn agesim_ln_p_at_least_n(
    k: u64,
    rho: f64,
    b: u64,
    cells: u64,
    n: u64,
    out: *mut f64,
) -> AgesimStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ln_p_at_least_n(k, rho, b, cells, n)?;
        Ok(())
    })
}

/// A parsed run configuration.
pub struct AgesimConfig {
    inner: RunConfig,
}

/// Parses TOML run-config text. Relative paths resolve against the current
/// working directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn agesim_config_from_toml(toml: *const c_char, out: *mut *mut AgesimConfig) -> AgesimStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = RunConfig::from_toml_str(str_arg(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(AgesimConfig { inner }));
        Ok(())
    })
}

/// Reads a run-config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn agesim_config_load(path: *const c_char, out: *mut *mut AgesimConfig) -> AgesimStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = RunConfig::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AgesimConfig { inner }));
        Ok(())
    })
}

/// Overrides the run seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn agesim_config_set_seed(config: *mut AgesimConfig, seed: u64) -> AgesimStatus {
    guard(|| {
        non_null(config, "config")?;
        (*config).inner.seed = seed;
        Ok(())
    })
}

/// Overrides the inference count.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn agesim_config_set_inferences(config: *mut AgesimConfig, inferences: u32) -> AgesimStatus {
    guard(|| {
        non_null(config, "config")?;
        (*config).inner.inferences = inferences;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agesim_config_free(config: *mut AgesimConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Outcome of one simulation run.
pub struct AgesimResult {
    inner: RunResult,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AgesimSummary {
    pub cells: u64,
    pub rows: u64,
    pub word_bits: u64,
    pub k_inf: u64,
    /// Writes (dwell units) per cell.
    pub total_k: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub mean_abs_dev: f64,
    pub frac_within_0_05: f64,
    pub pct_best_bin: f64,
    pub pct_worst_bin: f64,
    pub padding_fraction: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AgesimBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub pct: f64,
}

/// Runs a simulation.
///
/// # Safety
/// `config` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn agesim_run(config: *const AgesimConfig, out: *mut *mut AgesimResult) -> AgesimStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        let inner = sim::run(&(*config).inner)?;
        *out = Box::into_raw(Box::new(AgesimResult { inner }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn agesim_result_summary(result: *const AgesimResult, out: *mut AgesimSummary) -> AgesimStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        let r = &(*result).inner;
        *out = AgesimSummary {
            cells: r.cells,
            rows: r.rows as u64,
            word_bits: r.word_bits as u64,
            k_inf: r.k_inf as u64,
            total_k: r.total_k,
            mean: r.summary.mean,
            min: r.summary.min,
            max: r.summary.max,
            mean_abs_dev: r.summary.mean_abs_dev,
            frac_within_0_05: r.summary.frac_within_0_05,
            pct_best_bin: r.histogram.best_bin_pct(),
            pct_worst_bin: r.histogram.worst_bin_pct(),
            padding_fraction: r.padding_fraction,
        };
        Ok(())
    })
}

/// Copies the histogram into `bins`. `*len` receives the bin count; when
/// `capacity` is too small nothing is copied and `AGESIM_STATUS_BUFFER_TOO_SMALL`
/// is returned. `bins` may be NULL when `capacity` is 0.
///
/// # Safety
/// `bins` must hold `capacity` elements; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn agesim_result_histogram(
    result: *const AgesimResult,
    bins: *mut AgesimBin,
    capacity: usize,
    len: *mut usize,
) -> AgesimStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(len, "len")?;
        let h = &(*result).inner.histogram.bins;
        *len = h.len();
        if capacity < h.len() {
            return Err(Failure(AgesimStatus::BufferTooSmall, format!("need {} bins", h.len())));
        }
        non_null(bins, "bins")?;
        for (i, b) in h.iter().enumerate() {
            *bins.add(i) = AgesimBin { lo: b.lo, hi: b.hi, count: b.count, pct: b.pct };
        }
        Ok(())
    })
}

/// Copies the per-cell counters as `(ones, total)` pairs, row-major, into
/// `pairs` (`2 · cells` values). Sizing works as for the histogram, with
/// `*len` counted in `u32` values.
///
/// # Safety
/// `pairs` must hold `capacity` values; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn agesim_result_duty_map(
    result: *const AgesimResult,
    pairs: *mut u32,
    capacity: usize,
    len: *mut usize,
) -> AgesimStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(len, "len")?;
        let map = &(*result).inner.duty_map;
        *len = map.cells() * 2;
        if capacity < *len {
            return Err(Failure(AgesimStatus::BufferTooSmall, format!("need {} values", *len)));
        }
        non_null(pairs, "pairs")?;
        for (i, (o, t)) in map.pairs().enumerate() {
            *pairs.add(2 * i) = o;
            *pairs.add(2 * i + 1) = t;
        }
        Ok(())
    })
}

/// The run result as JSON; free with [`agesim_string_free`].
///
/// # Safety
/// `result` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn agesim_result_to_json(result: *const AgesimResult, out: *mut *mut c_char) -> AgesimStatus {
    guard(|| {
        non_null(result, "result")?;
        non_null(out, "out")?;
        *out = into_c_string(report::to_json(&(*result).inner))?;
        Ok(())
    })
}

/// Writes the report files of a run into `dir`.
///
/// # Safety
/// `result` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn agesim_result_emit(result: *const AgesimResult, dir: *const c_char) -> AgesimStatus {
    guard(|| {
        non_null(result, "result")?;
        report::emit_run(&(*result).inner, Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agesim_result_free(result: *mut AgesimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

pub const AGESIM_POLICY_NONE: u32 = 0;
pub const AGESIM_POLICY_INVERSION: u32 = 1;
pub const AGESIM_POLICY_BARREL: u32 = 2;
pub const AGESIM_POLICY_TRBG: u32 = 3;

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AgesimPolicy {
    /// One of the `AGESIM_POLICY_*` constants.
    pub kind: u32,
    /// Barrel only.
    pub max_shift: u32,
    /// TRBG only: probability that the raw generator emits '1'.
    pub bias: f64,
    /// TRBG only: balancing counter width.
    pub m: u32,
    pub balancing: bool,
    /// TRBG only: advance the balancing counter per word instead of per
    /// `agesim_encoder_end_block`.
    pub per_word_balance: bool,
    pub seed: u64,
}

impl AgesimPolicy {
    fn to_policy(self) -> FfiResult<EncodingPolicy> {
        Ok(match self.kind {
            AGESIM_POLICY_NONE => EncodingPolicy::None,
            AGESIM_POLICY_INVERSION => EncodingPolicy::Inversion,
            AGESIM_POLICY_BARREL => EncodingPolicy::Barrel { max_shift: self.max_shift },
            AGESIM_POLICY_TRBG => EncodingPolicy::Trbg(TrbgParams {
                bias: self.bias,
                m: self.m,
                balancing: self.balancing,
                seed: self.seed,
                clock: if self.per_word_balance { BalanceClock::Emission } else { BalanceClock::Block },
            }),
            k => return Err(Failure(AgesimStatus::InvalidArgument, format!("unknown policy kind {k}"))),
        })
    }
}

/// Per-write metadata. `kind` 0 = none, 1 = invert flag in `value`,
/// 2 = left-rotation amount in `value`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgesimControl {
    pub kind: u32,
    pub value: u32,
}

impl From<Control> for AgesimControl {
    fn from(c: Control) -> Self {
        match c {
            Control::None => AgesimControl { kind: 0, value: 0 },
            Control::Invert(e) => AgesimControl { kind: 1, value: e as u32 },
            Control::Shift(s) => AgesimControl { kind: 2, value: s },
        }
    }
}

fn control_from(c: AgesimControl) -> FfiResult<Control> {
    match (c.kind, c.value) {
        (0, _) => Ok(Control::None),
        (1, v) => Ok(Control::Invert(v != 0)),
        (2, s) => Ok(Control::Shift(s)),
        (k, _) => Err(Failure(AgesimStatus::InvalidArgument, format!("unknown control kind {k}"))),
    }
}

/// A stateful write-data encoder.
pub struct AgesimEncoder {
    inner: Encoder,
    width: usize,
}

/// Creates an encoder for a memory of `rows` words of `width` bits.
///
/// # Safety
/// `policy` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn agesim_encoder_new(
    policy: *const AgesimPolicy,
    width: usize,
    rows: usize,
    out: *mut *mut AgesimEncoder,
) -> AgesimStatus {
    guard(|| {
        non_null(policy, "policy")?;
        non_null(out, "out")?;
        if width == 0 || rows == 0 {
            return Err(Failure(AgesimStatus::InvalidArgument, "width and rows must be positive".into()));
        }
        let inner = Encoder::new((*policy).to_policy()?, width, rows)?;
        *out = Box::into_raw(Box::new(AgesimEncoder { inner, width }));
        Ok(())
    })
}

fn limbs_for(width: usize, limbs: usize) -> FfiResult<()> {
    if limbs != width.div_ceil(64) {
        return Err(Failure(
            AgesimStatus::InvalidArgument,
            format!("a {width}-bit word needs {} limbs, got {limbs}", width.div_ceil(64)),
        ));
    }
    Ok(())
}

/// Encodes one word (`limbs` little-endian 64-bit limbs) written to `row`.
/// Bits above the word width are ignored. `input` and `output` may alias.
///
/// # Safety
/// `input` and `output` must hold `limbs` values; `control` must be valid.
#[no_mangle]
pub unsafe extern "C" fn agesim_encoder_encode(
    encoder: *mut AgesimEncoder,
    input: *const u64,
    limbs: usize,
    row: usize,
    output: *mut u64,
    control: *mut AgesimControl,
) -> AgesimStatus {
    guard(|| {
        non_null(encoder, "encoder")?;
        non_null(input, "input")?;
        non_null(output, "output")?;
        non_null(control, "control")?;
        let enc = &mut *encoder;
        limbs_for(enc.width, limbs)?;
        let mut word = Word::from_limbs(enc.width, std::slice::from_raw_parts(input, limbs).to_vec());
        let c = enc.inner.encode_in_place(word.limbs_mut(), row)?;
        ptr::copy_nonoverlapping(word.limbs().as_ptr(), output, limbs);
        *control = c.into();
        Ok(())
    })
}

/// Marks the end of a block write (advances the TRBG balancing counter).
///
/// # Safety
/// `encoder` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn agesim_encoder_end_block(encoder: *mut AgesimEncoder) -> AgesimStatus {
    guard(|| {
        non_null(encoder, "encoder")?;
        (*encoder).inner.end_block();
        Ok(())
    })
}

/// # Safety
/// `encoder` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn agesim_encoder_free(encoder: *mut AgesimEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Inverts an encoding given the metadata the encoder produced.
///
/// # Safety
/// `input` and `output` must hold `limbs` values.
#[no_mangle]
pub unsafe extern "C" fn agesim_decode(
    input: *const u64,
    limbs: usize,
    width: usize,
    control: AgesimControl,
    output: *mut u64,
) -> AgesimStatus {
    guard(|| {
        non_null(input, "input")?;
        non_null(output, "output")?;
        if width == 0 {
            return Err(Failure(AgesimStatus::InvalidArgument, "width must be positive".into()));
        }
        limbs_for(width, limbs)?;
        let c = control_from(control)?;
        let mut word = Word::from_limbs(width, std::slice::from_raw_parts(input, limbs).to_vec());
        decode_in_place(word.limbs_mut(), width, c);
        ptr::copy_nonoverlapping(word.limbs().as_ptr(), output, limbs);
        Ok(())
    })
}
