//! C ABI over the `beamclean` core.
//!
//! Conventions:
//!
//! * every fallible function returns a [`BcStatus`]; on failure a message is
//!   available from [`bc_last_error_message`] on the same thread;
//! * tables and priors are opaque handles created by `*_load` / `*_new`
//!   functions and released with the matching `*_free`;
//! * outputs go to caller-owned buffers whose length is passed explicitly;
//! * enumerations travel as `int32_t` using the `BC_*` constants.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use beamclean::decoder::{decode, DecodeConfig};
use beamclean::error::Error;
use beamclean::nn::nn_decode;
use beamclean::noise::{calibrate_scale, epsilon_from_scale, obfuscate_sequence, NoiseFamily, NoiseMechanismSpec, ObfuscatedSequence};
use beamclean::prior::{NgramPrior, PriorModel, UniformPrior};
use beamclean::surrogate::{EstimationMethod, ScaleMode, SurrogateParams};
use beamclean::table::{EmbeddingTable, Norm, RowMatrix, TokenSequence};

pub const BC_FAMILY_GAUSSIAN: i32 = 0;
pub const BC_FAMILY_LAPLACE: i32 = 1;

pub const BC_NORM_L1: i32 = 1;
pub const BC_NORM_L2: i32 = 2;

pub const BC_ESTIMATION_CLOSED_FORM: i32 = 0;
pub const BC_ESTIMATION_GRADIENT: i32 = 1;
pub const BC_ESTIMATION_FIXED: i32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    TokenOutOfRange = 4,
    Format = 5,
    Io = 6,
    Numerical = 7,
    Protocol = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque embedding table.
pub struct BcTable(EmbeddingTable);

/// Opaque next-token prior.
pub struct BcPrior(Box<dyn PriorModel>);

/// Decoder settings. Fill with [`bc_decode_options_default`] before editing.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BcDecodeOptions {
    pub beam_width: usize,
    /// Candidates per step; 0 means the whole vocabulary.
    pub candidate_pool: usize,
    pub prior_weight: f64,
    /// One of the `BC_ESTIMATION_*` constants.
    pub estimation: i32,
    /// One of the `BC_FAMILY_*` constants.
    pub family: i32,
    /// Non-zero for one scale per coordinate.
    pub diagonal: i32,
    /// Non-zero to estimate a mean offset.
    pub estimate_mu: i32,
    /// Starting isotropic scale; NaN to estimate it from the input.
    pub init_scale: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BcStatus {
    match e {
        Error::InvalidArgument(_) | Error::GapInfeasible { .. } => BcStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => BcStatus::DimensionMismatch,
        Error::TokenOutOfRange { .. } => BcStatus::TokenOutOfRange,
        Error::Format(_) | Error::Truncated(_) | Error::DuplicateToken(_) | Error::Json(_) | Error::Csv(_) => {
            BcStatus::Format
        }
        Error::Io(_) => BcStatus::Io,
        Error::Numerical(_) => BcStatus::Numerical,
        Error::Protocol(_) | Error::Timeout(_) => BcStatus::Protocol,
        Error::Aborted { source, .. } => status_of(source),
    }
}

enum Fail {
    Status(BcStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(BcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(BcStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> BcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BcStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_last_error(msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            BcStatus::Panic
        }
    }
}

fn family(code: i32) -> Result<NoiseFamily, Fail> {
    match code {
        BC_FAMILY_GAUSSIAN => Ok(NoiseFamily::Gaussian),
        BC_FAMILY_LAPLACE => Ok(NoiseFamily::Laplace),
        other => Err(invalid(format!("unknown noise family code {other}"))),
    }
}

fn norm(code: i32) -> Result<Norm, Fail> {
    match code {
        BC_NORM_L1 => Ok(Norm::L1),
        BC_NORM_L2 => Ok(Norm::L2),
        other => Err(invalid(format!("unknown norm code {other}"))),
    }
}

fn estimation(code: i32) -> Result<EstimationMethod, Fail> {
    match code {
        BC_ESTIMATION_CLOSED_FORM => Ok(EstimationMethod::ClosedForm),
        BC_ESTIMATION_GRADIENT => Ok(EstimationMethod::Gradient),
        BC_ESTIMATION_FIXED => Ok(EstimationMethod::Fixed),
        other => Err(invalid(format!("unknown estimation code {other}"))),
    }
}

fn opt_delta(delta: f64) -> Option<f64> {
    (!delta.is_nan()).then_some(delta)
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < needed {
        return Err(Fail::Status(
            BcStatus::BufferTooSmall,
            format!("{what} holds {len} elements, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn table_ref<'a>(t: *const BcTable) -> Result<&'a EmbeddingTable, Fail> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null("table"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads an `EMBT` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_table_load(path: *const c_char, out: *mut *mut BcTable) -> BcStatus {
    guard(|| {
        let table = EmbeddingTable::load(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(BcTable(table))), "out")
    })
}

/// Creates a synthetic table with standard-normal rows.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bc_table_generate(
    vocab_size: usize,
    dim: usize,
    seed: u64,
    min_gap: f64,
    out: *mut *mut BcTable,
) -> BcStatus {
    guard(|| {
        let table = EmbeddingTable::generate_synthetic(vocab_size, dim, seed, min_gap)?;
        write_out(out, Box::into_raw(Box::new(BcTable(table))), "out")
    })
}

/// Writes a table to an `EMBT` file.
///
/// # Safety
/// `table` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bc_table_save(table: *const BcTable, path: *const c_char) -> BcStatus {
    guard(|| Ok(table_ref(table)?.save(path_arg(path)?)?))
}

/// Releases a table; NULL is ignored.
///
/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bc_table_free(table: *mut BcTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Vocabulary size, or 0 for NULL.
///
/// # Safety
/// `table` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bc_table_vocab_size(table: *const BcTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.vocab_size())
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
/// `table` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bc_table_dim(table: *const BcTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.dim())
}

/// Largest pairwise row distance in the family's norm (l2 Gaussian, l1 Laplace).
///
/// # Safety
/// `table` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_table_sensitivity(table: *const BcTable, family_code: i32, out: *mut f64) -> BcStatus {
    guard(|| {
        let s = table_ref(table)?.sensitivity(family(family_code)?.sensitivity_norm());
        write_out(out, s, "out")
    })
}

/// Noise scale for a budget. Pass NaN as `delta` for the Laplace mechanism.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_calibrate_scale(
    family_code: i32,
    sensitivity: f64,
    epsilon: f64,
    delta: f64,
    out: *mut f64,
) -> BcStatus {
    guard(|| {
        let s = calibrate_scale(family(family_code)?, sensitivity, epsilon, opt_delta(delta))?;
        write_out(out, s, "out")
    })
}

/// Reported epsilon at a noise scale; NaN `delta` uses the default 1e-5.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_epsilon_from_scale(
    family_code: i32,
    sensitivity: f64,
    scale: f64,
    delta: f64,
    out: *mut f64,
) -> BcStatus {
    guard(|| {
        let e = epsilon_from_scale(family(family_code)?, sensitivity, scale, opt_delta(delta))?;
        write_out(out, e, "out")
    })
}

/// Embeds `ids` and adds noise; writes `len * dim` floats row-major to `out`.
///
/// # Safety
/// `ids` must hold `len` entries and `out` `out_len` entries.
#[no_mangle]
pub unsafe extern "C" fn bc_obfuscate(
    table: *const BcTable,
    ids: *const u32,
    len: usize,
    family_code: i32,
    scale: f64,
    seed: u64,
    out: *mut f32,
    out_len: usize,
) -> BcStatus {
    guard(|| {
        let table = table_ref(table)?;
        let ids = slice_arg(ids, len, "ids")?;
        let out = out_slice(out, out_len, len * table.dim(), "out")?;
        let spec = NoiseMechanismSpec::new(family(family_code)?, scale);
        let y = obfuscate_sequence(table, &TokenSequence(ids.to_vec()), &spec, seed)?;
        out.copy_from_slice(y.values.as_slice());
        Ok(())
    })
}

unsafe fn obfuscated_arg(table: &EmbeddingTable, y: *const f32, len: usize) -> Result<ObfuscatedSequence, Fail> {
    let values = slice_arg(y, len * table.dim(), "y")?;
    Ok(ObfuscatedSequence::new("", RowMatrix::new(len, table.dim(), values.to_vec())?)?)
}

/// Nearest-row decoding of `len` noisy rows (`len * dim` floats).
///
/// # Safety
/// `y` must hold `len * dim` floats and `out` `out_len` ids.
#[no_mangle]
pub unsafe extern "C" fn bc_nn_decode(
    table: *const BcTable,
    y: *const f32,
    len: usize,
    norm_code: i32,
    out: *mut u32,
    out_len: usize,
) -> BcStatus {
    guard(|| {
        let table = table_ref(table)?;
        let obf = obfuscated_arg(table, y, len)?;
        let out = out_slice(out, out_len, len, "out")?;
        out.copy_from_slice(nn_decode(table, &obf, norm(norm_code)?)?.ids());
        Ok(())
    })
}

/// Uniform prior over `vocab_size` tokens.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_prior_uniform(vocab_size: usize, out: *mut *mut BcPrior) -> BcStatus {
    guard(|| {
        let p = UniformPrior::new(vocab_size)?;
        write_out(out, Box::into_raw(Box::new(BcPrior(Box::new(p)))), "out")
    })
}

/// Loads an n-gram prior saved by `train-prior`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn bc_prior_ngram_load(path: *const c_char, out: *mut *mut BcPrior) -> BcStatus {
    guard(|| {
        let p = NgramPrior::load(path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(BcPrior(Box::new(p)))), "out")
    })
}

/// Releases a prior; NULL is ignored.
///
/// # Safety
/// `prior` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bc_prior_free(prior: *mut BcPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Vocabulary size, or 0 for NULL.
///
/// # Safety
/// `prior` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bc_prior_vocab_size(prior: *const BcPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.0.vocab_size())
}

/// Next-token log-probabilities after `context`; writes `V` doubles.
///
/// # Safety
/// `context` must hold `context_len` ids and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_prior_next_logprobs(
    prior: *const BcPrior,
    context: *const u32,
    context_len: usize,
    out: *mut f64,
    out_len: usize,
) -> BcStatus {
    guard(|| {
        let prior = prior.as_ref().ok_or_else(|| null("prior"))?;
        let ctx = slice_arg(context, context_len, "context")?;
        let out = out_slice(out, out_len, prior.0.vocab_size(), "out")?;
        out.copy_from_slice(&prior.0.next_token_logprobs(ctx)?);
        Ok(())
    })
}

/// Defaults: beam 20, whole vocabulary, weight 1, closed-form Gaussian
/// isotropic estimation, estimated starting scale.
///
/// # Safety
/// `options` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bc_decode_options_default(options: *mut BcDecodeOptions) -> BcStatus {
    guard(|| {
        write_out(
            options,
            BcDecodeOptions {
                beam_width: 20,
                candidate_pool: 0,
                prior_weight: 1.0,
                estimation: BC_ESTIMATION_CLOSED_FORM,
                family: BC_FAMILY_GAUSSIAN,
                diagonal: 0,
                estimate_mu: 0,
                init_scale: f64::NAN,
            },
            "options",
        )
    })
}

fn decode_config(o: &BcDecodeOptions, dim: usize) -> Result<DecodeConfig, Fail> {
    let family = family(o.family)?;
    Ok(DecodeConfig {
        beam_width: o.beam_width,
        candidate_pool: (o.candidate_pool > 0).then_some(o.candidate_pool),
        prior_weight: o.prior_weight,
        estimation: estimation(o.estimation)?,
        family,
        mode: if o.diagonal != 0 {
            ScaleMode::Diagonal
        } else {
            ScaleMode::Isotropic
        },
        estimate_mu: o.estimate_mu != 0,
        initial_params: (!o.init_scale.is_nan()).then(|| SurrogateParams::isotropic(family, dim, o.init_scale)),
        seed: 0,
    })
}

/// Beam-search decoding of `len` noisy rows. Writes the best sequence to
/// `out` and, if `out_score` is non-NULL, its log-score.
///
/// # Safety
/// Handles must come from this library; `y` must hold `len * dim` floats,
/// `out` `out_len` ids; `options` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn bc_decode(
    table: *const BcTable,
    prior: *const BcPrior,
    y: *const f32,
    len: usize,
    options: *const BcDecodeOptions,
    out: *mut u32,
    out_len: usize,
    out_score: *mut f64,
) -> BcStatus {
    guard(|| {
        let table = table_ref(table)?;
        let prior = prior.as_ref().ok_or_else(|| null("prior"))?;
        let mut defaults = std::mem::MaybeUninit::<BcDecodeOptions>::uninit();
        let opts = match options.as_ref() {
            Some(o) => *o,
            None => {
                bc_decode_options_default(defaults.as_mut_ptr());
                defaults.assume_init()
            }
        };
        let cfg = decode_config(&opts, table.dim())?;
        let obf = obfuscated_arg(table, y, len)?;
        let out = out_slice(out, out_len, len, "out")?;
        let result = decode(&obf, table, prior.0.as_ref(), &cfg, None)?;
        out.copy_from_slice(result.decoded.ids());
        if !out_score.is_null() {
            out_score.write(result.final_beam[0].log_score);
        }
        Ok(())
    })
}
