//! C ABI over the bilex tokenizer, checkpoint and statistics routines.
//!
//! Every fallible function returns a [`BilexStatus`]; on failure the message
//! is kept per thread and can be copied out with
//! [`bilex_last_error_message`]. Handles are opaque and must be released
//! with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bilex_core::model::ModelCheckpoint;
use bilex_core::stats::chi2_upper_tail;
use bilex_core::tokenizer::ConditionVocabulary;
use bilex_core::{Error, LanguageTag};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilexStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Tokenizer = 6,
    Model = 7,
    Stats = 8,
    Numerical = 9,
    BufferTooSmall = 10,
    Internal = 11,
}

/// Language of a text passed to the tokenizer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilexLang {
    L1 = 1,
    L2 = 2,
}

/// A condition vocabulary loaded from its JSON file.
pub struct BilexTokenizer {
    vocab: ConditionVocabulary,
}

/// A model checkpoint loaded from disk.
pub struct BilexModel {
    ckpt: ModelCheckpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BilexStatus {
    match e {
        Error::Io { .. } => BilexStatus::Io,
        Error::Json(_) | Error::Checkpoint(_) | Error::Record { .. } => BilexStatus::Format,
        Error::Tokenizer(_) => BilexStatus::Tokenizer,
        Error::Model(_) | Error::Probe(_) => BilexStatus::Model,
        Error::Stats(_) => BilexStatus::Stats,
        Error::Numerical(_) => BilexStatus::Numerical,
        _ => BilexStatus::Internal,
    }
}

struct Fail(BilexStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BilexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            BilexStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BilexStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(BilexStatus::NullArgument, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(BilexStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies `src` into a caller buffer of `cap` elements and stores the
/// full length in `out_len`; fails with `BufferTooSmall` if it does not fit.
unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = src.len();
    if src.len() > cap {
        return Err(Fail(
            BilexStatus::BufferTooSmall,
            format!("buffer holds {cap} elements, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bilex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of the calling thread, NUL-terminated and
/// truncated to `cap` bytes. Returns the untruncated length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bilex_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a vocabulary written by the `tokenize` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bilex_tokenizer_load(path: *const c_char, out: *mut *mut BilexTokenizer) -> BilexStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let vocab = ConditionVocabulary::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(BilexTokenizer { vocab }));
        Ok(())
    })
}

/// # Safety
/// `tok` must be null or a handle from [`bilex_tokenizer_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bilex_tokenizer_free(tok: *mut BilexTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// Number of token ids, or 0 for a null handle.
///
/// # Safety
/// `tok` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bilex_tokenizer_vocab_size(tok: *const BilexTokenizer) -> usize {
    tok.as_ref().map_or(0, |t| t.vocab.size())
}

/// Id of the end-of-text token, or `u32::MAX` for a null handle.
///
/// # Safety
/// `tok` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bilex_tokenizer_end_of_text(tok: *const BilexTokenizer) -> u32 {
    tok.as_ref().map_or(u32::MAX, |t| t.vocab.end_of_text())
}

/// Encodes UTF-8 `text` as `lang`. With a short buffer the call fails with
/// `BufferTooSmall` and `out_len` holds the needed length.
///
/// # Safety
/// `tok` must be live, `text` NUL-terminated, `ids` null or `cap` writable
/// elements, `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn bilex_tokenizer_encode(
    tok: *const BilexTokenizer,
    text: *const c_char,
    lang: BilexLang,
    ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> BilexStatus {
    guard(|| {
        let tok = tok.as_ref().ok_or_else(|| null("tokenizer"))?;
        let text = c_str(text, "text")?;
        let lang = match lang {
            BilexLang::L1 => LanguageTag::L1,
            BilexLang::L2 => LanguageTag::L2,
        };
        let seq = tok.vocab.encode_text(text, lang);
        copy_out(&seq.ids, ids, cap, out_len)
    })
}

/// Decodes ids to UTF-8 bytes (not NUL-terminated). Sizing works as in
/// [`bilex_tokenizer_encode`].
///
/// # Safety
/// `ids` must point to `n` elements, `buf` be null or `cap` writable bytes,
/// `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn bilex_tokenizer_decode(
    tok: *const BilexTokenizer,
    ids: *const u32,
    n: usize,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> BilexStatus {
    guard(|| {
        let tok = tok.as_ref().ok_or_else(|| null("tokenizer"))?;
        let ids = slice(ids, n, "ids")?;
        let bytes = tok.vocab.decode_bytes(ids)?;
        copy_out(&bytes, buf, cap, out_len)
    })
}

/// Loads a checkpoint written by the `train` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bilex_model_load(path: *const c_char, out: *mut *mut BilexModel) -> BilexStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let ckpt = ModelCheckpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(BilexModel { ckpt }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`bilex_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bilex_model_free(model: *mut BilexModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bilex_model_vocab_size(model: *const BilexModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.config.vocab_size)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bilex_model_context_length(model: *const BilexModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.config.context_length)
}

/// Surprisal in bits of `target` after the `n` context ids.
///
/// # Safety
/// `ids` must point to `n` elements and `out_bits` be valid.
#[no_mangle]
pub unsafe extern "C" fn bilex_model_surprisal(
    model: *const BilexModel,
    ids: *const u32,
    n: usize,
    target: u32,
    out_bits: *mut f64,
) -> BilexStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_bits.is_null() {
            return Err(null("out_bits"));
        }
        let ids = slice(ids, n, "ids")?;
        if ids.is_empty() {
            return Err(Fail(BilexStatus::InvalidArgument, "context must hold at least one id".into()));
        }
        if target as usize >= m.ckpt.config.vocab_size {
            return Err(Fail(BilexStatus::InvalidArgument, format!("target id {target} out of range")));
        }
        let lp = m.ckpt.next_log_probs(ids)?;
        *out_bits = -lp[target as usize] / std::f64::consts::LN_2;
        Ok(())
    })
}

/// Mean next-token cross-entropy (nats) over one sequence.
///
/// # Safety
/// `ids` must point to `n` elements and `out_loss` be valid.
#[no_mangle]
pub unsafe extern "C" fn bilex_model_loss(model: *const BilexModel, ids: *const u32, n: usize, out_loss: *mut f64) -> BilexStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_loss.is_null() {
            return Err(null("out_loss"));
        }
        let ids = slice(ids, n, "ids")?;
        *out_loss = m.ckpt.loss(&[ids])?;
        Ok(())
    })
}

/// Upper-tail probability of a chi-square statistic, as used by the
/// likelihood-ratio test.
///
/// # Safety
/// `out_p` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bilex_chi2_p_value(chi2: f64, df: u32, out_p: *mut f64) -> BilexStatus {
    guard(|| {
        if out_p.is_null() {
            return Err(null("out_p"));
        }
        if !chi2.is_finite() {
            return Err(Fail(BilexStatus::InvalidArgument, "chi-square statistic must be finite".into()));
        }
        *out_p = chi2_upper_tail(chi2, df as usize)?;
        Ok(())
    })
}
