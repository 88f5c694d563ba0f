//! C interface to qsim.
//!
//! Every fallible function returns a [`QsimStatus`]; on failure the message
//! is kept per thread and read with [`qsim_last_error`]. Handles are opaque
//! pointers created by `*_load`/`*_build` functions and released with the
//! matching `*_free`. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qsim::autodiff::Checkpoint;
use qsim::corpus::{load_embeddings, parse_corpus, EmbeddingTable, Question};
use qsim::encoders::Encoder;
use qsim::lexical::{documents, retrieve_top_k, Bm25Params, InvertedIndex, Retriever};
use qsim::metrics;
use qsim::{Error, ErrorKind};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(QsimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match (&e, e.kind()) {
            (Error::Io(_), _) => QsimStatus::Io,
            (_, ErrorKind::Usage) => QsimStatus::InvalidArgument,
            (_, ErrorKind::Numerical) => QsimStatus::Numerical,
            (_, ErrorKind::Data) => QsimStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: QsimStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QsimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QsimStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            QsimStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(QsimStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(QsimStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(QsimStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(QsimStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(QsimStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(QsimStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn labels(raw: &[u8]) -> Vec<bool> {
    raw.iter().map(|&b| b != 0).collect()
}

fn query_tokens(text: &str) -> Result<Vec<String>, Failure> {
    Ok(Question::new(0, text, "")?.title)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next qsim call on the same thread.
#[no_mangle]
pub extern "C" fn qsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Word-embedding table.
pub struct QsimEmbeddings(EmbeddingTable);

/// Trained question encoder.
pub struct QsimEncoder(Encoder);

/// BM25 index over a question corpus.
pub struct QsimBm25(InvertedIndex);

fn into_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    unsafe { *out_arg(out, "out")? = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn free_handle<T>(h: *mut T) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Loads a word2vec-format text embedding file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qsim_embeddings_load(path: *const c_char, out: *mut *mut QsimEmbeddings) -> QsimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(Error::from)?;
        let table = load_embeddings(std::io::BufReader::new(file), path)?;
        into_handle(out, QsimEmbeddings(table))
    })
}

/// # Safety
/// `emb` must come from [`qsim_embeddings_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qsim_embeddings_free(emb: *mut QsimEmbeddings) {
    free_handle(emb)
}

/// Vector dimension, or 0 for a null handle.
///
/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsim_embeddings_dim(emb: *const QsimEmbeddings) -> usize {
    emb.as_ref().map_or(0, |e| e.0.dim())
}

/// Loads an encoder checkpoint written by training or pre-training.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qsim_encoder_load(path: *const c_char, out: *mut *mut QsimEncoder) -> QsimStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::load(&path)?;
        into_handle(out, QsimEncoder(Encoder::from_checkpoint(&ck)?))
    })
}

/// # Safety
/// `enc` must come from [`qsim_encoder_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qsim_encoder_free(enc: *mut QsimEncoder) {
    free_handle(enc)
}

/// Length of the vectors the encoder produces, or 0 for a null handle.
///
/// # Safety
/// `enc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsim_encoder_output_dim(enc: *const QsimEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.0.config().hidden_dim)
}

/// Encodes a question from its title and body text. `*out_len` receives the
/// vector length; if `cap` is smaller, nothing is written and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, and `out` must hold `cap`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn qsim_encoder_encode(
    enc: *const QsimEncoder,
    emb: *const QsimEmbeddings,
    title: *const c_char,
    body: *const c_char,
    use_body: bool,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> QsimStatus {
    guard(|| {
        let enc = &ref_arg(enc, "encoder")?.0;
        let emb = &ref_arg(emb, "embeddings")?.0;
        let title = str_arg(title, "title")?;
        let body = if body.is_null() { "" } else { str_arg(body, "body")? };
        let out_len = out_arg(out_len, "out_len")?;
        if enc.config().input_dim != emb.dim() {
            return fail(
                QsimStatus::InvalidArgument,
                format!(
                    "encoder expects {}-dimensional inputs, embeddings have {}",
                    enc.config().input_dim,
                    emb.dim()
                ),
            );
        }
        let v = enc.encode(&Question::new(0, title, body)?, emb, use_body)?;
        *out_len = v.len();
        if cap < v.len() {
            return fail(
                QsimStatus::BufferTooSmall,
                format!("need {} doubles, got {cap}", v.len()),
            );
        }
        slice_out(out, v.len(), "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Cosine similarity of two nonzero vectors of length `len`.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsim_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> QsimStatus {
    guard(|| {
        let (a, b) = (slice_arg(a, len, "a")?, slice_arg(b, len, "b")?);
        *out_arg(out, "out")? = qsim::encoders::cosine(a, b)?;
        Ok(())
    })
}

/// Builds a BM25 index over the titles and bodies of a corpus file.
///
/// # Safety
/// `corpus_path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_build(
    corpus_path: *const c_char,
    k1: f64,
    b: f64,
    out: *mut *mut QsimBm25,
) -> QsimStatus {
    guard(|| {
        let path = str_arg(corpus_path, "corpus_path")?;
        let file = std::fs::File::open(path).map_err(Error::from)?;
        let corpus = parse_corpus(std::io::BufReader::new(file), path)?;
        let index = InvertedIndex::build(documents(&corpus), Bm25Params { k1, b })?;
        into_handle(out, QsimBm25(index))
    })
}

/// Loads an index saved by [`qsim_bm25_save`] or the command line.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_load(path: *const c_char, out: *mut *mut QsimBm25) -> QsimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        into_handle(out, QsimBm25(InvertedIndex::load(path)?))
    })
}

/// # Safety
/// `index` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_save(index: *const QsimBm25, path: *const c_char) -> QsimStatus {
    guard(|| {
        ref_arg(index, "index")?.0.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `index` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_free(index: *mut QsimBm25) {
    free_handle(index)
}

/// Number of indexed documents, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_num_docs(index: *const QsimBm25) -> usize {
    index.as_ref().map_or(0, |i| i.0.num_docs())
}

/// BM25 score of one indexed document for a whitespace-tokenized query.
///
/// # Safety
/// `index` must be live, `query` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_score(
    index: *const QsimBm25,
    query: *const c_char,
    doc: u64,
    out: *mut f64,
) -> QsimStatus {
    guard(|| {
        let index = &ref_arg(index, "index")?.0;
        let q = query_tokens(str_arg(query, "query")?)?;
        *out_arg(out, "out")? = index.score_one(&q, doc)?;
        Ok(())
    })
}

/// The `k` best documents, score descending and ties by ascending id.
/// `exclude` points at an id to leave out, or is null. `*out_len` receives
/// how many entries were written to `ids` and `scores`, each holding `k`.
///
/// # Safety
/// `index` must be live, `query` NUL-terminated, `ids` and `scores` must hold
/// `k` elements, `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsim_bm25_top_k(
    index: *const QsimBm25,
    query: *const c_char,
    exclude: *const u64,
    k: usize,
    ids: *mut u64,
    scores: *mut f64,
    out_len: *mut usize,
) -> QsimStatus {
    guard(|| {
        let index = &ref_arg(index, "index")?.0;
        let q = query_tokens(str_arg(query, "query")?)?;
        let out_len = out_arg(out_len, "out_len")?;
        let ranked = retrieve_top_k(index, &q, exclude.as_ref().copied(), k)?;
        let (ids, scores) = (slice_out(ids, k, "ids")?, slice_out(scores, k, "scores")?);
        for (i, r) in ranked.iter().enumerate() {
            ids[i] = r.id;
            scores[i] = r.score;
        }
        *out_len = ranked.len();
        Ok(())
    })
}

/// Average precision, in [0, 1], of one ranked list of 0/1 relevance labels.
///
/// # Safety
/// `labels` must hold `len` bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsim_average_precision(rel: *const u8, len: usize, out: *mut f64) -> QsimStatus {
    guard(|| {
        *out_arg(out, "out")? = metrics::average_precision(&labels(slice_arg(rel, len, "labels")?))?;
        Ok(())
    })
}

/// Reciprocal rank of the first relevant label.
///
/// # Safety
/// `labels` must hold `len` bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsim_reciprocal_rank(rel: *const u8, len: usize, out: *mut f64) -> QsimStatus {
    guard(|| {
        *out_arg(out, "out")? = metrics::reciprocal_rank(&labels(slice_arg(rel, len, "labels")?))?;
        Ok(())
    })
}

/// Relevant labels among the first `n`, divided by `n`; 0 when `n` is 0.
///
/// # Safety
/// `labels` must hold `len` bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsim_precision_at(rel: *const u8, len: usize, n: usize, out: *mut f64) -> QsimStatus {
    guard(|| {
        *out_arg(out, "out")? = metrics::precision_at(&labels(slice_arg(rel, len, "labels")?), n);
        Ok(())
    })
}
