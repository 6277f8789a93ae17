//! C ABI over the mapsam2 library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! and released by the matching `*_free`. Every fallible call returns a
//! [`Mapsam2Status`]; the message of the last failure on the calling thread is
//! available from [`mapsam2_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mapsam2::eval::{match_instances, prf1, MATCH_THRESHOLD};
use mapsam2::linker::{tracks_from_labels, ObjectPrompt};
use mapsam2::membank::{BankConfig, BankPolicy, MemoryBank, MemoryEntry, Update};
use mapsam2::model::{load_checkpoint, segment_video, Model};
use mapsam2::raster::{InstanceMask, RasterGrid};
use mapsam2::Error;

/// Status codes. Library error categories share the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapsam2Status {
    Ok = 0,
    InvalidArgument = 2,
    NotFound = 3,
    MalformedImage = 4,
    Schema = 5,
    Checkpoint = 6,
    LayoutInfeasible = 7,
    EmptyInput = 8,
    NullPointer = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapsam2Policy {
    SelfSorting = 0,
    Fifo = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapsam2UpdateKind {
    Rejected = 0,
    Appended = 1,
    Evicted = 2,
    Discarded = 3,
}

/// Outcome of a bank update. `evicted_tick` is meaningful for `Evicted` only.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct Mapsam2Update {
    pub kind: Mapsam2UpdateKind,
    pub evicted_tick: u64,
}

/// Box prompt `[x0, x1) x [y0, y1)` for object `id`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct Mapsam2Box {
    pub id: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Mapsam2Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Opaque trained model.
pub struct Mapsam2Model(Model);

/// Opaque memory bank over plain embedding vectors.
pub struct Mapsam2Bank(MemoryBank<()>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

enum Failure {
    Lib(Error),
    Status(Mapsam2Status, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> Mapsam2Status {
    match e.exit_code() {
        3 => Mapsam2Status::NotFound,
        4 => Mapsam2Status::MalformedImage,
        5 => Mapsam2Status::Schema,
        6 => Mapsam2Status::Checkpoint,
        7 => Mapsam2Status::LayoutInfeasible,
        8 => Mapsam2Status::EmptyInput,
        _ => Mapsam2Status::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Mapsam2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Mapsam2Status::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            Mapsam2Status::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(Mapsam2Status::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mapsam2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mapsam2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_model_load(path: *const c_char, out: *mut *mut Mapsam2Model) -> Mapsam2Status {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Status(Mapsam2Status::InvalidArgument, "path is not UTF-8".into()))?;
        let model = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(Mapsam2Model(model)));
        Ok(())
    })
}

/// Side length frames must have; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_model_input_size(model: *const Mapsam2Model) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().input_size)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_model_free(model: *mut Mapsam2Model) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Segment and track prompted objects through a video.
///
/// `frames` holds `n_frames` row-major 8-bit frames of side
/// `mapsam2_model_input_size`, latest first; the boxes refer to the first one.
/// `out_labels` receives one 16-bit label map per frame, labels being object
/// ids; where objects overlap the smaller id wins.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_segment_video(
    model: *const Mapsam2Model,
    frames: *const u8,
    n_frames: usize,
    boxes: *const Mapsam2Box,
    n_boxes: usize,
    use_memory: bool,
    out_labels: *mut u16,
) -> Mapsam2Status {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let s = model.config().input_size;
        let px = s * s;
        let frames = slice(frames, n_frames * px, "frames")?;
        let boxes = slice(boxes, n_boxes, "boxes")?;
        let out = slice_mut(out_labels, n_frames * px, "out_labels")?;
        let grids = frames
            .chunks(px)
            .map(|c| RasterGrid::new(s, s, c.to_vec()))
            .collect::<mapsam2::Result<Vec<_>>>()?;
        let prompts: Vec<ObjectPrompt> = boxes
            .iter()
            .map(|b| ObjectPrompt {
                id: b.id,
                bbox: [b.x0 as usize, b.y0 as usize, b.x1 as usize, b.y1 as usize],
            })
            .collect();
        let refs: Vec<&RasterGrid> = grids.iter().collect();
        let result = segment_video(model, &refs, &prompts, &BankConfig::default(), use_memory)?;
        if let Some((id, reason)) = result.rejected.first() {
            return Err(Failure::Status(Mapsam2Status::InvalidArgument, format!("prompt {id}: {reason}")));
        }
        out.fill(0);
        let mut objects: Vec<_> = result.objects.iter().collect();
        objects.sort_by_key(|o| std::cmp::Reverse(o.id));
        for o in objects {
            let label = u16::try_from(o.id)
                .map_err(|_| Failure::Status(Mapsam2Status::InvalidArgument, format!("object id {} exceeds 16 bits", o.id)))?;
            for (t, m) in o.masks.iter().enumerate() {
                for (i, &b) in m.bits().iter().enumerate() {
                    if b {
                        out[t * px + i] = label;
                    }
                }
            }
        }
        Ok(())
    })
}

/// Instance-level precision, recall and F1 of predicted label maps against
/// ground truth, labels being track ids consistent across frames.
///
/// # Safety
/// Both label buffers must hold `n_frames * height * width` values.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_eval_video(
    pred: *const u16,
    gt: *const u16,
    n_frames: usize,
    height: usize,
    width: usize,
    out: *mut Mapsam2Scores,
) -> Mapsam2Status {
    guard(|| {
        let px = height * width;
        let masks = |labels: &[u16]| {
            labels
                .chunks(px.max(1))
                .map(|c| InstanceMask::new(height, width, c.to_vec()))
                .collect::<mapsam2::Result<Vec<_>>>()
        };
        let pred = masks(slice(pred, n_frames * px, "pred")?)?;
        let gt = masks(slice(gt, n_frames * px, "gt")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = match_instances(&tracks_from_labels(&pred), &tracks_from_labels(&gt), MATCH_THRESHOLD)?;
        let s = prf1(&m);
        *out = Mapsam2Scores {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            tp: m.tp as u64,
            fp: m.fp as u64,
            fn_: m.fn_ as u64,
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_bank_new(capacity: usize, policy: Mapsam2Policy, out: *mut *mut Mapsam2Bank) -> Mapsam2Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if capacity == 0 {
            return Err(Failure::Status(Mapsam2Status::InvalidArgument, "capacity must be at least 1".into()));
        }
        let policy = match policy {
            Mapsam2Policy::SelfSorting => BankPolicy::SelfSorting,
            Mapsam2Policy::Fifo => BankPolicy::Fifo,
        };
        *out = Box::into_raw(Box::new(Mapsam2Bank(MemoryBank::new(capacity, policy))));
        Ok(())
    })
}

/// # Safety
/// `bank` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_bank_free(bank: *mut Mapsam2Bank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Offer an embedding to the bank. The FIFO policy ignores the threshold.
///
/// # Safety
/// `bank` must be live, `vector` must hold `dim` values, `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_bank_update(
    bank: *mut Mapsam2Bank,
    vector: *const f64,
    dim: usize,
    confidence: f64,
    conf_threshold: f64,
    out: *mut Mapsam2Update,
) -> Mapsam2Status {
    guard(|| {
        let bank = &mut bank.as_mut().ok_or_else(|| null("bank"))?.0;
        let v = slice(vector, dim, "vector")?;
        if let Some(first) = bank.entries().first() {
            if first.pooled.len() != dim {
                return Err(Failure::Status(
                    Mapsam2Status::InvalidArgument,
                    format!("dimension mismatch: bank holds {}-vectors, got {dim}", first.pooled.len()),
                ));
            }
        }
        let n = mapsam2::membank::norm(v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Failure::Status(Mapsam2Status::InvalidArgument, "vector must be finite and nonzero".into()));
        }
        let unit: Vec<f64> = v.iter().map(|x| x / n).collect();
        let index = bank.len();
        let u = bank.update(MemoryEntry::new((), unit, confidence, index), conf_threshold)?;
        if let Some(out) = out.as_mut() {
            *out = match u {
                Update::Rejected => Mapsam2Update { kind: Mapsam2UpdateKind::Rejected, evicted_tick: 0 },
                Update::Appended => Mapsam2Update { kind: Mapsam2UpdateKind::Appended, evicted_tick: 0 },
                Update::Evicted(t) => Mapsam2Update { kind: Mapsam2UpdateKind::Evicted, evicted_tick: t },
                Update::Discarded => Mapsam2Update { kind: Mapsam2UpdateKind::Discarded, evicted_tick: 0 },
            };
        }
        Ok(())
    })
}

/// Number of stored entries; 0 for a null handle.
///
/// # Safety
/// `bank` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_bank_len(bank: *const Mapsam2Bank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Insertion ticks of the stored entries, oldest first.
///
/// # Safety
/// `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_bank_ticks(bank: *const Mapsam2Bank, out: *mut u64, cap: usize) -> Mapsam2Status {
    guard(|| {
        let bank = &bank.as_ref().ok_or_else(|| null("bank"))?.0;
        if cap < bank.len() {
            return Err(Failure::Status(Mapsam2Status::BufferTooSmall, format!("need {} slots, got {cap}", bank.len())));
        }
        let out = slice_mut(out, bank.len(), "out")?;
        for (o, e) in out.iter_mut().zip(bank.entries()) {
            *o = e.insertion_tick;
        }
        Ok(())
    })
}

/// Retrieval probability of each stored entry for `query`.
///
/// # Safety
/// `query` must hold `dim` values and `out` `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mapsam2_bank_probabilities(
    bank: *const Mapsam2Bank,
    query: *const f64,
    dim: usize,
    out: *mut f64,
    cap: usize,
) -> Mapsam2Status {
    guard(|| {
        let bank = &bank.as_ref().ok_or_else(|| null("bank"))?.0;
        if cap < bank.len() {
            return Err(Failure::Status(Mapsam2Status::BufferTooSmall, format!("need {} slots, got {cap}", bank.len())));
        }
        let q = slice(query, dim, "query")?;
        let p = bank.retrieval_probabilities(q)?;
        slice_mut(out, p.len(), "out")?.copy_from_slice(&p);
        Ok(())
    })
}
