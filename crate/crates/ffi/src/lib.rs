//! C ABI over the engage engine and its batch computations.
//!
//! Every function returns an [`EngageStatus`]. On failure a message for the
//! calling thread is available from [`engage_last_error`]. Strings handed
//! out by the library are freed with [`engage_string_free`]; engines with
//! [`engage_engine_free`].

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use engage::engine::{Engine, EngineConfig};
use engage::metrics::{classify_tracking, compute_measures_in, parse_annotations};
use engage::protocol::encode;
use engage::recipe::{parse_library, RecipeLibrary};
use engage::sensorimotor::nod::{detect_nod, MotionTrace, NodConfig};
use engage::stats::{anova_single_factor, Degenerate};
use engage::world::World;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngageStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// A protocol line could not be decoded; the engine also queued an
    /// `Error` message for the client.
    Decode = 3,
    /// Input was well formed but rejected.
    Invalid = 4,
    /// Nothing to return.
    Empty = 5,
    Panic = 6,
}

/// Opaque engine handle.
pub struct EngageEngine {
    engine: Engine,
    pending: VecDeque<String>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EngageAnova {
    pub f: f64,
    pub p: f64,
    pub df_between: u32,
    pub df_within: u32,
    /// 0 regular, 1 zero within-group variance (F infinite, p 0), 2 all
    /// samples equal (F 0, p 1).
    pub degenerate: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngageTracking {
    pub tracked: u32,
    pub quick_looks: u32,
    pub nods: u32,
    pub uncategorized: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EngageNod {
    pub probability: f64,
    pub detected: bool,
    pub window_start: u64,
    pub window_end: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: EngageStatus, msg: impl Into<String>) -> EngageStatus {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn guard(f: impl FnOnce() -> EngageStatus) -> EngageStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(EngageStatus::Panic, "internal panic"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char) -> Result<Option<&'a str>, EngageStatus> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|e| fail(EngageStatus::InvalidUtf8, e.to_string()))
}

/// # Safety
/// `out` must be null or valid for one pointer write.
unsafe fn give_string(out: *mut *mut c_char, s: String) -> EngageStatus {
    if out.is_null() {
        return fail(EngageStatus::NullPointer, "output pointer is null");
    }
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            EngageStatus::Ok
        }
        Err(e) => fail(EngageStatus::Invalid, e.to_string()),
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn engage_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn engage_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an engine. `library` and `scene` hold file contents; null selects
/// the bundled demo.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be valid for
/// one pointer write.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_new(
    library: *const c_char,
    scene: *const c_char,
    out: *mut *mut EngageEngine,
) -> EngageStatus {
    guard(|| {
        if out.is_null() {
            return fail(EngageStatus::NullPointer, "output pointer is null");
        }
        let lib = match str_arg(library) {
            Ok(Some(text)) => match parse_library(text) {
                Ok(l) => l,
                Err(e) => return fail(EngageStatus::Invalid, format!("library: {e}")),
            },
            Ok(None) => RecipeLibrary::iglassware(),
            Err(s) => return s,
        };
        let world = match str_arg(scene) {
            Ok(Some(text)) => match text.parse::<World>() {
                Ok(w) => w,
                Err(e) => return fail(EngageStatus::Invalid, format!("scene: {e}")),
            },
            Ok(None) => World::default(),
            Err(s) => return s,
        };
        match Engine::new(EngineConfig::default(), lib, world) {
            Ok(engine) => {
                *out = Box::into_raw(Box::new(EngageEngine { engine, pending: VecDeque::new() }));
                EngageStatus::Ok
            }
            Err(e) => fail(EngageStatus::Invalid, e),
        }
    })
}

/// # Safety
/// `e` must be null or a handle from [`engage_engine_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_free(e: *mut EngageEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

impl EngageEngine {
    fn collect(&mut self) {
        let out = self.engine.take_output();
        self.pending.extend(out.iter().map(encode));
    }
}

/// # Safety
/// `e` must be a live handle or null.
unsafe fn handle<'a>(e: *mut EngageEngine) -> Result<&'a mut EngageEngine, EngageStatus> {
    e.as_mut().ok_or_else(|| fail(EngageStatus::NullPointer, "engine handle is null"))
}

/// Feeds one client protocol line.
///
/// # Safety
/// `e` must be a live handle; `line` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_feed_line(e: *mut EngageEngine, line: *const c_char) -> EngageStatus {
    guard(|| {
        let h = match handle(e) {
            Ok(h) => h,
            Err(s) => return s,
        };
        let line = match str_arg(line) {
            Ok(Some(l)) => l,
            Ok(None) => return fail(EngageStatus::NullPointer, "line is null"),
            Err(s) => return s,
        };
        let r = h.engine.accept_line(line);
        h.collect();
        match r {
            Ok(()) => EngageStatus::Ok,
            Err(err) => fail(EngageStatus::Decode, err.to_string()),
        }
    })
}

/// Runs internal events up to simulated time `t_ms`.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_advance(e: *mut EngageEngine, t_ms: u64) -> EngageStatus {
    guard(|| match handle(e) {
        Ok(h) => {
            h.engine.advance_to(t_ms);
            h.collect();
            EngageStatus::Ok
        }
        Err(s) => s,
    })
}

/// Time of the next internal event; `Empty` when none is pending.
///
/// # Safety
/// `e` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_next_due(e: *mut EngageEngine, out: *mut u64) -> EngageStatus {
    guard(|| {
        let h = match handle(e) {
            Ok(h) => h,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(EngageStatus::NullPointer, "output pointer is null");
        }
        match h.engine.next_due() {
            Some(t) => {
                *out = t;
                EngageStatus::Ok
            }
            None => EngageStatus::Empty,
        }
    })
}

/// Pops the next engine output line (newline terminated); `Empty` when the
/// queue is drained.
///
/// # Safety
/// `e` must be a live handle; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_poll(e: *mut EngageEngine, out: *mut *mut c_char) -> EngageStatus {
    guard(|| {
        let h = match handle(e) {
            Ok(h) => h,
            Err(s) => return s,
        };
        match h.pending.pop_front() {
            Some(line) => give_string(out, line),
            None => EngageStatus::Empty,
        }
    })
}

/// Engagement phase name, e.g. `Engaged`.
///
/// # Safety
/// `e` must be a live handle; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_phase(e: *mut EngageEngine, out: *mut *mut c_char) -> EngageStatus {
    guard(|| match handle(e) {
        Ok(h) => give_string(out, h.engine.phase().to_string()),
        Err(s) => s,
    })
}

/// Rendered discourse history.
///
/// # Safety
/// `e` must be a live handle; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_history(e: *mut EngageEngine, out: *mut *mut c_char) -> EngageStatus {
    guard(|| match handle(e) {
        Ok(h) => give_string(out, h.engine.render_history()),
        Err(s) => s,
    })
}

/// Behavioral measures of the session so far as JSON.
///
/// # Safety
/// `e` must be a live handle; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn engage_engine_metrics_json(e: *mut EngageEngine, out: *mut *mut c_char) -> EngageStatus {
    guard(|| match handle(e) {
        Ok(h) => {
            let report = compute_measures_in(h.engine.trace(), h.engine.world());
            give_string(out, report.to_json())
        }
        Err(s) => s,
    })
}

/// Single-factor ANOVA. `values` holds the groups back to back;
/// `group_sizes[i]` says how many belong to group `i`.
///
/// # Safety
/// `values` must hold the sum of `group_sizes` doubles, `group_sizes` must
/// hold `n_groups` entries and `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn engage_anova(
    values: *const f64,
    group_sizes: *const usize,
    n_groups: usize,
    out: *mut EngageAnova,
) -> EngageStatus {
    guard(|| {
        if values.is_null() || group_sizes.is_null() || out.is_null() {
            return fail(EngageStatus::NullPointer, "null argument");
        }
        let sizes = std::slice::from_raw_parts(group_sizes, n_groups);
        let total: usize = sizes.iter().sum();
        let all = std::slice::from_raw_parts(values, total);
        let mut groups = Vec::with_capacity(n_groups);
        let mut at = 0;
        for &n in sizes {
            groups.push(all[at..at + n].to_vec());
            at += n;
        }
        match anova_single_factor(&groups) {
            Ok(r) => {
                *out = EngageAnova {
                    f: r.f,
                    p: r.p,
                    df_between: r.df_between,
                    df_within: r.df_within,
                    degenerate: match r.degenerate {
                        None => 0,
                        Some(Degenerate::ZeroWithin) => 1,
                        Some(Degenerate::Constant) => 2,
                    },
                };
                EngageStatus::Ok
            }
            Err(e) => fail(EngageStatus::Invalid, e.to_string()),
        }
    })
}

/// Classifies host looks in an annotation text.
///
/// # Safety
/// `annotations` must be NUL-terminated; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn engage_classify_tracking(annotations: *const c_char, out: *mut EngageTracking) -> EngageStatus {
    guard(|| {
        if out.is_null() {
            return fail(EngageStatus::NullPointer, "output pointer is null");
        }
        let text = match str_arg(annotations) {
            Ok(Some(t)) => t,
            Ok(None) => return fail(EngageStatus::NullPointer, "annotations are null"),
            Err(s) => return s,
        };
        match parse_annotations(text).and_then(|looks| classify_tracking(&looks)) {
            Ok(c) => {
                *out = EngageTracking {
                    tracked: c.tracked,
                    quick_looks: c.quick_looks,
                    nods: c.nods,
                    uncategorized: c.uncategorized,
                };
                EngageStatus::Ok
            }
            Err(e) => fail(EngageStatus::Invalid, e.to_string()),
        }
    })
}

/// Scores a head-pitch trace sampled at a fixed tick. `Empty` when the
/// trace is shorter than one detector window.
///
/// # Safety
/// `t_ms` and `pitch_deg` must each hold `n` values; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn engage_detect_nod(
    t_ms: *const u64,
    pitch_deg: *const f64,
    n: usize,
    out: *mut EngageNod,
) -> EngageStatus {
    guard(|| {
        if t_ms.is_null() || pitch_deg.is_null() || out.is_null() {
            return fail(EngageStatus::NullPointer, "null argument");
        }
        let ts = std::slice::from_raw_parts(t_ms, n);
        let ps = std::slice::from_raw_parts(pitch_deg, n);
        let trace = match MotionTrace::new(ts.iter().copied().zip(ps.iter().copied()).collect()) {
            Ok(t) => t,
            Err(e) => return fail(EngageStatus::Invalid, e.to_string()),
        };
        match detect_nod(&trace, &NodConfig::default()) {
            Some(s) => {
                *out = EngageNod {
                    probability: s.probability,
                    detected: s.detected,
                    window_start: s.window.0,
                    window_end: s.window.1,
                };
                EngageStatus::Ok
            }
            None => EngageStatus::Empty,
        }
    })
}

/// Library version; the string is static and must not be freed.
#[no_mangle]
pub extern "C" fn engage_version() -> *const c_char {
    static VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
    VERSION.as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_handle_reports() {
        let s = unsafe { engage_engine_advance(ptr::null_mut(), 10) };
        assert_eq!(s, EngageStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(engage_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "engine handle is null");
    }
}
