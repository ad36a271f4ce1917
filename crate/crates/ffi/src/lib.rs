//! C interface to the refanno annotator.
//!
//! Handles are opaque and owned by the caller; free them with the matching
//! `_free` function. Every fallible call returns a [`RefannoStatus`]; on
//! failure `refanno_last_error` describes the problem for the calling
//! thread. Strings handed out by the library are freed with
//! `refanno_string_free`.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use refanno::{annotate_text, check, DomainSchema, Language, MappingTable, Scene, TaggedProperty};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefannoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefannoLanguage {
    English = 0,
    Portuguese = 1,
}

impl From<RefannoLanguage> for Language {
    fn from(l: RefannoLanguage) -> Self {
        match l {
            RefannoLanguage::English => Language::English,
            RefannoLanguage::Portuguese => Language::Portuguese,
        }
    }
}

/// Opaque mapping table.
pub struct RefannoLexicon {
    table: MappingTable,
}

/// Opaque domain schema.
pub struct RefannoSchema {
    schema: DomainSchema,
}

struct Failure(RefannoStatus, String);

type Outcome<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> RefannoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RefannoStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RefannoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure(RefannoStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RefannoStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Outcome<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(RefannoStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<T>(out: *mut T) -> Outcome<()> {
    if out.is_null() {
        Err(Failure(RefannoStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn parse<T: serde::de::DeserializeOwned>(json: &str, what: &str) -> Outcome<T> {
    serde_json::from_str(json).map_err(|e| Failure(RefannoStatus::Parse, format!("{what}: {e}")))
}

fn to_c_string(json: String) -> Outcome<*mut c_char> {
    CString::new(json)
        .map(CString::into_raw)
        .map_err(|_| Failure(RefannoStatus::InvalidArgument, "output contains NUL".into()))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn refanno_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn refanno_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a mapping table (.tsv or .json).
///
/// # Safety
/// `path` and `type_attribute` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn refanno_lexicon_load(
    path: *const c_char,
    type_attribute: *const c_char,
    out: *mut *mut RefannoLexicon,
) -> RefannoStatus {
    guard(|| {
        out_ptr(out)?;
        let path = str_arg(path, "path")?;
        let type_attribute = str_arg(type_attribute, "type_attribute")?;
        let table = MappingTable::load(Path::new(path), type_attribute).map_err(|e| {
            let status = if Path::new(path).exists() {
                RefannoStatus::Parse
            } else {
                RefannoStatus::Io
            };
            Failure(status, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(RefannoLexicon { table }));
        Ok(())
    })
}

/// # Safety
/// `lexicon` must come from `refanno_lexicon_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn refanno_lexicon_free(lexicon: *mut RefannoLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// Number of entries in the table.
///
/// # Safety
/// `lexicon` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn refanno_lexicon_len(lexicon: *const RefannoLexicon) -> usize {
    lexicon.as_ref().map_or(0, |l| l.table.len())
}

/// Parses a domain schema from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn refanno_schema_from_json(json: *const c_char, out: *mut *mut RefannoSchema) -> RefannoStatus {
    guard(|| {
        out_ptr(out)?;
        let schema: DomainSchema = parse(str_arg(json, "json")?, "schema")?;
        if let Some(v) = schema.validate().first() {
            return Err(Failure(RefannoStatus::InvalidArgument, v.to_string()));
        }
        *out = Box::into_raw(Box::new(RefannoSchema { schema }));
        Ok(())
    })
}

/// # Safety
/// `schema` must come from `refanno_schema_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn refanno_schema_free(schema: *mut RefannoSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Annotates one description. `*out_json` receives the annotation as JSON.
///
/// # Safety
/// Handles must be live; `text` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn refanno_annotate(
    lexicon: *const RefannoLexicon,
    schema: *const RefannoSchema,
    text: *const c_char,
    language: RefannoLanguage,
    out_json: *mut *mut c_char,
) -> RefannoStatus {
    guard(|| {
        out_ptr(out_json)?;
        let lex = handle(lexicon, "lexicon")?;
        let schema = handle(schema, "schema")?;
        let text = str_arg(text, "text")?;
        let result = annotate_text(text, language.into(), &lex.table, &schema.schema);
        *out_json = to_c_string(serde_json::to_string(&result).expect("annotation serializes"))?;
        Ok(())
    })
}

/// Annotates a description and checks it against a scene given as JSON.
/// `*out_json` receives the feedback verdict.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn refanno_check(
    lexicon: *const RefannoLexicon,
    schema: *const RefannoSchema,
    scene_json: *const c_char,
    text: *const c_char,
    language: RefannoLanguage,
    out_json: *mut *mut c_char,
) -> RefannoStatus {
    guard(|| {
        out_ptr(out_json)?;
        let lex = handle(lexicon, "lexicon")?;
        let schema = handle(schema, "schema")?;
        let scene: Scene = parse(str_arg(scene_json, "scene_json")?, "scene")?;
        let text = str_arg(text, "text")?;
        let annotation = annotate_text(text, language.into(), &lex.table, &schema.schema);
        let verdict = check(&annotation, &scene, &schema.schema);
        *out_json = to_c_string(serde_json::to_string(&verdict).expect("verdict serializes"))?;
        Ok(())
    })
}

/// Dice coefficient of two JSON arrays of role-tagged properties.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn refanno_dice(a_json: *const c_char, b_json: *const c_char, out: *mut f64) -> RefannoStatus {
    guard(|| {
        out_ptr(out)?;
        let a: BTreeSet<TaggedProperty> = parse(str_arg(a_json, "a_json")?, "a")?;
        let b: BTreeSet<TaggedProperty> = parse(str_arg(b_json, "b_json")?, "b")?;
        *out = refanno::eval::dice(&a, &b);
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn refanno_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
