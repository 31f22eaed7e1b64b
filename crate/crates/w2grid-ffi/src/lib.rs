//! C ABI for the grid-tagging NER library.
//!
//! Conventions: every fallible function returns a `W2gStatus` code and
//! writes its result through an out pointer. Strings crossing the
//! boundary are NUL-terminated UTF-8, JSON-encoded on the payload side;
//! strings returned by the library must be released with
//! `w2g_string_free`, models with `w2g_model_free`. The most recent
//! error message is available per thread via `w2g_last_error`.

use libc::c_char;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use w2grid::codec::{decode_grid, encode_grid, DecodeOptions};
use w2grid::data::Vocabulary;
use w2grid::model::{load_checkpoint, Checkpoint};
use w2grid::train::predict_entities;
use w2grid::types::{Entity, LabelSet, RelationGrid, Sentence};

/// Result codes mirroring the CLI's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W2gStatus {
    Ok = 0,
    /// Null pointer, malformed UTF-8/JSON, or bad arguments.
    Usage = 1,
    /// Validation or file-format failure.
    Data = 2,
    /// Numeric or decoding failure at run time.
    Runtime = 3,
}

/// Opaque trained-model handle (checkpoint plus vocabulary).
pub struct W2gModel {
    ckpt: Checkpoint,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs stripped");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: W2gStatus, msg: &str) -> W2gStatus {
    set_error(msg);
    status
}

/// Message for the last failure on this thread. The pointer stays valid
/// until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn w2g_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, W2gStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(W2gStatus::Usage);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        W2gStatus::Usage
    })
}

fn give_string(out: *mut *mut c_char, s: String) -> W2gStatus {
    let c = match CString::new(s) {
        Ok(c) => c,
        Err(_) => return fail(W2gStatus::Runtime, "output contained a NUL byte"),
    };
    unsafe { *out = c.into_raw() };
    W2gStatus::Ok
}

/// Loads a checkpoint file into a model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn w2g_model_load(
    path: *const c_char,
    out: *mut *mut W2gModel,
) -> W2gStatus {
    if out.is_null() {
        return fail(W2gStatus::Usage, "null out pointer");
    }
    let path = match read_str(path) {
        Ok(p) => PathBuf::from(p),
        Err(s) => return s,
    };
    match load_checkpoint(&path) {
        Ok(ckpt) => {
            let vocab = Vocabulary::from_tokens(ckpt.vocab.clone());
            *out = Box::into_raw(Box::new(W2gModel { ckpt, vocab }));
            W2gStatus::Ok
        }
        Err(e) => fail(W2gStatus::Data, &e.to_string()),
    }
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from `w2g_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn w2g_model_free(model: *mut W2gModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from a `w2g_*` function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn w2g_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Predicts entities for one sentence. `tokens_json` is a JSON array of
/// strings; on success `*out` is a JSON array of
/// `{"indices": [...], "type": "..."}` objects.
///
/// # Safety
/// `model` must be a live handle; `tokens_json` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn w2g_predict(
    model: *const W2gModel,
    tokens_json: *const c_char,
    out: *mut *mut c_char,
) -> W2gStatus {
    if model.is_null() || out.is_null() {
        return fail(W2gStatus::Usage, "null model or out pointer");
    }
    let model = &*model;
    let tokens_str = match read_str(tokens_json) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let tokens: Vec<String> = match serde_json::from_str(tokens_str) {
        Ok(t) => t,
        Err(e) => return fail(W2gStatus::Usage, &e.to_string()),
    };
    match predict_entities(&tokens, &model.ckpt.params, &model.ckpt.config, &model.ckpt.labels, &model.vocab)
    {
        Ok(entities) => give_string(out, entities_to_json(&entities)),
        Err(e) => fail(W2gStatus::Runtime, &e.to_string()),
    }
}

fn entities_to_json(entities: &[Entity]) -> String {
    let vals: Vec<serde_json::Value> = entities
        .iter()
        .map(|e| serde_json::json!({"indices": e.indices, "type": e.etype}))
        .collect();
    serde_json::Value::Array(vals).to_string()
}

fn parse_labels(json: &str) -> Result<LabelSet, String> {
    let types: Vec<String> = serde_json::from_str(json).map_err(|e| e.to_string())?;
    LabelSet::new(types).map_err(|e| e.to_string())
}

/// Encodes a sentence into its relation grid.
/// `sentence_json`: `{"tokens": [...], "entities": [...]}`;
/// `types_json`: JSON array of entity type names.
/// On success `*out` is `{"n": N, "cells": [[i, j, "LABEL"], ...]}`.
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn w2g_encode(
    sentence_json: *const c_char,
    types_json: *const c_char,
    out: *mut *mut c_char,
) -> W2gStatus {
    if out.is_null() {
        return fail(W2gStatus::Usage, "null out pointer");
    }
    let sentence = match read_str(sentence_json) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let types = match read_str(types_json) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let sentence: Sentence = match serde_json::from_str(sentence) {
        Ok(s) => s,
        Err(e) => return fail(W2gStatus::Usage, &e.to_string()),
    };
    let labels = match parse_labels(types) {
        Ok(l) => l,
        Err(e) => return fail(W2gStatus::Usage, &e),
    };
    let grid = match encode_grid(&sentence, &labels) {
        Ok(g) => g,
        Err(e) => return fail(W2gStatus::Data, &e.to_string()),
    };
    let cells: Vec<serde_json::Value> = grid
        .tagged_cells()
        .map(|(i, j, r)| {
            let name = labels.relation_name(r).expect("encoded ids are known");
            serde_json::json!([i, j, name])
        })
        .collect();
    give_string(out, serde_json::json!({"n": grid.n(), "cells": cells}).to_string())
}

/// Decodes a relation grid (format produced by `w2g_encode`) back into
/// entities; `*out` receives the same JSON shape as `w2g_predict`.
///
/// # Safety
/// All pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn w2g_decode(
    grid_json: *const c_char,
    types_json: *const c_char,
    out: *mut *mut c_char,
) -> W2gStatus {
    if out.is_null() {
        return fail(W2gStatus::Usage, "null out pointer");
    }
    let grid_src = match read_str(grid_json) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let types = match read_str(types_json) {
        Ok(s) => s,
        Err(c) => return c,
    };
    let labels = match parse_labels(types) {
        Ok(l) => l,
        Err(e) => return fail(W2gStatus::Usage, &e),
    };
    #[derive(serde::Deserialize)]
    struct GridJson {
        n: usize,
        cells: Vec<(usize, usize, String)>,
    }
    let parsed: GridJson = match serde_json::from_str(grid_src) {
        Ok(g) => g,
        Err(e) => return fail(W2gStatus::Usage, &e.to_string()),
    };
    let mut grid = RelationGrid::new(parsed.n);
    for (i, j, label) in parsed.cells {
        if i >= parsed.n || j >= parsed.n {
            return fail(W2gStatus::Data, &format!("cell ({i},{j}) outside n={}", parsed.n));
        }
        match labels.relation_id(&label) {
            Some(r) => grid.set(i, j, r),
            None => return fail(W2gStatus::Data, &format!("unknown relation label {label:?}")),
        }
    }
    match decode_grid(&grid, &labels, &DecodeOptions::default()) {
        Ok(entities) => give_string(out, entities_to_json(&entities)),
        Err(e) => fail(W2gStatus::Runtime, &e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    unsafe fn take(out: *mut c_char) -> String {
        let s = CStr::from_ptr(out).to_str().unwrap().to_string();
        w2g_string_free(out);
        s
    }

    #[test]
    fn encode_decode_round_trip_through_the_abi() {
        let sentence = c(r#"{"tokens":["a","b","c","d","e","f","g","h"],
            "entities":[{"indices":[3,4,5],"type":"Symptom"},
                        {"indices":[3,4,7],"type":"Symptom"}]}"#);
        let types = c(r#"["Symptom"]"#);
        let mut grid_out: *mut c_char = ptr::null_mut();
        let st = unsafe { w2g_encode(sentence.as_ptr(), types.as_ptr(), &mut grid_out) };
        assert_eq!(st, W2gStatus::Ok);
        let grid_json = unsafe { take(grid_out) };
        assert!(grid_json.contains("\"n\":8"));
        assert!(grid_json.contains("THW-Symptom"));
        let grid_c = c(&grid_json);
        let mut ents_out: *mut c_char = ptr::null_mut();
        let st = unsafe { w2g_decode(grid_c.as_ptr(), types.as_ptr(), &mut ents_out) };
        assert_eq!(st, W2gStatus::Ok);
        let ents: Vec<serde_json::Value> =
            serde_json::from_str(&unsafe { take(ents_out) }).unwrap();
        assert_eq!(ents.len(), 2);
        assert_eq!(ents[0]["indices"], serde_json::json!([3, 4, 5]));
    }

    #[test]
    fn null_and_garbage_arguments_set_errors() {
        let mut out: *mut c_char = ptr::null_mut();
        let st = unsafe { w2g_encode(ptr::null(), ptr::null(), &mut out) };
        assert_eq!(st, W2gStatus::Usage);
        let msg = unsafe { CStr::from_ptr(w2g_last_error()) }.to_str().unwrap();
        assert!(!msg.is_empty());
        let bad = c("not json");
        let types = c(r#"["X"]"#);
        let st = unsafe { w2g_encode(bad.as_ptr(), types.as_ptr(), &mut out) };
        assert_eq!(st, W2gStatus::Usage);
        let mut model: *mut W2gModel = ptr::null_mut();
        let missing = c("/nonexistent/model.ckpt");
        let st = unsafe { w2g_model_load(missing.as_ptr(), &mut model) };
        assert_eq!(st, W2gStatus::Data);
        unsafe { w2g_model_free(ptr::null_mut()) }; // no-op
    }

    #[test]
    fn model_load_predict_and_free() {
        use w2grid::data::{build_vocab, gen_synthetic, SynthSpec};
        use w2grid::model::{save_checkpoint, ModelConfig, ModelParams};
        use w2grid::numerics::Rng;

        // An untrained model still exercises the whole path: load,
        // predict (possibly zero entities), free.
        let sents = gen_synthetic(&SynthSpec { sentences: 4, ..Default::default() });
        let vocab = build_vocab(&sents, 1);
        let labels = LabelSet::new(["X", "Y"]).unwrap();
        let config = ModelConfig {
            vocab_size: vocab.len(),
            d_word: 8,
            d_h: 8,
            d_ed: 4,
            d_et: 4,
            d_c: 6,
            d_biaffine: 6,
            d_pred_hidden: 6,
            dilation_rates: vec![1],
            relation_count: labels.relation_count(),
            dropout: 0.0,
            ..Default::default()
        };
        let params = ModelParams::init(&config, &mut Rng::new(0));
        let dir = std::env::temp_dir().join(format!("w2g-ffi-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, &Checkpoint {
            config,
            labels,
            vocab: vocab.tokens().to_vec(),
            params,
        })
        .unwrap();

        let cpath = c(path.to_str().unwrap());
        let mut model: *mut W2gModel = ptr::null_mut();
        assert_eq!(unsafe { w2g_model_load(cpath.as_ptr(), &mut model) }, W2gStatus::Ok);
        let tokens = c(r#"["x0","x1","the"]"#);
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { w2g_predict(model, tokens.as_ptr(), &mut out) }, W2gStatus::Ok);
        let ents: Vec<serde_json::Value> =
            serde_json::from_str(&unsafe { take(out) }).unwrap();
        let _ = ents; // untrained output; shape checked by the parse
        unsafe { w2g_model_free(model) };
        let _ = std::fs::remove_dir_all(&dir);
    }
}
