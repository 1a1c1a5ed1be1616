//! Output directory artifacts.
//!
//! | file          | content                                                   |
//! |---------------|-----------------------------------------------------------|
//! | answer.json   | answer letter, raw response, fallback, budget usage       |
//! | package.json  | evidence package handed to the answerer                   |
//! | trace.jsonl   | one loop iteration per line                               |
//! | beliefs.bin   | `u32` node count K, then K `f64` beliefs, little-endian   |
//! | metrics.csv   | provider ledger; token counts are chars/4 estimates       |
//! | error.json    | `{kind, message, exit_code}` when a run fails              |
//!
//! Every float in the JSON artifacts is rounded to [`FLOAT_DECIMALS`] places
//! so files are byte-stable across platforms.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const FLOAT_DECIMALS: i32 = 6;

/// Rounds every float in `v` to [`FLOAT_DECIMALS`] places. Integers are kept.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let scale = 10f64.powi(FLOAT_DECIMALS);
            let mut r = (x * scale).round() / scale;
            if r == 0.0 {
                r = 0.0;
            }
            serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn stable_json(value: &impl Serialize) -> Result<String> {
    let v = round_floats(serde_json::to_value(value)?);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// One compact JSON document per line.
pub fn stable_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&round_floats(serde_json::to_value(r)?))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn encode_beliefs(belief: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * belief.len());
    out.extend_from_slice(&(belief.len() as u32).to_le_bytes());
    for x in belief {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_beliefs(bytes: &[u8]) -> Result<Vec<f64>> {
    let bad = || Error::Bundle(format!("beliefs.bin: {} bytes is not a valid dump", bytes.len()));
    let (head, rest) = bytes.split_at_checked(4).ok_or_else(bad)?;
    let k = u32::from_le_bytes(head.try_into().unwrap()) as usize;
    if rest.len() != 8 * k {
        return Err(bad());
    }
    Ok(rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

pub fn error_record(err: &Error) -> Value {
    json!({
        "kind": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    })
}

pub fn write_error(dir: &Path, err: &Error) -> Result<()> {
    write_file(dir, "error.json", stable_json(&error_record(err))?.as_bytes())
}
