//! Run configuration: a flat JSON object of defaults overridden by flags.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

fn object(value: Value, what: &str) -> CliResult<Map<String, Value>> {
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!("{what} must be a JSON object"))),
    }
}

pub fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed config file {}: {e}", path.display())))?;
    let map = object(value, "config file")?;
    if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object()) {
        return Err(CliError::Usage(format!(
            "malformed config file {}: key `{k}` is nested, expected flat key-value pairs",
            path.display()
        )));
    }
    Ok(map)
}

/// Layer `file` and then the flags that were given (non-null, non-false)
/// over `S::default()`. Keys unknown to `S` are rejected.
pub fn resolve<S, F>(file: Option<&Path>, flags: &F) -> CliResult<S>
where
    S: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut merged = object(serde_json::to_value(S::default()).expect("settings serialize"), "settings")?;
    if let Some(path) = file {
        for (k, v) in read_config_file(path)? {
            if !merged.contains_key(&k) {
                return Err(CliError::Usage(format!("unknown key `{k}` in config file {}", path.display())));
            }
            merged.insert(k, v);
        }
    }
    let given = object(serde_json::to_value(flags).expect("flags serialize"), "flags")?;
    for (k, v) in given {
        if v.is_null() || v == Value::Bool(false) || v.as_array().is_some_and(|a| a.is_empty()) {
            continue;
        }
        merged.insert(k, v);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// Settings as a JSON value, for echoing into manifests.
pub fn echo<S: Serialize>(settings: &S) -> Value {
    serde_json::to_value(settings).expect("settings serialize")
}
