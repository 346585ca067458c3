use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serialisable") + "\n"))
}

fn field_of(path: &serde_path_to_error::Path) -> String {
    let p = path.to_string();
    if p == "." {
        "<root>".into()
    } else {
        p
    }
}

/// Parses JSON text into `T`, reporting line, column and the offending
/// field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = field_of(e.path());
        let inner = e.inner();
        CliError::config(format!(
            "{origin}: line {}, column {}: field `{field}`: {inner}",
            inner.line(),
            inner.column()
        ))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

/// Like [`parse_json`] for an already parsed value (no position info).
pub fn from_value<T: DeserializeOwned>(value: Value, origin: &str) -> CliResult<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = field_of(e.path());
        CliError::config(format!("{origin}: field `{field}`: {}", e.inner()))
    })
}

/// Recursively merges `patch` into `base`: objects merge key by key, any
/// other value replaces.
pub fn deep_merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => deep_merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_recursive_for_objects_only() {
        let mut base = json!({"a": {"x": 1, "y": 2}, "b": [1, 2]});
        deep_merge(&mut base, &json!({"a": {"y": 3}, "b": [9]}));
        assert_eq!(base, json!({"a": {"x": 1, "y": 3}, "b": [9]}));
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        #[derive(serde::Deserialize, Debug)]
        #[serde(deny_unknown_fields)]
        #[allow(dead_code)]
        struct Inner {
            v: f64,
        }
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Outer {
            inner: Inner,
        }
        let err = parse_json::<Outer>("{\n  \"inner\": {\"v\": \"x\"}\n}", "cfg.json").unwrap_err();
        assert!(err.message.contains("line 2"), "{}", err.message);
        assert!(err.message.contains("inner.v"), "{}", err.message);
    }
}
