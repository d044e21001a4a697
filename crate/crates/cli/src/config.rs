//! JSON config documents. Each subcommand reads named sections from one
//! top-level object; most sections are partial overlays on profile presets.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Parses the `--config` file, or an empty object when none is given.
pub fn load(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::config("config must be a JSON object"));
    }
    Ok(value)
}

/// Rejects top-level keys the command does not understand.
pub fn check_keys(config: &Value, allowed: &[&str]) -> Result<(), CliError> {
    if let Some(obj) = config.as_object() {
        if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::config(format!(
                "unknown config key `{k}`; expected one of: {}",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

/// Deserializes a complete section, if present.
pub fn section<T: DeserializeOwned>(config: &Value, key: &str) -> Result<Option<T>, CliError> {
    match config.get(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| CliError::config(format!("config.{key}: {e}"))),
    }
}

/// Replaces the fields of `base` named in section `key`. Unknown field names
/// are errors, so typos do not silently fall back to defaults.
pub fn overlay<T: Serialize + DeserializeOwned>(
    base: T,
    config: &Value,
    key: &str,
) -> Result<T, CliError> {
    let Some(patch) = config.get(key) else {
        return Ok(base);
    };
    let patch = patch
        .as_object()
        .ok_or_else(|| CliError::config(format!("config.{key} must be an object")))?;
    let mut merged = serde_json::to_value(&base).expect("presets serialize");
    let obj = merged.as_object_mut().expect("presets are structs");
    for (k, v) in patch {
        if !obj.contains_key(k) {
            return Err(CliError::config(format!(
                "config.{key}: unknown field `{k}`"
            )));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| CliError::config(format!("config.{key}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct P {
        a: u32,
        b: Option<f64>,
    }

    #[test]
    fn overlay_replaces_named_fields_only() {
        let cfg = json!({"p": {"a": 7}});
        assert_eq!(
            overlay(P { a: 1, b: Some(2.0) }, &cfg, "p").unwrap(),
            P { a: 7, b: Some(2.0) }
        );
        assert_eq!(
            overlay(P { a: 1, b: None }, &json!({}), "p").unwrap(),
            P { a: 1, b: None }
        );
    }

    #[test]
    fn overlay_rejects_typos_and_bad_types() {
        let e = overlay(P { a: 1, b: None }, &json!({"p": {"aa": 7}}), "p").unwrap_err();
        assert!(e.to_string().contains("`aa`"));
        assert_eq!(e.exit_code(), 2);
        assert!(overlay(P { a: 1, b: None }, &json!({"p": {"a": "x"}}), "p").is_err());
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        assert!(check_keys(&json!({"x": 1}), &["y"]).is_err());
        assert!(check_keys(&json!({"y": 1}), &["y"]).is_ok());
    }
}
