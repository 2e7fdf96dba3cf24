//! Minimal JSON Schema validation for the documents the CLI emits.
//!
//! Supports the subset the shipped schemas use: `type` (single name or
//! list), `enum`, `const`, `properties` / `required` /
//! `additionalProperties`, `items` / `minItems`, and `minimum`. Every
//! document is checked against its schema before it is written, so a
//! drifting format fails loudly instead of producing files the schemas
//! no longer describe.

use keymotion::{Error, Result};
use serde_json::Value;

/// Validates `value` against `schema`, reporting the JSON-pointer-style
/// path of the first violation.
pub fn validate(value: &Value, schema: &Value) -> Result<()> {
    walk(value, schema, "$")
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) => {
            if n.is_u64() || n.is_i64() {
                "integer"
            } else {
                "number"
            }
        }
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn matches_type(value: &Value, wanted: &str) -> bool {
    match wanted {
        // Every integer is also a number.
        "number" => matches!(value, Value::Number(_)),
        "integer" => matches!(value, Value::Number(n) if n.is_u64() || n.is_i64()),
        other => type_name(value) == other,
    }
}

fn violation(path: &str, detail: String) -> Error {
    Error::invalid(format!("schema violation at {path}: {detail}"))
}

fn walk(value: &Value, schema: &Value, path: &str) -> Result<()> {
    let Some(schema_obj) = schema.as_object() else {
        return Err(Error::invalid(format!("schema node at {path} must be an object")));
    };

    if let Some(ty) = schema_obj.get("type") {
        let ok = match ty {
            Value::String(name) => matches_type(value, name),
            Value::Array(names) => names
                .iter()
                .filter_map(Value::as_str)
                .any(|name| matches_type(value, name)),
            _ => return Err(Error::invalid(format!("schema 'type' at {path} must be a string or list"))),
        };
        if !ok {
            return Err(violation(path, format!("expected type {ty}, got {}", type_name(value))));
        }
    }

    if let Some(allowed) = schema_obj.get("enum").and_then(Value::as_array) {
        if !allowed.contains(value) {
            return Err(violation(path, format!("value {value} not in enum {allowed:?}")));
        }
    }
    if let Some(expected) = schema_obj.get("const") {
        if value != expected {
            return Err(violation(path, format!("expected constant {expected}, got {value}")));
        }
    }
    if let Some(min) = schema_obj.get("minimum").and_then(Value::as_f64) {
        match value.as_f64() {
            Some(v) if v >= min => {}
            Some(v) => return Err(violation(path, format!("{v} is below minimum {min}"))),
            None => return Err(violation(path, "minimum applied to non-number".to_string())),
        }
    }

    if let Some(obj) = value.as_object() {
        if let Some(required) = schema_obj.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    return Err(violation(path, format!("missing required key '{key}'")));
                }
            }
        }
        let props = schema_obj.get("properties").and_then(Value::as_object);
        for (key, item) in obj {
            let child_path = format!("{path}.{key}");
            if let Some(prop_schema) = props.and_then(|p| p.get(key)) {
                walk(item, prop_schema, &child_path)?;
            } else {
                match schema_obj.get("additionalProperties") {
                    Some(Value::Bool(false)) => {
                        return Err(violation(path, format!("unknown key '{key}'")));
                    }
                    Some(extra) if extra.is_object() => walk(item, extra, &child_path)?,
                    _ => {}
                }
            }
        }
    }

    if let Some(arr) = value.as_array() {
        if let Some(min_items) = schema_obj.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < min_items {
                return Err(violation(path, format!("{} items < minItems {min_items}", arr.len())));
            }
        }
        if let Some(items) = schema_obj.get("items") {
            for (i, item) in arr.iter().enumerate() {
                walk(item, items, &format!("{path}[{i}]"))?;
            }
        }
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accepts_matching_documents() {
        let schema = json!({
            "type": "object",
            "required": ["name", "values"],
            "additionalProperties": false,
            "properties": {
                "name": { "type": "string" },
                "values": { "type": "array", "items": { "type": "number" }, "minItems": 1 },
                "kind": { "enum": ["a", "b"] }
            }
        });
        let doc = json!({ "name": "x", "values": [1, 2.5], "kind": "a" });
        validate(&doc, &schema).unwrap();
    }

    #[test]
    fn rejects_type_and_key_violations() {
        let schema = json!({
            "type": "object",
            "required": ["n"],
            "additionalProperties": false,
            "properties": { "n": { "type": "integer", "minimum": 0 } }
        });
        assert!(validate(&json!({}), &schema).is_err());
        assert!(validate(&json!({ "n": "three" }), &schema).is_err());
        assert!(validate(&json!({ "n": 1.5 }), &schema).is_err());
        assert!(validate(&json!({ "n": -1 }), &schema).is_err());
        assert!(validate(&json!({ "n": 1, "extra": true }), &schema).is_err());
        validate(&json!({ "n": 3 }), &schema).unwrap();
    }

    #[test]
    fn integers_count_as_numbers_but_not_conversely() {
        let int_schema = json!({ "type": "integer" });
        let num_schema = json!({ "type": "number" });
        validate(&json!(3), &num_schema).unwrap();
        validate(&json!(3), &int_schema).unwrap();
        validate(&json!(3.25), &num_schema).unwrap();
        assert!(validate(&json!(3.25), &int_schema).is_err());
    }

    #[test]
    fn nested_arrays_report_the_failing_path() {
        let schema = json!({
            "type": "array",
            "items": { "type": "array", "items": { "type": "number" } }
        });
        let err = validate(&json!([[1.0], [2.0, "x"]]), &schema).unwrap_err();
        assert!(err.to_string().contains("$[1][1]"), "unexpected message: {err}");
    }
}
