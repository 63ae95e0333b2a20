//! Flat `key = value` configuration files.
//!
//! Keys are dotted paths into a command's configuration record, e.g.
//! `pipeline.train.epochs = 50`. A value takes the type of the default it
//! replaces; `none` clears an optional value and lists are written either as
//! JSON arrays or comma-separated.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// One `key = value` assignment and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: String,
}

pub fn parse_assignments(text: &str, source: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{source}:{}: expected `key = value`, got {line:?}", i + 1))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("{source}:{}: empty key", i + 1);
        }
        out.push(Assignment {
            key: key.to_string(),
            value: value.trim().to_string(),
            origin: format!("{source}:{}", i + 1),
        });
    }
    Ok(out)
}

pub fn read_assignments(path: &Path) -> Result<Vec<Assignment>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    parse_assignments(&text, &path.display().to_string())
}

/// Parses `KEY=VALUE` from a `--set` flag.
pub fn parse_set_flag(flag: &str) -> Result<Assignment> {
    let (key, value) = flag
        .split_once('=')
        .ok_or_else(|| anyhow!("--set {flag:?}: expected KEY=VALUE"))?;
    Ok(Assignment {
        key: key.trim().to_string(),
        value: value.trim().to_string(),
        origin: format!("--set {flag}"),
    })
}

fn parse_scalar(raw: &str) -> Value {
    let unquoted = raw
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .map(str::to_string);
    if let Some(s) = unquoted {
        return Value::String(s);
    }
    match serde_json::from_str::<Value>(raw) {
        Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
        _ => Value::String(raw.to_string()),
    }
}

fn parse_like(current: &Value, raw: &str, key: &str, origin: &str) -> Result<Value> {
    if raw == "none" || raw == "null" {
        return Ok(Value::Null);
    }
    let bad = |expected: &str| anyhow!("{origin}: `{key}` expects {expected}, got {raw:?}");
    match current {
        Value::String(_) => Ok(match parse_scalar(raw) {
            Value::String(s) => Value::String(s),
            _ => Value::String(raw.to_string()),
        }),
        Value::Bool(_) => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(bad("true or false")),
        },
        Value::Number(n) => {
            let v = serde_json::from_str::<Value>(raw).map_err(|_| bad("a number"))?;
            match &v {
                // Kept as a float so a later assignment to the same key still
                // accepts fractions.
                Value::Number(m) if n.is_f64() => serde_json::Number::from_f64(m.as_f64().unwrap_or(f64::NAN))
                    .map(Value::Number)
                    .ok_or_else(|| bad("a finite number")),
                Value::Number(m) if m.is_u64() || (n.is_i64() && m.is_i64()) => Ok(v),
                Value::Number(_) => Err(bad("an integer")),
                _ => Err(bad("a number")),
            }
        }
        Value::Array(_) => {
            if raw.starts_with('[') {
                serde_json::from_str::<Value>(raw).map_err(|e| anyhow!("{origin}: `{key}`: {e}"))
            } else if raw.is_empty() {
                Ok(Value::Array(Vec::new()))
            } else {
                Ok(Value::Array(raw.split(',').map(|s| parse_scalar(s.trim())).collect()))
            }
        }
        Value::Null => {
            if raw.starts_with('[') || raw.starts_with('{') {
                serde_json::from_str::<Value>(raw).map_err(|e| anyhow!("{origin}: `{key}`: {e}"))
            } else {
                Ok(parse_scalar(raw))
            }
        }
        Value::Object(_) => Err(anyhow!("{origin}: `{key}` is a section; set one of its keys instead")),
    }
}

fn apply(root: &mut Value, a: &Assignment) -> Result<()> {
    let mut node = &mut *root;
    for part in a.key.split('.') {
        node = match node.as_object_mut().and_then(|m| m.get_mut(part)) {
            Some(next) => next,
            None => bail!("{}: unknown configuration key `{}`", a.origin, a.key),
        };
    }
    *node = parse_like(node, &a.value, &a.key, &a.origin)?;
    Ok(())
}

/// Starts from `T::default()` and applies the assignments in order.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(assignments: &[Assignment]) -> Result<T> {
    let mut root = serde_json::to_value(T::default())?;
    for a in assignments {
        apply(&mut root, a)?;
    }
    serde_json::from_value(root).map_err(|e| {
        let keys: Vec<&str> = assignments.iter().map(|a| a.key.as_str()).collect();
        anyhow!("invalid configuration after applying {keys:?}: {e}")
    })
}

fn render_leaf(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => {
            if s.is_empty() || s != s.trim() || s == "none" || s == "null" || s.contains(',') || !matches!(parse_scalar(s), Value::String(_)) {
                format!("\"{s}\"")
            } else {
                s.clone()
            }
        }
        other => other.to_string(),
    }
}

fn flatten_into(value: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(v, &key, out);
            }
        }
        leaf => out.push((prefix.to_string(), render_leaf(leaf))),
    }
}

/// Renders `config` as a file that [`resolve`] reads back to the same value.
pub fn render<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let mut pairs = Vec::new();
    flatten_into(&value, "", &mut pairs);
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("{k} = {v}\n"));
    }
    Ok(text)
}

/// Every settable key with its default, for documentation.
#[cfg(test)]
pub fn default_keys<T: Serialize + Default>() -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    flatten_into(&serde_json::to_value(T::default())?, "", &mut pairs);
    Ok(pairs)
}
