//! JSON configuration files layered over resolved defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tbauc::{Error, Result};

/// Recursively overlay `patch` onto `base`. Objects merge key by key; any
/// other value replaces what was there.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Read a JSON object from `path`.
pub fn read_overrides(path: &Path) -> Result<Value> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Error::InvalidConfig(format!(
            "{}: top level must be a JSON object",
            path.display()
        )));
    }
    Ok(v)
}

/// `defaults` with the keys of `overrides` applied. Unknown keys are
/// reported by name.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, overrides: Option<&Value>, origin: &str) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(o) = overrides {
        merge(&mut v, o.clone());
    }
    serde_json::from_value(v).map_err(|e| Error::InvalidConfig(format!("{origin}: {e}")))
}
