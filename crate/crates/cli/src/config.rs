//! Layered configuration: preset defaults, then a JSON file, then flags.

use std::path::Path;

use drivefix_core::dataset::read_json;
use drivefix_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Merge `overlay` into `base`; objects merge key by key, anything else
/// replaces.
pub fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flag overrides as a nested JSON object. Keys are dotted paths and only
/// flags that were given end up here.
#[derive(Debug, Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) -> &mut Self {
        let Some(v) = value else { return self };
        let v = serde_json::to_value(v).expect("flag values serialize");
        let mut parts = path.split('.').peekable();
        let mut map = &mut self.0;
        while let Some(p) = parts.next() {
            if parts.peek().is_none() {
                map.insert(p.to_string(), v);
                break;
            }
            map = map
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("flag paths do not collide");
        }
        self
    }
}

/// Resolve `defaults < file < flags` and deserialize the result.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, flags: Flags) -> Result<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| Error::config(e.to_string()))?;
    if let Some(path) = file {
        let layer: Value = read_json(path)?;
        if !layer.is_object() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                msg: "config file must hold a JSON object".into(),
            });
        }
        deep_merge(&mut v, layer);
    }
    deep_merge(&mut v, Value::Object(flags.0));
    let source = file.map_or_else(|| Path::new("<flags>").to_path_buf(), Path::to_path_buf);
    serde_json::from_value(v).map_err(|e| Error::Schema {
        path: source,
        msg: e.to_string(),
    })
}
