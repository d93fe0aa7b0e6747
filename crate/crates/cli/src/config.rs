//! JSON run configuration: file contents merged with command-line overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::Failure;

/// Object being assembled from a config file and flags.
pub struct Draft {
    value: Value,
    source: Option<String>,
    overridden: bool,
}

impl Draft {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self {
                value: Value::Object(Map::new()),
                source: None,
                overridden: false,
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            Failure::config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        if !value.is_object() {
            return Err(Failure::config(format!("{}: expected a JSON object", path.display())));
        }
        Ok(Self {
            value,
            source: Some(text),
            overridden: false,
        })
    }

    /// Sets `path` (dotted keys) to `v`, creating intermediate objects.
    pub fn set(&mut self, path: &[&str], v: Value) {
        self.overridden = true;
        let mut cur = &mut self.value;
        for key in &path[..path.len() - 1] {
            let obj = cur.as_object_mut().expect("draft nodes are objects");
            cur = obj
                .entry(key.to_string())
                .and_modify(|e| {
                    if !e.is_object() {
                        *e = Value::Object(Map::new());
                    }
                })
                .or_insert_with(|| Value::Object(Map::new()));
        }
        cur.as_object_mut()
            .expect("draft nodes are objects")
            .insert(path[path.len() - 1].to_string(), v);
    }

    pub fn set_opt<T: Into<Value>>(&mut self, path: &[&str], v: Option<T>) {
        if let Some(v) = v {
            self.set(path, v.into());
        }
    }

    pub fn get(&self, path: &[&str]) -> Option<&Value> {
        let mut cur = &self.value;
        for key in path {
            cur = cur.get(key)?;
        }
        Some(cur)
    }

    /// Deserializes the merged document; errors name the field path, and the
    /// file position when no flag changed the document.
    pub fn finish<T: DeserializeOwned>(self) -> Result<T, Failure> {
        let result = match (&self.source, self.overridden) {
            (Some(text), false) => {
                let mut de = serde_json::Deserializer::from_str(text);
                serde_path_to_error::deserialize(&mut de).map_err(|e| {
                    let inner = e.inner();
                    format!("line {} field `{}`: {inner}", inner.line(), e.path())
                })
            }
            _ => serde_path_to_error::deserialize(self.value).map_err(|e| format!("field `{}`: {}", e.path(), e.inner())),
        };
        result.map_err(Failure::config)
    }
}
