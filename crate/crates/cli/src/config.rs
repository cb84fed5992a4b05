//! JSON config files merged under explicit flags.
//!
//! A config file is an object with one section per subcommand, e.g.
//! `{"simulate": {"sigma1": 5.0, "window": "100x100"}}`. Keys are the long
//! flag names with dashes replaced by underscores. Flags given on the
//! command line win.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use nonwoven::{Error, Result};

pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>, section: &str) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = std::fs::read_to_string(path)?;
    let file: Value = serde_json::from_str(&text)?;
    let mut base = match file.get(section) {
        None => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => {
            return Err(Error::InvalidArgument(format!(
                "{}: section `{section}` must be an object",
                path.display()
            )))
        }
    };
    if let Value::Object(cli) = serde_json::to_value(flags)? {
        for (k, v) in cli {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base))
        .map_err(|e| Error::InvalidArgument(format!("{}: section `{section}`: {e}", path.display())))
}

/// Unwraps a merged option, naming the flag when it is missing.
pub fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("missing --{flag} (flag or config file)")))
}
