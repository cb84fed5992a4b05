//! Self-describing JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Family, TrainedSurrogate};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};

pub const FORMAT: &str = "nonwoven-surrogate";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    family: Family,
    model: M,
}

pub fn to_json(model: &TrainedSurrogate) -> Result<Vec<u8>> {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        family: model.family(),
        model,
    };
    Ok(serde_json::to_vec(&env)?)
}

pub fn save(model: &TrainedSurrogate, path: &Path) -> Result<()> {
    write_atomic(path, &to_json(model)?)
}

/// Parses a model file, checking the header before the body. With
/// `expected` set, a file of another family is refused.
pub fn from_json(bytes: &[u8], expected: Option<Family>) -> Result<TrainedSurrogate> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if v.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(Error::CorruptModel("missing or unknown format tag".into()));
    }
    let version = v
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::CorruptModel("missing version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let family: Family = v
        .get("family")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::CorruptModel("missing family".into()))?
        .parse()
        .map_err(|_| Error::CorruptModel("unknown family".into()))?;
    if let Some(want) = expected {
        if want != family {
            return Err(Error::FamilyMismatch {
                expected: want.to_string(),
                found: family.to_string(),
            });
        }
    }
    let env: Envelope<TrainedSurrogate> = serde_json::from_value(v).map_err(|e| Error::CorruptModel(e.to_string()))?;
    if env.model.family() != family {
        return Err(Error::CorruptModel("header family disagrees with the body".into()));
    }
    Ok(env.model)
}

pub fn load(path: &Path) -> Result<TrainedSurrogate> {
    from_json(&std::fs::read(path)?, None)
}

pub fn load_family(path: &Path, expected: Family) -> Result<TrainedSurrogate> {
    from_json(&std::fs::read(path)?, Some(expected))
}
