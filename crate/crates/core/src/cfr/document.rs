//! JSON model document.
//!
//! Reals are written in shortest round-trip decimal form and parsed back
//! exactly, so a reloaded model predicts bit-identically.

use serde::{Deserialize, Serialize};

use super::model::CFracModel;
use crate::error::{Error, Result};

pub const FORMAT: &str = "spline-cfr/1";

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    #[serde(flatten)]
    model: CFracModel,
}

pub fn to_json(model: &CFracModel) -> Result<String> {
    let doc = Document {
        format: FORMAT.to_string(),
        model: model.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Numeric(e.to_string()))
}

pub fn from_json(text: &str) -> Result<CFracModel> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.format != FORMAT {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("unsupported format '{}', expected '{FORMAT}'", doc.format),
        });
    }
    doc.model.validate()?;
    Ok(doc.model)
}
