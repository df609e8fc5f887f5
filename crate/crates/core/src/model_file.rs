//! Versioned text record for trained models.
//!
//! One JSON object per file:
//! `{"version":1,"d":3,"theta":[...],"lambda":0.1,"c_fn":"linear","m":3}`.
//! Unknown fields are rejected. Floats are written in shortest round-trip form,
//! so serializing and parsing reproduces the parameters bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ModelParams;

pub const MODEL_VERSION: u32 = 1;

/// Position schedule the model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CFn {
    /// `c(j) = M − j`, used by ranking models.
    Linear,
    /// Generic matching models with no position schedule.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub d: usize,
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub c_fn: CFn,
    pub m: Option<usize>,
}

impl ModelFile {
    pub fn new(params: &ModelParams, c_fn: CFn, m: Option<usize>) -> Self {
        ModelFile {
            version: MODEL_VERSION,
            d: params.d(),
            theta: params.theta().to_vec(),
            lambda: params.lambda(),
            c_fn,
            m,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.theta.clone(), self.lambda)
    }
}

/// Renders the model record, newline-terminated.
pub fn serialize_model(params: &ModelParams, c_fn: CFn, m: Option<usize>) -> String {
    let record = ModelFile::new(params, c_fn, m);
    let mut out = serde_json::to_string(&record).expect("model record is always serializable");
    out.push('\n');
    out
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let record: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    if record.version != MODEL_VERSION {
        return Err(Error::parse(
            1,
            format!(
                "field `version`: unsupported model version {} (expected {MODEL_VERSION})",
                record.version
            ),
        ));
    }
    if record.theta.len() != record.d {
        return Err(Error::parse(
            1,
            format!(
                "field `theta`: {} values but `d` is {}",
                record.theta.len(),
                record.d
            ),
        ));
    }
    record
        .params()
        .map_err(|e| Error::parse(1, format!("field `theta`/`lambda`: {e}")))?;
    Ok(record)
}
