//! Truncated-SVD compression of toy forecasters, the layer-dependent rank
//! schedule, and a finite-difference training loop for factored models.
//!
//! Models are saved as JSON documents:
//!
//! ```json
//! { "schema": "lowrank-toy-model", "version": 1, "model": { ... } }
//! ```
//!
//! Matrices are `{"rows": r, "cols": c, "data": [...]}` in row-major order.
//! Floats are written in shortest round-trip decimal form and parsed with
//! correct rounding, so a save/load cycle is bit-exact.

mod model;
mod schedule;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use model::{
    build_factored, compress_model, factor_exactly, probe_batch, size_ratio, AttentionMatrix, CompressionReport,
    ToyDims, ToyLayer, ToyModel,
};
pub use schedule::{rank_at, RankSchedule};
pub use train::{
    mse, rank_two_dataset, sinusoid_dataset, train_toy, Dataset, TrainOutcome, DIVERGENCE_FACTOR, MAX_TRAINABLE,
};

use crate::error::{Error, Result};

pub const MODEL_SCHEMA: &str = "lowrank-toy-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema: String,
    version: u32,
    model: ToyModel,
}

pub fn model_to_json(m: &ToyModel) -> Result<String> {
    let doc = ModelDocument { schema: MODEL_SCHEMA.into(), version: MODEL_VERSION, model: m.clone() };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<ToyModel> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if doc.schema != MODEL_SCHEMA {
        return Err(Error::Format(format!("unknown schema {:?}", doc.schema)));
    }
    if doc.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", doc.version)));
    }
    doc.model.validate()?;
    Ok(doc.model)
}

pub fn save_model(m: &ToyModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(m)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ToyModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
