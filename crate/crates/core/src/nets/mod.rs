//! The two-layer ReLU network used by the theory harness and the text
//! classifier used for explanations, with closed-form input gradients and
//! JSON checkpoints.
//!
//! Checkpoints are JSON documents tagged with `format` and `version`.
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle is bit-exact.

mod text;
mod two_layer;

pub use text::{
    BagOfWords, Embedding, TextCache, TextClassifier, TextClassifierParts, WordGradients, PAD_ID,
};
pub use two_layer::{ActiveSet, TwoLayerNet};

use std::path::Path;
use std::sync::Arc;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat;

pub const CHECKPOINT_VERSION: u32 = 1;

const TEXT_FORMAT: &str = "onmanifold.text_classifier";
const EMBEDDING_FORMAT: &str = "onmanifold.embedding";
const TWO_LAYER_FORMAT: &str = "onmanifold.two_layer";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct TextCheckpoint {
    format: String,
    version: u32,
    vocab_size: usize,
    embedding_dim: usize,
    hidden_width: usize,
    #[serde(flatten)]
    parts: TextClassifierParts,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingCheckpoint {
    format: String,
    version: u32,
    id: String,
    vocab_size: usize,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TwoLayerCheckpoint {
    format: String,
    version: u32,
    input_dim: usize,
    width: usize,
    weights: Vec<f64>,
    output_weights: Vec<f64>,
}

fn check_header(json: &str, format: &str) -> Result<()> {
    let h: Header = serde_json::from_str(json)
        .map_err(|e| Error::Checkpoint(format!("missing format/version header: {e}")))?;
    if h.format != format {
        return Err(Error::Checkpoint(format!(
            "expected format {format:?}, found {:?}",
            h.format
        )));
    }
    if h.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{format} version {} not supported (this build reads version {CHECKPOINT_VERSION})",
            h.version
        )));
    }
    Ok(())
}

fn parse<T: DeserializeOwned>(json: &str, format: &str) -> Result<T> {
    check_header(json, format)?;
    serde_json::from_str(json).map_err(|e| Error::Checkpoint(format!("{format}: {e}")))
}

pub fn text_classifier_to_json(clf: &TextClassifier) -> Result<String> {
    let ck = TextCheckpoint {
        format: TEXT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        vocab_size: clf.embedding().vocab_size(),
        embedding_dim: clf.embedding_dim(),
        hidden_width: clf.hidden_width(),
        parts: clf.to_parts(),
    };
    Ok(serde_json::to_string_pretty(&ck)?)
}

/// The embedding must carry the id recorded in the checkpoint.
pub fn text_classifier_from_json(json: &str, embedding: Arc<Embedding>) -> Result<TextClassifier> {
    let ck: TextCheckpoint = parse(json, TEXT_FORMAT)?;
    if ck.vocab_size != embedding.vocab_size() || ck.embedding_dim != embedding.dim() {
        return Err(Error::Checkpoint(format!(
            "classifier expects a {}x{} embedding, got {}x{}",
            ck.vocab_size,
            ck.embedding_dim,
            embedding.vocab_size(),
            embedding.dim()
        )));
    }
    if ck.hidden_width != ck.parts.output.len() {
        return Err(Error::Checkpoint(format!(
            "hidden_width {} disagrees with {} output weights",
            ck.hidden_width,
            ck.parts.output.len()
        )));
    }
    TextClassifier::from_parts(ck.parts, embedding)
}

pub fn embedding_to_json(e: &Embedding) -> Result<String> {
    let ck = EmbeddingCheckpoint {
        format: EMBEDDING_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        id: e.id().to_string(),
        vocab_size: e.vocab_size(),
        dim: e.dim(),
        values: e.table().as_slice().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&ck)?)
}

pub fn embedding_from_json(json: &str) -> Result<Embedding> {
    let ck: EmbeddingCheckpoint = parse(json, EMBEDDING_FORMAT)?;
    let table = Mat::from_vec(ck.vocab_size, ck.dim, ck.values)
        .map_err(|e| Error::Checkpoint(format!("embedding table: {e}")))?;
    Embedding::new(ck.id, table)
}

pub fn two_layer_to_json(net: &TwoLayerNet) -> Result<String> {
    let ck = TwoLayerCheckpoint {
        format: TWO_LAYER_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        input_dim: net.input_dim(),
        width: net.width(),
        weights: net.weights().as_slice().to_vec(),
        output_weights: net.output_weights().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&ck)?)
}

pub fn two_layer_from_json(json: &str) -> Result<TwoLayerNet> {
    let ck: TwoLayerCheckpoint = parse(json, TWO_LAYER_FORMAT)?;
    let w = Mat::from_vec(ck.width, ck.input_dim, ck.weights)
        .map_err(|e| Error::Checkpoint(format!("two-layer weights: {e}")))?;
    TwoLayerNet::from_parts(w, ck.output_weights)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_text_classifier(path: &Path, clf: &TextClassifier) -> Result<()> {
    write_text(path, &text_classifier_to_json(clf)?)
}

pub fn load_text_classifier(path: &Path, embedding: Arc<Embedding>) -> Result<TextClassifier> {
    text_classifier_from_json(&read_text(path)?, embedding)
}

pub fn save_embedding(path: &Path, e: &Embedding) -> Result<()> {
    write_text(path, &embedding_to_json(e)?)
}

pub fn load_embedding(path: &Path) -> Result<Embedding> {
    embedding_from_json(&read_text(path)?)
}
