//! `model.cbm`: a CBV1 block holding `E_C` (ids = concept ids), a CBV1 block holding `W`
//! (N = |Y| rows, d = |C|, ids = class names), then a `u32` little-endian byte length and a
//! JSON trailer with the remaining metadata.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BottleneckModel, TrainConfig};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ModelTrailer {
    class_names: Vec<String>,
    concept_ids: Vec<String>,
    concept_texts: Vec<String>,
    memberships: Vec<BTreeSet<usize>>,
    train_config: Option<TrainConfig>,
}

impl BottleneckModel {
    /// Serializes the model. `W` is stored as `f32`.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.concept_embeddings.encode_into(&mut out);
        let w: Vec<f32> = self.weights.iter().map(|&v| v as f32).collect();
        EmbeddingMatrix::new(self.num_concepts(), w, self.class_names.clone())?
            .encode_into(&mut out);
        let trailer = serde_json::to_vec(&ModelTrailer {
            class_names: self.class_names.clone(),
            concept_ids: self.concept_ids().to_vec(),
            concept_texts: self.concept_texts.clone(),
            memberships: self.memberships.clone(),
            train_config: self.train_config.clone(),
        })
        .map_err(|e| Error::Format(format!("cannot serialize model metadata: {e}")))?;
        out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        out.extend_from_slice(&trailer);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (e_c, used) = EmbeddingMatrix::decode_block(bytes)?;
        let rest = &bytes[used..];
        let (w, used) = EmbeddingMatrix::decode_block(rest)?;
        let rest = &rest[used..];
        if rest.len() < 4 {
            return Err(Error::Format("model file is missing its metadata trailer".into()));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        if rest.len() != 4 + len {
            return Err(Error::Format(format!(
                "metadata trailer declares {len} bytes, {} present",
                rest.len() - 4
            )));
        }
        let meta: ModelTrailer = serde_json::from_slice(&rest[4..])
            .map_err(|e| Error::Format(format!("invalid model metadata: {e}")))?;
        if meta.concept_ids != e_c.ids() {
            return Err(Error::Format(
                "metadata concept ids disagree with the concept embedding block".into(),
            ));
        }
        if meta.class_names != w.ids() || w.dim() != e_c.rows() {
            return Err(Error::Format(format!(
                "weight block is {}x{}, expected {}x{} labeled by class name",
                w.rows(),
                w.dim(),
                meta.class_names.len(),
                e_c.rows()
            )));
        }
        let weights = ndarray::Array2::from_shape_vec(
            (w.rows(), w.dim()),
            w.as_slice().iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked above");
        Self::from_parts(
            e_c,
            weights,
            meta.class_names,
            meta.concept_texts,
            meta.memberships,
            meta.train_config,
        )
        .map_err(|e| Error::Format(format!("inconsistent model file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
