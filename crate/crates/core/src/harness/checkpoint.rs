use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::ParamStore;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::model::Model;

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "weights.f32";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: RunConfig,
    tensors: Vec<TensorEntry>,
}

/// Trained parameters plus the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub store: ParamStore<f32>,
}

fn ckpt_err(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

impl Checkpoint {
    pub fn new(config: RunConfig, store: ParamStore<f32>) -> Self {
        Checkpoint { config, store }
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(&self.config.model)
    }

    /// Manifest JSON and little-endian blob, as written by [`save`].
    ///
    /// [`save`]: Checkpoint::save
    pub fn encode(&self) -> (String, Vec<u8>) {
        let mut blob = Vec::with_capacity(self.store.count() * 4);
        let mut tensors = Vec::with_capacity(self.store.len());
        for (_, p) in self.store.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                dtype: "f32".into(),
                offset: blob.len() as u64,
            });
            for v in p.tensor.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            config: self.config.clone(),
            tensors,
        };
        (serde_json::to_string_pretty(&manifest).expect("manifest serializes"), blob)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (manifest, blob) = self.encode();
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::write(dir.join(BLOB_FILE), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let blob = fs::read(dir.join(BLOB_FILE))?;
        Checkpoint::decode(&text, &blob)
    }

    pub fn decode(manifest: &str, blob: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_str(manifest).map_err(|e| ckpt_err(format!("bad manifest: {e}")))?;
        m.config.validate()?;
        let model = Model::new(&m.config.model)?;
        let mut store = model.init_params::<f32>(m.config.seed)?;
        let mut seen = vec![false; store.len()];
        for e in &m.tensors {
            if e.dtype != "f32" {
                return Err(ckpt_err(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let id = store.id(&e.name).map_err(|_| ckpt_err(format!("{} is not a parameter of this model", e.name)))?;
            let want = store.get(id).tensor.shape().to_vec();
            if want != e.shape {
                return Err(ckpt_err(format!("{}: shape {:?} does not match model shape {want:?}", e.name, e.shape)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let bytes = blob
                .get(start..start + 4 * n)
                .ok_or_else(|| ckpt_err(format!("{}: blob too short", e.name)))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.get_mut(id).tensor = Tensor::new(e.shape.clone(), data)?.with_grad();
            seen[id.index()] = true;
        }
        if let Some((_, p)) = store.iter().zip(&seen).find(|(_, &s)| !s).map(|(p, _)| p) {
            return Err(ckpt_err(format!("checkpoint lacks {}", p.name)));
        }
        Ok(Checkpoint {
            config: m.config,
            store,
        })
    }
}
