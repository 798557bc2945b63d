//! Versioned checkpoint container.
//!
//! Layout: the magic bytes `PROTOTS\0`, a little-endian `u32` manifest
//! length, a JSON manifest, then a blob of little-endian `f32` arrays. The
//! manifest holds everything except parameter values and names each array by
//! offset and length (in floats) inside the blob, plus the blob's SHA-256.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Normalizer, VariableSchema};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{ModelConfig, ProtoTsModel};
use crate::prototypes::{NodeId, PrototypeNode, PrototypeTree};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"PROTOTS\0";
pub const FORMAT_VERSION: u32 = 1;

/// A model plus the training configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: ProtoTsModel,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTopology {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub level: usize,
    pub children: Vec<NodeId>,
    pub label: Option<String>,
    pub pattern_locked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub schema: VariableSchema,
    pub normalizer: Normalizer,
    pub roots: Vec<NodeId>,
    pub nodes: Vec<NodeTopology>,
    pub seed_lineage: Vec<u64>,
    pub train_config: Option<TrainConfig>,
    pub arrays: Vec<ArrayEntry>,
    /// Hex SHA-256 of the array blob.
    pub checksum: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

impl ModelCheckpoint {
    pub fn new(model: ProtoTsModel, train_config: Option<TrainConfig>) -> Self {
        Self { model, train_config }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.model;
        let mut blob = Vec::new();
        let mut arrays = Vec::new();
        let mut offset = 0;
        for (name, t) in model.named_params() {
            for &v in t.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            arrays.push(ArrayEntry {
                name,
                offset,
                len: t.len(),
                shape: t.shape().to_vec(),
            });
            offset += t.len();
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            schema: model.schema.clone(),
            normalizer: model.normalizer.clone(),
            roots: model.tree.roots.clone(),
            nodes: model
                .tree
                .nodes
                .iter()
                .map(|n| NodeTopology {
                    id: n.id,
                    parent: n.parent,
                    level: n.level,
                    children: n.children.clone(),
                    label: n.label.clone(),
                    pattern_locked: n.pattern_locked,
                })
                .collect(),
            seed_lineage: model.seed_lineage.clone(),
            train_config: self.train_config.clone(),
            arrays,
            checksum: hex::encode(Sha256::digest(&blob)),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(12 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic or too short)"));
        }
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if mlen > body.len() {
            return Err(corrupt("manifest length exceeds file size"));
        }
        let (mbytes, blob) = body.split_at(mlen);
        let raw: serde_json::Value =
            serde_json::from_slice(mbytes).map_err(|e| corrupt(format!("manifest is not JSON: {e}")))?;
        let version = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("manifest lacks format_version"))?;
        if version > FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: version.min(u32::MAX as u64) as u32,
                supported: FORMAT_VERSION,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| corrupt(format!("malformed manifest: {e}")))?;
        if hex::encode(Sha256::digest(blob)) != manifest.checksum {
            return Err(corrupt("checksum mismatch"));
        }
        if blob.len() % 4 != 0 {
            return Err(corrupt("array blob is not a whole number of f32 values"));
        }
        let floats: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::rebuild(manifest, &floats)
    }

    fn rebuild(m: Manifest, floats: &[f64]) -> Result<Self> {
        let seed = *m.seed_lineage.first().ok_or_else(|| corrupt("empty seed lineage"))?;
        let mut model = ProtoTsModel::init(m.config, m.schema, m.normalizer, seed)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .encoder
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let n_nodes = m.nodes.len();
        let (d, period) = (model.tree.d, model.tree.period);
        let mut wanted = expected;
        wanted.push(("tree.mu".into(), vec![n_nodes, d]));
        wanted.push(("tree.pattern".into(), vec![n_nodes, period]));
        if m.arrays.len() != wanted.len() {
            return Err(corrupt(format!(
                "expected {} arrays, manifest lists {}",
                wanted.len(),
                m.arrays.len()
            )));
        }
        let mut values = Vec::with_capacity(wanted.len());
        for (entry, (name, shape)) in m.arrays.iter().zip(&wanted) {
            if &entry.name != name || &entry.shape != shape || entry.len != shape.iter().product::<usize>() {
                return Err(corrupt(format!("array {} does not match the model layout", entry.name)));
            }
            let data = floats
                .get(entry.offset..entry.offset + entry.len)
                .ok_or_else(|| corrupt(format!("array {} lies outside the blob", entry.name)))?;
            values.push(Tensor::new(shape.clone(), data.to_vec())?);
        }
        let (mu, pat) = (&values[values.len() - 2], &values[values.len() - 1]);
        let nodes = m
            .nodes
            .into_iter()
            .enumerate()
            .map(|(i, n)| PrototypeNode {
                id: n.id,
                parent: n.parent,
                level: n.level,
                mu: mu.row(i).to_vec(),
                pattern: pat.row(i).to_vec(),
                children: n.children,
                label: n.label,
                pattern_locked: n.pattern_locked,
            })
            .collect();
        model.tree = PrototypeTree {
            d,
            period,
            roots: m.roots,
            nodes,
        };
        model.tree.validate().map_err(|e| corrupt(format!("invalid tree: {e}")))?;
        model.set_param_values(&values)?;
        model.seed_lineage = m.seed_lineage;
        Ok(Self {
            model,
            train_config: m.train_config,
        })
    }

    /// Atomic write (temp file in the same directory, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
