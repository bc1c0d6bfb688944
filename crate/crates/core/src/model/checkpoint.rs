//! Checkpoint container: `MVCCKPT1`, a little-endian `u64` header length, a
//! JSON header, then every tensor (in [`super::Weights::tensors`] order) as
//! little-endian `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ConvChannel, DescEncoderParams, LabelHeads, ModelConfig, ModelKind, ModelParams, Weights,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MVCCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    vocab_checksum: String,
    codes: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// A trained model bound to the vocabulary and label codes it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_checksum: String,
    pub codes: Vec<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.params.weights.tensors();
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.params.config.clone(),
            vocab_checksum: self.vocab_checksum.clone(),
            codes: self.codes.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.weights.n_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(&format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.codes.len() != header.model.n_labels {
            return Err(bad("code list does not match the label count"));
        }
        let mut data = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < 8 * n {
                return Err(bad(&format!("truncated tensor {}", entry.name)));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * n..];
            tensors.push(Tensor::from_vec(&entry.shape, values)?);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        let params = assemble(header.model, tensors)?;
        for ((name, _), entry) in params.weights.tensors().iter().zip(&header.tensors) {
            if *name != entry.name {
                return Err(bad(&format!(
                    "expected tensor {name}, found {}",
                    entry.name
                )));
            }
        }
        Ok(Checkpoint {
            params,
            vocab_checksum: header.vocab_checksum,
            codes: header.codes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn assemble(config: ModelConfig, tensors: Vec<Tensor>) -> Result<ModelParams> {
    config.validate()?;
    let n_channels = config.kernels.len();
    let n_desc = if config.kind == ModelKind::MvcRlda {
        3
    } else {
        0
    };
    if tensors.len() != 1 + 2 * n_channels + 5 + n_desc {
        return Err(Error::Data(format!(
            "checkpoint holds {} tensors",
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().unwrap();
    let embedding = next();
    let channels = (0..n_channels)
        .map(|_| ConvChannel {
            weight: next(),
            bias: next(),
        })
        .collect();
    let heads = LabelHeads {
        attention: next(),
        output: next(),
        output_bias: next(),
        length_weight: next(),
        length_bias: next(),
    };
    let desc = (n_desc > 0).then(|| DescEncoderParams {
        conv: next(),
        dense: next(),
        dense_bias: next(),
    });
    let params = ModelParams {
        config,
        weights: Weights {
            embedding,
            channels,
            heads,
            desc,
        },
    };
    params.check_shapes()?;
    Ok(params)
}
