//! Single-file model checkpoints.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic "MFSNNCK1"
//! bytes 8..16   manifest length, little-endian u64
//! ...           manifest JSON (model spec + named parameter entries)
//! ...           one little-endian f64 blob per parameter, row-major,
//!               concatenated in manifest order
//! ```
//!
//! Save followed by load followed by save reproduces the file byte for
//! byte; the loader rejects files whose length disagrees with the
//! manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor as TensorG;
use crate::Tensor;

const MAGIC: &[u8; 8] = b"MFSNNCK1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(flatten)]
    spec: ModelSpec,
    params: Vec<ParamEntry>,
}

/// Write `bytes` to `path` via a temporary file and an atomic rename, so a
/// failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize a model to checkpoint bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let named = model.named_params();
    let manifest = Manifest {
        format_version: 1,
        spec: model.spec(),
        params: named
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let blob_len: usize = named.iter().map(|(_, t)| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + blob_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

/// Rebuild a model from checkpoint bytes, validating the layout against
/// the declared spec.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let blob_start = 16 + manifest_len;
    if bytes.len() < blob_start {
        return Err(Error::Format("truncated checkpoint manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..blob_start])?;
    if manifest.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }

    let mut model = manifest.spec.build(0)?;
    let expected = model.named_params();
    if expected.len() != manifest.params.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} parameters, model needs {}",
            manifest.params.len(),
            expected.len()
        )));
    }

    let declared_blob: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>() * 8)
        .sum();
    if bytes.len() != blob_start + declared_blob {
        return Err(Error::Format(format!(
            "checkpoint length {} disagrees with manifest ({} expected)",
            bytes.len(),
            blob_start + declared_blob
        )));
    }

    let mut offset = blob_start;
    let mut values: Vec<Tensor> = Vec::with_capacity(expected.len());
    for (entry, (name, tmpl)) in manifest.params.iter().zip(&expected) {
        if &entry.name != name || entry.shape != tmpl.shape() {
            return Err(Error::Format(format!(
                "parameter '{}' {:?} does not match expected '{}' {:?}",
                entry.name,
                entry.shape,
                name,
                tmpl.shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
            offset += 8;
        }
        values.push(TensorG::param(&entry.shape, data)?);
    }
    model.set_params(values)?;
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::{MfsnnModel, MlpConfig, MlpModel, ModelConfig};
    use crate::LifParams;

    fn tiny_model() -> Model {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                n_channels: 8,
                n_subencoders: 2,
                t_in: 10,
                t_out: 5,
                kernel_size: 3,
                dilation: 2,
                bottleneck_ratio: 4,
            },
            lif: LifParams::default(),
            n_classes: 4,
            share_lt: true,
            ablation: Default::default(),
        };
        Model::Mfsnn(MfsnnModel::init(cfg, 11).unwrap())
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = tiny_model();
        let bytes = to_bytes(&model).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        let again = to_bytes(&loaded).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn loaded_model_behaves_identically() {
        let model = tiny_model();
        let loaded = from_bytes(&to_bytes(&model).unwrap()).unwrap();
        let batch = Tensor::full(&[2, 8, 10], 1.5);
        assert_eq!(
            model.forward(&batch).unwrap().data(),
            loaded.forward(&batch).unwrap().data()
        );
    }

    #[test]
    fn mlp_round_trip() {
        let mlp = Model::Mlp(
            MlpModel::init(
                MlpConfig {
                    n_channels: 8,
                    t_in: 10,
                    hidden: vec![16],
                    n_classes: 4,
                },
                3,
            )
            .unwrap(),
        );
        let bytes = to_bytes(&mlp).unwrap();
        assert_eq!(to_bytes(&from_bytes(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut bytes = to_bytes(&tiny_model()).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(from_bytes(&bytes).is_err());
        assert!(from_bytes(b"garbage").is_err());
    }
}
