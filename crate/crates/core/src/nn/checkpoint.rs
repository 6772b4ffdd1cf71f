//! `model.json` (header) + `model.bin` (little-endian f32 weights) in one directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NnError, ParamSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    architecture: ModelConfig,
    dtype: String,
    num_params: usize,
    parameters: Vec<ParamSpec>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn save_checkpoint(model: &Model<f32>, dir: &Path) -> Result<(), NnError> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        architecture: model.config().clone(),
        dtype: "f32-le".into(),
        num_params: model.num_params(),
        parameters: model.specs().to_vec(),
    };
    let blob: Vec<u8> = model.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let bin = dir.join("model.bin");
    crate::io::write_atomic(&bin, &blob).map_err(io_err(&bin))?;
    let json = dir.join("model.json");
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    crate::io::write_atomic(&json, text.as_bytes()).map_err(io_err(&json))
}

pub fn load_checkpoint(dir: &Path) -> Result<Model<f32>, NnError> {
    let json = dir.join("model.json");
    let text = fs::read_to_string(&json).map_err(io_err(&json))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| NnError::Checkpoint {
        field: "header",
        detail: e.to_string(),
    })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint {
            field: "version",
            detail: format!("expected {CHECKPOINT_VERSION}, found {}", header.version),
        });
    }
    if header.dtype != "f32-le" {
        return Err(NnError::Checkpoint {
            field: "dtype",
            detail: format!("expected f32-le, found {}", header.dtype),
        });
    }
    let mut model = Model::<f32>::zeros(header.architecture)?;
    if header.parameters != model.specs() || header.num_params != model.num_params() {
        return Err(NnError::Checkpoint {
            field: "shape",
            detail: "parameter table does not match the architecture".into(),
        });
    }
    let bin = dir.join("model.bin");
    let blob = fs::read(&bin).map_err(io_err(&bin))?;
    if blob.len() != 4 * model.num_params() {
        return Err(NnError::Checkpoint {
            field: "shape",
            detail: format!(
                "blob holds {} bytes, architecture needs {}",
                blob.len(),
                4 * model.num_params()
            ),
        });
    }
    for (p, b) in model.params.iter_mut().zip(blob.chunks_exact(4)) {
        *p = f32::from_le_bytes(b.try_into().expect("four bytes"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, Tensor};

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: [8, 12],
            block_channels: vec![3],
            convs_per_block: vec![2],
            dense_sizes: vec![5],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::<f32>::new(cfg(), 17).unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(
            m.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            back.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
        let x = Tensor::new(vec![1, 1, 8, 12], (0..96).map(|i| i as f32 / 96.0).collect()).unwrap();
        assert_eq!(
            forward(&m, &x).unwrap()[0].to_bits(),
            forward(&back, &x).unwrap()[0].to_bits()
        );
    }

    #[test]
    fn truncated_blob_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&Model::<f32>::new(cfg(), 1).unwrap(), dir.path()).unwrap();
        let bin = dir.path().join("model.bin");
        let mut blob = fs::read(&bin).unwrap();
        blob.truncate(blob.len() - 4);
        fs::write(&bin, blob).unwrap();
        match load_checkpoint(dir.path()) {
            Err(NnError::Checkpoint { field, .. }) => assert_eq!(field, "shape"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&Model::<f32>::new(cfg(), 1).unwrap(), dir.path()).unwrap();
        let json = dir.path().join("model.json");
        let text = fs::read_to_string(&json).unwrap().replace("\"version\": 1", "\"version\": 99");
        fs::write(&json, text).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, NnError::Checkpoint { field: "version", .. }), "{err}");
    }
}
