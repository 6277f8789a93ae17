//! Checkpoint container.
//!
//! A JSON document:
//!
//! ```text
//! { "format": "mapsam2-checkpoint", "version": 1,
//!   "config": { ModelConfig fields },
//!   "census": { frozen_tensors, trainable_tensors, frozen_scalars, trainable_scalars },
//!   "tensors": [ { "name", "family", "rows", "cols", "data" } ] }
//! ```
//!
//! `data` is the concatenation of each value's IEEE-754 bit pattern as 16
//! lowercase hex digits, row-major, so a round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Model;
use super::params::{Census, Family};
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mapsam2-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    family: Family,
    rows: usize,
    cols: usize,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    census: Census,
    tensors: Vec<TensorRecord>,
}

fn encode(data: &[f64]) -> String {
    let mut s = String::with_capacity(data.len() * 16);
    for v in data {
        write!(s, "{:016x}", v.to_bits()).expect("writing to a String");
    }
    s
}

fn decode(name: &str, s: &str, n: usize) -> Result<Vec<f64>> {
    if s.len() != n * 16 || !s.is_ascii() {
        return Err(Error::Checkpoint(format!("tensor {name}: expected {n} values")));
    }
    (0..n)
        .map(|i| {
            u64::from_str_radix(&s[i * 16..(i + 1) * 16], 16)
                .map(f64::from_bits)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))
        })
        .collect()
}

pub fn checkpoint_json(model: &Model) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        census: model.params().census(),
        tensors: model
            .params()
            .iter()
            .map(|(_, p)| TensorRecord {
                name: p.name.clone(),
                family: p.family,
                rows: p.value.rows,
                cols: p.value.cols,
                data: encode(&p.value.data),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

pub fn checkpoint_from_json(text: &str) -> Result<Model> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    let mut model = Model::new(file.config)?;
    if file.tensors.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            model.params().len(),
            file.tensors.len()
        )));
    }
    for rec in &file.tensors {
        let id = model
            .params()
            .id(&rec.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", rec.name)))?;
        let p = model.params().get(id);
        if p.family != rec.family || p.value.shape() != (rec.rows, rec.cols) {
            return Err(Error::Checkpoint(format!("tensor {} has wrong family or shape", rec.name)));
        }
        let data = decode(&rec.name, &rec.data, rec.rows * rec.cols)?;
        model.params_mut().value_mut(id).data = data;
    }
    if model.params().census() != file.census {
        return Err(Error::Checkpoint("census does not match tensors".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let mut m = Model::new(ModelConfig {
            input_size: 32,
            patch: 8,
            d_model: 16,
            n_heads: 2,
            lora_rank: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        let id = m.params().trainable_ids()[0];
        m.params_mut().value_mut(id).data[0] = -0.0;
        m.params_mut().value_mut(id).data[1] = 1.0 / 3.0;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        for ((_, a), (_, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &crate::model::Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn rejects_bad_files() {
        let m = model();
        let json = checkpoint_json(&m);
        assert!(matches!(checkpoint_from_json("{"), Err(Error::Checkpoint(_))));
        let wrong_version = json.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(checkpoint_from_json(&wrong_version), Err(Error::Checkpoint(_))));
        let truncated = json.replacen("\"data\": \"", "\"data\": \"00", 1);
        assert!(matches!(checkpoint_from_json(&truncated), Err(Error::Checkpoint(_))));
        assert!(matches!(load_checkpoint(Path::new("/nonexistent/ck.json")), Err(Error::MissingFile(_))));
    }
}
