//! Flat key-value run configuration (TOML syntax, no tables).
//!
//! Every key is optional; unknown keys and wrongly typed values are schema
//! errors that name the offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::membank::{BankConfig, RetrievalMode};
use crate::model::{ModelConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Tiles produced by `genmap`.
    pub count: usize,
    /// Side length of generated tiles.
    pub size: usize,
    /// Instances per generated tile.
    pub instances: usize,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of the dataset held out for checkpoint selection.
    pub val_fraction: f64,
    pub link_iou: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 10,
            size: 128,
            instances: 5,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.2,
            link_iou: crate::linker::DEFAULT_LINK_IOU,
        }
    }
}

/// Recognized keys with their type, for messages and documentation.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "integer"),
    ("count", "integer"),
    ("size", "integer"),
    ("instances", "integer"),
    ("shift_range", "integer"),
    ("appear_min", "integer"),
    ("appear_max", "integer"),
    ("disappear_min", "integer"),
    ("disappear_max", "integer"),
    ("merge_min", "integer"),
    ("merge_max", "integer"),
    ("rect_min", "integer"),
    ("rect_max", "integer"),
    ("max_dilate_iters", "integer"),
    ("input_size", "integer"),
    ("patch", "integer"),
    ("d_model", "integer"),
    ("n_enc_blocks", "integer"),
    ("n_mem_blocks", "integer"),
    ("n_dec_blocks", "integer"),
    ("n_heads", "integer"),
    ("lora_rank", "integer"),
    ("n_query_tokens", "integer"),
    ("mlp_ratio", "integer"),
    ("epochs", "integer"),
    ("lr", "float"),
    ("weight_decay", "float"),
    ("use_memory", "boolean"),
    ("val_fraction", "float"),
    ("bank_capacity", "integer"),
    ("retrieve_k", "integer"),
    ("conf_threshold", "float"),
    ("retrieval", "string"),
    ("link_iou", "float"),
];

struct Reader<'a> {
    source: &'a str,
}

impl Reader<'_> {
    fn err(&self, key: &str, message: impl std::fmt::Display) -> Error {
        Error::Schema {
            source_name: self.source.to_string(),
            message: format!("field `{key}`: {message}"),
        }
    }

    fn uint(&self, key: &str, v: &toml::Value) -> Result<u64> {
        match v {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            toml::Value::Integer(i) => Err(self.err(key, format!("must be nonnegative, got {i}"))),
            other => Err(self.err(key, format!("expected integer, found {}", other.type_str()))),
        }
    }

    fn usize(&self, key: &str, v: &toml::Value) -> Result<usize> {
        self.uint(key, v).map(|u| u as usize)
    }

    fn float(&self, key: &str, v: &toml::Value) -> Result<f64> {
        match v {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            other => Err(self.err(key, format!("expected float, found {}", other.type_str()))),
        }
    }

    fn boolean(&self, key: &str, v: &toml::Value) -> Result<bool> {
        v.as_bool()
            .ok_or_else(|| self.err(key, format!("expected boolean, found {}", v.type_str())))
    }

    fn string<'v>(&self, key: &str, v: &'v toml::Value) -> Result<&'v str> {
        v.as_str()
            .ok_or_else(|| self.err(key, format!("expected string, found {}", v.type_str())))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, source: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let column = s.start - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                    (line, column)
                })
                .unwrap_or((0, 0));
            Error::Parse {
                source_name: source.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let r = Reader { source };
        let mut c = RunConfig::default();
        for (key, v) in &table {
            let k = key.as_str();
            match k {
                "seed" => c.seed = r.uint(k, v)?,
                "count" => c.count = r.usize(k, v)?,
                "size" => c.size = r.usize(k, v)?,
                "instances" => c.instances = r.usize(k, v)?,
                "shift_range" => c.synth.shift_range = r.usize(k, v)?,
                "appear_min" => c.synth.appear_count_range.0 = r.usize(k, v)?,
                "appear_max" => c.synth.appear_count_range.1 = r.usize(k, v)?,
                "disappear_min" => c.synth.disappear_count_range.0 = r.usize(k, v)?,
                "disappear_max" => c.synth.disappear_count_range.1 = r.usize(k, v)?,
                "merge_min" => c.synth.merge_count_range.0 = r.usize(k, v)?,
                "merge_max" => c.synth.merge_count_range.1 = r.usize(k, v)?,
                "rect_min" => c.synth.rect_size_range.0 = r.usize(k, v)?,
                "rect_max" => c.synth.rect_size_range.1 = r.usize(k, v)?,
                "max_dilate_iters" => c.synth.max_dilate_iters = r.usize(k, v)?,
                "input_size" => c.model.input_size = r.usize(k, v)?,
                "patch" => c.model.patch = r.usize(k, v)?,
                "d_model" => c.model.d_model = r.usize(k, v)?,
                "n_enc_blocks" => c.model.n_enc_blocks = r.usize(k, v)?,
                "n_mem_blocks" => c.model.n_mem_blocks = r.usize(k, v)?,
                "n_dec_blocks" => c.model.n_dec_blocks = r.usize(k, v)?,
                "n_heads" => c.model.n_heads = r.usize(k, v)?,
                "lora_rank" => c.model.lora_rank = r.usize(k, v)?,
                "n_query_tokens" => c.model.n_query_tokens = r.usize(k, v)?,
                "mlp_ratio" => c.model.mlp_ratio = r.usize(k, v)?,
                "epochs" => c.train.epochs = r.usize(k, v)?,
                "lr" => c.train.lr = r.float(k, v)?,
                "weight_decay" => c.train.weight_decay = r.float(k, v)?,
                "use_memory" => c.train.use_memory = r.boolean(k, v)?,
                "val_fraction" => c.val_fraction = r.float(k, v)?,
                "bank_capacity" => c.train.bank.capacity = r.usize(k, v)?,
                "retrieve_k" => c.train.bank.retrieve_k = r.usize(k, v)?,
                "conf_threshold" => c.train.bank.conf_threshold = r.float(k, v)?,
                "retrieval" => {
                    c.train.bank.retrieval = match r.string(k, v)? {
                        "weighted_sample" => RetrievalMode::WeightedSample,
                        "top_k" => RetrievalMode::TopK,
                        "recent_k" => RetrievalMode::RecentK,
                        other => return Err(r.err(k, format!("unknown retrieval mode {other:?}"))),
                    }
                }
                "link_iou" => c.link_iou = r.float(k, v)?,
                _ => {
                    if v.is_table() {
                        return Err(r.err(k, "tables are not allowed; use flat keys"));
                    }
                    return Err(r.err(k, "unknown key"));
                }
            }
        }
        c.validate(source)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self, source: &str) -> Result<()> {
        let r = Reader { source };
        let unit = |k: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(r.err(k, format!("must lie in [0, 1], got {v}")))
            }
        };
        unit("val_fraction", self.val_fraction)?;
        unit("conf_threshold", self.train.bank.conf_threshold)?;
        unit("link_iou", self.link_iou)?;
        if !(self.train.lr > 0.0) {
            return Err(r.err("lr", "must be positive"));
        }
        if !(self.train.weight_decay >= 0.0) {
            return Err(r.err("weight_decay", "must be nonnegative"));
        }
        if self.train.bank.capacity == 0 {
            return Err(r.err("bank_capacity", "must be at least 1"));
        }
        if self.train.bank.retrieve_k == 0 {
            return Err(r.err("retrieve_k", "must be at least 1"));
        }
        if self.size == 0 {
            return Err(r.err("size", "must be positive"));
        }
        self.synth.validate().map_err(|e| Error::Schema {
            source_name: source.to_string(),
            message: e.to_string(),
        })?;
        self.model.validate().map_err(|e| Error::Schema {
            source_name: source.to_string(),
            message: e.to_string(),
        })
    }

    pub fn bank(&self) -> &BankConfig {
        &self.train.bank
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            init_seed: self.seed,
            ..self.model.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::from_toml_str("", "t").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let text: String = KEYS
            .iter()
            .map(|(k, ty)| {
                let v = match (*k, *ty) {
                    ("retrieval", _) => "\"top_k\"".to_string(),
                    (_, "boolean") => "false".into(),
                    ("input_size", _) => "64".into(),
                    ("patch", _) => "8".into(),
                    ("appear_max" | "disappear_max" | "merge_max", _) => "2".into(),
                    ("rect_max", _) => "9".into(),
                    ("rect_min", _) => "3".into(),
                    (_, "float") => "0.5".into(),
                    ("n_heads", _) => "4".into(),
                    ("d_model", _) => "16".into(),
                    ("lora_rank", _) => "2".into(),
                    _ => "1".into(),
                };
                format!("{k} = {v}\n")
            })
            .collect();
        let c = RunConfig::from_toml_str(&text, "t").unwrap();
        assert_eq!(c.model.input_size, 64);
        assert_eq!(c.train.bank.retrieval, RetrievalMode::TopK);
        assert!(!c.train.use_memory);
        assert_eq!(c.synth.rect_size_range, (3, 9));
    }

    #[test]
    fn schema_errors_name_fields() {
        let msg = |t: &str| RunConfig::from_toml_str(t, "cfg.toml").unwrap_err().to_string();
        assert!(msg("lr = \"fast\"").contains("`lr`"));
        assert!(msg("bogus = 1").contains("`bogus`"));
        assert!(msg("epochs = -3").contains("`epochs`"));
        assert!(msg("[train]\nepochs = 3").contains("flat"));
        assert!(msg("conf_threshold = 1.5").contains("conf_threshold"));
        assert!(msg("retrieval = \"random\"").contains("retrieval"));
        assert!(msg("patch = 7").contains("patch"));
        let e = RunConfig::from_toml_str("seed = 1\nlr = = 2", "cfg.toml").unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }
}
