//! Named parameter tensors with a frozen/trainable census.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Parameter family; decides whether a tensor is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Patch embedding of the image encoder.
    PatchEmbed,
    /// Base weights of the image encoder, including the frozen W, b of adapted projections.
    EncoderBase,
    /// Low-rank adapter factors A, B.
    Lora,
    /// Corner-type embeddings of the box prompt encoder.
    PromptEncoder,
    MemoryAttention,
    MemoryEncoder,
    Decoder,
    QueryTokens,
    MaskHead,
    IouHead,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::PatchEmbed,
        Family::EncoderBase,
        Family::Lora,
        Family::PromptEncoder,
        Family::MemoryAttention,
        Family::MemoryEncoder,
        Family::Decoder,
        Family::QueryTokens,
        Family::MaskHead,
        Family::IouHead,
    ];

    pub fn is_frozen(self) -> bool {
        matches!(self, Family::PatchEmbed | Family::EncoderBase | Family::PromptEncoder)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub family: Family,
    pub value: Tensor,
}

impl ParamTensor {
    pub fn frozen(&self) -> bool {
        self.family.is_frozen()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    by_name: BTreeMap<String, ParamId>,
}

/// Counts of tensors and scalars per partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub frozen_tensors: usize,
    pub trainable_tensors: usize,
    pub frozen_scalars: usize,
    pub trainable_scalars: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, family: Family, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.tensors.push(ParamTensor { name, family, value });
        id
    }

    pub fn add_normal<R: Rng>(&mut self, name: &str, family: Family, rows: usize, cols: usize, std: f64, rng: &mut R) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.add(name, family, Tensor { rows, cols, data })
    }

    pub fn add_const(&mut self, name: &str, family: Family, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, family, Tensor { rows, cols, data: vec![v; rows * cols] })
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, t)| !t.frozen()).map(|(id, _)| id).collect()
    }

    pub fn frozen_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, t)| t.frozen()).map(|(id, _)| id).collect()
    }

    pub fn census(&self) -> Census {
        let mut c = Census {
            frozen_tensors: 0,
            trainable_tensors: 0,
            frozen_scalars: 0,
            trainable_scalars: 0,
        };
        for t in &self.tensors {
            if t.frozen() {
                c.frozen_tensors += 1;
                c.frozen_scalars += t.value.len();
            } else {
                c.trainable_tensors += 1;
                c.trainable_scalars += t.value.len();
            }
        }
        c
    }
}
