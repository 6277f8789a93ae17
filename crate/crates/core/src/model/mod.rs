//! Toy-scale memory-attention segmentation network.
//!
//! A frozen patch encoder with low-rank adapters on its query/value
//! projections, memory attention over stored frame features, a box prompt
//! encoder, and a two-way mask decoder with learned default query tokens and an
//! IoU confidence head. All arithmetic is f64 and recorded on a [`Graph`] so
//! the same code serves inference, training and gradient checking.

mod checkpoint;
mod graph;
mod gradcheck;
mod network;
mod optim;
mod params;
mod pipeline;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_from_json, checkpoint_json, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use graph::{sigmoid, Graph, NodeId};
pub use gradcheck::{grad_check, rel_error, GradCheckReport, GradCheckSettings, ProbedScalar};
pub use network::{positional_encoding, Decoded, Model};
pub use optim::AdamW;
pub use params::{Census, Family, ParamId, ParamStore, ParamTensor};
pub use pipeline::{
    forward_video, masks_of, segment_tileset, segment_video, ObjectOutput, TileOutput, VideoOutput, VideoSegmentation,
};
pub use tensor::{gemm, Tensor};
pub use train::{
    evaluate_tiles, evaluate_videos, train, video_loss, Dataset, EpochLog, LossTargets, TrainConfig, TrainReport,
    VideoEval, VideoSample,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub patch: usize,
    pub d_model: usize,
    pub n_enc_blocks: usize,
    pub n_mem_blocks: usize,
    pub n_dec_blocks: usize,
    pub n_heads: usize,
    pub lora_rank: usize,
    /// Default query tokens in the decoder; the first is the mask token.
    pub n_query_tokens: usize,
    pub mlp_ratio: usize,
    /// Seed of the frozen "pretrained" initialization and of the trainable init.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            patch: 16,
            d_model: 32,
            n_enc_blocks: 2,
            n_mem_blocks: 1,
            n_dec_blocks: 2,
            n_heads: 4,
            lora_rank: 4,
            n_query_tokens: 2,
            mlp_ratio: 2,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.patch == 0 || self.input_size == 0 || self.input_size % self.patch != 0 {
            return bad(format!("input_size {} must be a positive multiple of patch {}", self.input_size, self.patch));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} must be divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model % 4 != 0 {
            return bad(format!("d_model {} must be divisible by 4 for 2-D positional encoding", self.d_model));
        }
        if self.lora_rank == 0 || self.lora_rank >= self.d_model {
            return bad(format!("lora_rank {} must be in 1..{}", self.lora_rank, self.d_model));
        }
        if self.n_query_tokens == 0 || self.mlp_ratio == 0 {
            return bad("n_query_tokens and mlp_ratio must be positive".into());
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.input_size / self.patch
    }

    pub fn n_tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}
