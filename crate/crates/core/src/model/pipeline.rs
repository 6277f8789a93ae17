//! Streaming inference: per-object FIFO memory for map time series and a shared
//! self-sorting memory for tile streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::network::{Decoded, Model};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linker::{LinkedInstance, ObjectPrompt};
use crate::membank::{BankConfig, BankPolicy, MemoryBank, MemoryEntry, RetrievalMode, Update};
use crate::raster::{BinaryMask, RasterGrid};

/// Graph-level result of a video forward pass.
#[derive(Debug, Clone)]
pub struct VideoSegmentation {
    /// `(object id, one decode per frame)`.
    pub objects: Vec<(u32, Vec<Decoded>)>,
    /// Objects whose prompt was unusable, with the reason.
    pub rejected: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectOutput {
    pub id: u32,
    pub masks: Vec<BinaryMask>,
    pub confidences: Vec<f64>,
}

impl ObjectOutput {
    pub fn track(&self) -> LinkedInstance {
        LinkedInstance {
            id: self.id,
            masks: self.masks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoOutput {
    pub objects: Vec<ObjectOutput>,
    pub rejected: Vec<(u32, String)>,
}

impl VideoOutput {
    pub fn tracks(&self) -> Vec<LinkedInstance> {
        self.objects.iter().map(ObjectOutput::track).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileOutput {
    pub mask: BinaryMask,
    pub confidence: f64,
    pub update: Update,
    pub bank_size: usize,
}

/// Record the video forward pass on `g`. Frames are in processing order and
/// prompts refer to frame 0. With `use_memory` false every frame after the
/// first is decoded without memories.
pub fn forward_video(
    model: &Model,
    g: &mut Graph,
    frames: &[&RasterGrid],
    prompts: &[ObjectPrompt],
    bank_cfg: &BankConfig,
    use_memory: bool,
) -> Result<VideoSegmentation> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("video has no frames".into()));
    }
    let feats = frames.iter().map(|f| model.encode_frame(g, f)).collect::<Result<Vec<_>>>()?;
    let queries: Vec<Vec<f64>> = feats.iter().map(|&f| Model::pooled(g.value(f))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = VideoSegmentation {
        objects: Vec::new(),
        rejected: Vec::new(),
    };
    for p in prompts {
        let prompt = match model.encode_box_prompt(g, &p.prompt()) {
            Ok(t) => t,
            Err(e) => {
                out.rejected.push((p.id, e.to_string()));
                continue;
            }
        };
        let mut bank: MemoryBank<NodeId> = MemoryBank::new(bank_cfg.capacity, BankPolicy::Fifo);
        let mut decodes = Vec::with_capacity(frames.len());
        for (t, &f) in feats.iter().enumerate() {
            let mems: Vec<NodeId> = if use_memory && t > 0 {
                bank.retrieve(&queries[t], bank_cfg.retrieve_k, RetrievalMode::RecentK, &mut rng)?
                    .into_iter()
                    .map(|e| e.tokens)
                    .collect()
            } else {
                Vec::new()
            };
            let fused = model.memory_attention(g, f, &mems);
            let d = model.decode_mask(g, fused, (t == 0).then_some(prompt));
            if use_memory && t + 1 < feats.len() {
                let m = model.encode_memory(g, d.logits, f);
                let conf = g.value(d.confidence).item();
                bank.update_fifo(model.memory_entry(g, m, conf, t));
            }
            decodes.push(d);
        }
        out.objects.push((p.id, decodes));
    }
    Ok(out)
}

/// Threshold the graph outputs of [`forward_video`].
pub fn masks_of(g: &Graph, seg: &VideoSegmentation) -> Result<VideoOutput> {
    let objects = seg
        .objects
        .iter()
        .map(|(id, decodes)| {
            let mut masks = Vec::with_capacity(decodes.len());
            let mut confidences = Vec::with_capacity(decodes.len());
            for d in decodes {
                let l = g.value(d.logits);
                masks.push(BinaryMask::from_logits(l.rows, l.cols, &l.data)?);
                confidences.push(g.value(d.confidence).item());
            }
            Ok(ObjectOutput { id: *id, masks, confidences })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoOutput {
        objects,
        rejected: seg.rejected.clone(),
    })
}

/// Segment every prompted object through a video (frames in processing order).
pub fn segment_video(
    model: &Model,
    frames: &[&RasterGrid],
    prompts: &[ObjectPrompt],
    bank_cfg: &BankConfig,
    use_memory: bool,
) -> Result<VideoOutput> {
    let mut g = Graph::new();
    let seg = forward_video(model, &mut g, frames, prompts, bank_cfg, use_memory)?;
    masks_of(&g, &seg)
}

/// One tile of a stream: retrieve, fuse, decode prompt-free. Memory tokens are
/// detached constants. Returns the decode and the candidate memory tensor.
pub(crate) fn tile_forward(
    model: &Model,
    g: &mut Graph,
    tile: &RasterGrid,
    bank: &MemoryBank<Tensor>,
    bank_cfg: &BankConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Decoded, NodeId, Vec<f64>)> {
    let f = model.encode_frame(g, tile)?;
    let query = Model::pooled(g.value(f));
    let retrieved: Vec<Tensor> = bank
        .retrieve(&query, bank_cfg.retrieve_k, bank_cfg.retrieval, rng)?
        .into_iter()
        .map(|e| e.tokens.clone())
        .collect();
    let mems: Vec<NodeId> = retrieved.into_iter().map(|t| g.constant(t)).collect();
    let fused = model.memory_attention(g, f, &mems);
    let d = model.decode_mask(g, fused, None);
    Ok((d, f, query))
}

/// Offer the memory of a finished tile decode to a self-sorting bank.
pub(crate) fn tile_memorize(
    model: &Model,
    g: &mut Graph,
    d: Decoded,
    frame: NodeId,
    index: usize,
    bank: &mut MemoryBank<Tensor>,
    bank_cfg: &BankConfig,
) -> Result<Update> {
    let m = model.encode_memory(g, d.logits, frame);
    let tokens = g.value(m).clone();
    let pooled = Model::pooled(&tokens);
    let conf = g.value(d.confidence).item();
    bank.update(MemoryEntry::new(tokens, pooled, conf, index), bank_cfg.conf_threshold)
}

/// Treat an ordered tile collection as one pseudo video with a shared
/// self-sorting bank. The first tile sees an empty bank.
pub fn segment_tileset(model: &Model, tiles: &[&RasterGrid], bank_cfg: &BankConfig, seed: u64) -> Result<Vec<TileOutput>> {
    let mut bank: MemoryBank<Tensor> = MemoryBank::new(bank_cfg.capacity, BankPolicy::SelfSorting);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(tiles.len());
    for (i, tile) in tiles.iter().enumerate() {
        let mut g = Graph::new();
        let (d, f, _) = tile_forward(model, &mut g, tile, &bank, bank_cfg, &mut rng)?;
        let update = tile_memorize(model, &mut g, d, f, i, &mut bank, bank_cfg)?;
        let l = g.value(d.logits);
        out.push(TileOutput {
            mask: BinaryMask::from_logits(l.rows, l.cols, &l.data)?,
            confidence: g.value(d.confidence).item(),
            update,
            bank_size: bank.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::{gen_synthetic_map, SynthConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            patch: 8,
            d_model: 16,
            n_heads: 2,
            lora_rank: 2,
            ..ModelConfig::default()
        }
    }

    fn grids(n: usize) -> Vec<RasterGrid> {
        let sc = SynthConfig {
            rect_size_range: (3, 8),
            ..SynthConfig::default()
        };
        (0..n).map(|i| gen_synthetic_map(32, 32, 2, &sc, i as u64).unwrap().grid).collect()
    }

    fn prompt(id: u32, b: [usize; 4]) -> ObjectPrompt {
        ObjectPrompt { id, bbox: b }
    }

    #[test]
    fn one_frame_video_is_prompted_single_image() {
        let m = Model::new(cfg()).unwrap();
        let gs = grids(1);
        let p = prompt(1, [2, 3, 20, 18]);
        let out = segment_video(&m, &[&gs[0]], &[p], &BankConfig::default(), true).unwrap();
        let mut g = Graph::new();
        let f = m.encode_frame(&mut g, &gs[0]).unwrap();
        let e = m.memory_attention(&mut g, f, &[]);
        let pe = m.encode_box_prompt(&mut g, &p.prompt()).unwrap();
        let d = m.decode_mask(&mut g, e, Some(pe));
        let l = g.value(d.logits);
        assert_eq!(out.objects[0].masks[0], BinaryMask::from_logits(32, 32, &l.data).unwrap());
        assert_eq!(out.objects[0].confidences[0], g.value(d.confidence).item());
    }

    #[test]
    fn zero_prompts_and_bad_prompts() {
        let m = Model::new(cfg()).unwrap();
        let gs = grids(2);
        let frames: Vec<&RasterGrid> = gs.iter().collect();
        let out = segment_video(&m, &frames, &[], &BankConfig::default(), true).unwrap();
        assert!(out.objects.is_empty());
        let out = segment_video(
            &m,
            &frames,
            &[prompt(1, [5, 5, 2, 9]), prompt(2, [1, 1, 9, 9])],
            &BankConfig::default(),
            true,
        )
        .unwrap();
        assert_eq!(out.objects.len(), 1);
        assert_eq!(out.objects[0].id, 2);
        assert_eq!(out.objects[0].masks.len(), 2);
        assert_eq!(out.rejected.len(), 1);
    }

    #[test]
    fn memory_changes_later_frames_only() {
        let m = Model::new(cfg()).unwrap();
        let gs = grids(3);
        let frames: Vec<&RasterGrid> = gs.iter().collect();
        let p = [prompt(1, [2, 3, 20, 18])];
        let bc = BankConfig::default();
        let with = segment_video(&m, &frames, &p, &bc, true).unwrap();
        let without = segment_video(&m, &frames, &p, &bc, false).unwrap();
        assert_eq!(with.objects[0].masks[0], without.objects[0].masks[0]);
        assert_ne!(with.objects[0].confidences[1], without.objects[0].confidences[1]);
    }

    #[test]
    fn tileset_single_tile_and_determinism() {
        let m = Model::new(cfg()).unwrap();
        let gs = grids(12);
        let tiles: Vec<&RasterGrid> = gs.iter().collect();
        let one = segment_tileset(&m, &tiles[..1], &BankConfig::default(), 3).unwrap();
        let mut g = Graph::new();
        let f = m.encode_frame(&mut g, &gs[0]).unwrap();
        let e = m.memory_attention(&mut g, f, &[]);
        let d = m.decode_mask(&mut g, e, None);
        assert_eq!(one[0].mask, BinaryMask::from_logits(32, 32, &g.value(d.logits).data).unwrap());

        let bc = BankConfig {
            capacity: 3,
            conf_threshold: 0.0,
            ..BankConfig::default()
        };
        let a = segment_tileset(&m, &tiles, &bc, 7).unwrap();
        let b = segment_tileset(&m, &tiles, &bc, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.bank_size <= 3));
        assert_eq!(a.last().unwrap().bank_size, 3);
    }
}
