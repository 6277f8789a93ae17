use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::network::Model;
use super::optim::AdamW;
use super::pipeline::{forward_video, segment_tileset, segment_video, tile_forward, tile_memorize};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::eval::{match_instances, prf1, MatchResult, MicroIou, Prf1, MATCH_THRESHOLD};
use crate::linker::{provide_prompts, tracks_from_labels, PromptMode, PromptProvider};
use crate::membank::{BankConfig, BankPolicy, MemoryBank};
use crate::raster::{binary_iou, BinaryMask, InstanceMask, RasterGrid};
use crate::synth::{derive_seed, AnnotatedFrame, PseudoVideo};

/// Frames and consistently labeled masks in processing order (latest first).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub frames: Vec<RasterGrid>,
    pub masks: Vec<InstanceMask>,
}

impl VideoSample {
    pub fn new(frames: Vec<RasterGrid>, masks: Vec<InstanceMask>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("video has no frames".into()));
        }
        if frames.len() != masks.len() {
            return Err(Error::dims(format!("{} masks", frames.len()), format!("{} masks", masks.len())));
        }
        for (f, m) in frames.iter().zip(&masks) {
            crate::raster::same_dims(f, m)?;
        }
        Ok(Self { frames, masks })
    }

    /// Chronological frames reversed so the latest comes first.
    pub fn from_chronological(mut frames: Vec<RasterGrid>, mut masks: Vec<InstanceMask>) -> Result<Self> {
        frames.reverse();
        masks.reverse();
        Self::new(frames, masks)
    }

    /// A pseudo video's frame 1 is the later epoch.
    pub fn from_pseudo_video(v: &PseudoVideo) -> Self {
        let [a, b] = v.frames.clone();
        Self {
            frames: vec![b.grid, a.grid],
            masks: vec![b.mask, a.mask],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Videos(Vec<VideoSample>),
    /// Annotated tiles streamed as one pseudo video; the target is the union of instances.
    Tiles(Vec<AnnotatedFrame>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Videos(v) => v.len(),
            Dataset::Tiles(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Memory attention active during training and validation.
    pub use_memory: bool,
    pub bank: BankConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
            use_memory: true,
            bank: BankConfig::default(),
        }
    }
}

/// Realized-IoU targets of the confidence term, per object then per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    pub iou: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// F1 for videos, micro IoU for tiles.
    pub val_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub steps: u64,
}

fn mask_tensor(m: &BinaryMask) -> Tensor {
    Tensor {
        rows: m.height(),
        cols: m.width(),
        data: m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    }
}

fn logits_mask(g: &Graph, n: NodeId) -> Result<BinaryMask> {
    let l = g.value(n);
    BinaryMask::from_logits(l.rows, l.cols, &l.data)
}

/// Loss of one video on the selected frames, prompted with tight ground-truth
/// boxes on the first of them. Mean over objects and frames of pixel BCE plus
/// the squared confidence error. With `targets` given, those IoU targets are
/// used instead of the realized ones. `None` when frame 0 has no objects.
pub fn video_loss(
    model: &Model,
    g: &mut Graph,
    sample: &VideoSample,
    frame_idx: &[usize],
    bank: &BankConfig,
    use_memory: bool,
    targets: Option<&LossTargets>,
) -> Result<Option<(NodeId, LossTargets)>> {
    let frames: Vec<&RasterGrid> = frame_idx.iter().map(|&i| &sample.frames[i]).collect();
    let masks: Vec<&InstanceMask> = frame_idx.iter().map(|&i| &sample.masks[i]).collect();
    let prompts = provide_prompts(masks[0], &PromptProvider::oracle())?;
    if prompts.is_empty() {
        return Ok(None);
    }
    let seg = forward_video(model, g, &frames, &prompts, bank, use_memory)?;
    let mut terms = Vec::new();
    let mut realized = Vec::with_capacity(seg.objects.len());
    for (o, (id, decodes)) in seg.objects.iter().enumerate() {
        let mut per_frame = Vec::with_capacity(decodes.len());
        for (t, d) in decodes.iter().enumerate() {
            let gt = masks[t].select(*id as u16);
            let bce = g.bce_mean(d.logits, mask_tensor(&gt));
            let iou = binary_iou(&logits_mask(g, d.logits)?, &gt)?;
            per_frame.push(iou);
            let target = targets.map_or(iou, |tg| tg.iou[o][t]);
            let se = g.squared_error(d.confidence, target);
            terms.push(bce);
            terms.push(se);
        }
        realized.push(per_frame);
    }
    let n = terms.len() / 2;
    let total = g.sum(&terms);
    let loss = g.scale(total, 1.0 / n as f64);
    Ok(Some((loss, LossTargets { iou: realized })))
}

/// Two seeded frame indices in processing order (all frames if fewer).
fn pick_frames(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= 2 {
        return (0..n).collect();
    }
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    vec![a.min(b), a.max(b)]
}

/// Summary of a video evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub matches: MatchResult,
    pub scores: Prf1,
}

/// Segment each video from prompts on its first frame and match against the
/// ground-truth tracks.
pub fn evaluate_videos(
    model: &Model,
    videos: &[VideoSample],
    provider: &PromptProvider,
    bank: &BankConfig,
    use_memory: bool,
) -> Result<VideoEval> {
    let mut total = MatchResult::default();
    for (i, v) in videos.iter().enumerate() {
        let per_video = PromptProvider {
            mode: provider.mode.clone(),
            seed: match provider.mode {
                PromptMode::JitteredOracle { .. } => derive_seed(provider.seed, i as u64),
                _ => provider.seed,
            },
        };
        let prompts = provide_prompts(&v.masks[0], &per_video)?;
        let frames: Vec<&RasterGrid> = v.frames.iter().collect();
        let out = segment_video(model, &frames, &prompts, bank, use_memory)?;
        let gts = tracks_from_labels(&v.masks);
        total.accumulate(&match_instances(&out.tracks(), &gts, MATCH_THRESHOLD)?);
    }
    let scores = prf1(&total);
    Ok(VideoEval { matches: total, scores })
}

/// Micro IoU of the foreground over a tile stream.
pub fn evaluate_tiles(model: &Model, tiles: &[AnnotatedFrame], bank: &BankConfig, seed: u64) -> Result<MicroIou> {
    let grids: Vec<&RasterGrid> = tiles.iter().map(|t| &t.grid).collect();
    let out = segment_tileset(model, &grids, bank, seed)?;
    let mut iou = MicroIou::default();
    for (o, t) in out.iter().zip(tiles) {
        iou.add(&o.mask, &t.mask.foreground())?;
    }
    Ok(iou)
}

fn validate(model: &Model, val: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    Ok(match val {
        Dataset::Videos(v) => evaluate_videos(model, v, &PromptProvider::oracle(), &cfg.bank, cfg.use_memory)?.scores.f1,
        Dataset::Tiles(t) => evaluate_tiles(model, t, &cfg.bank, cfg.seed)?.value(),
    })
}

/// Fit the trainable partition. With a validation set the parameters of the
/// best-scoring epoch (earliest on ties) are retained, otherwise the last.
pub fn train(model: &mut Model, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, super::params::ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        match data {
            Dataset::Videos(videos) => {
                let mut order: Vec<usize> = (0..videos.len()).collect();
                order.shuffle(&mut rng);
                for i in order {
                    let idx = pick_frames(videos[i].len(), &mut rng);
                    let mut g = Graph::new();
                    let Some((loss, _)) = video_loss(model, &mut g, &videos[i], &idx, &cfg.bank, cfg.use_memory, None)? else {
                        continue;
                    };
                    losses.push(g.value(loss).item());
                    g.backward(loss);
                    opt.step(model.params_mut(), &g.param_grads());
                }
            }
            Dataset::Tiles(tiles) => {
                let mut order: Vec<usize> = (0..tiles.len()).collect();
                order.shuffle(&mut rng);
                let mut bank: MemoryBank<Tensor> = MemoryBank::new(cfg.bank.capacity, BankPolicy::SelfSorting);
                let mut bank_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
                for (k, i) in order.into_iter().enumerate() {
                    let tile = &tiles[i];
                    let mut g = Graph::new();
                    let (d, f, _) = tile_forward(model, &mut g, &tile.grid, &bank, &cfg.bank, &mut bank_rng)?;
                    let gt = tile.mask.foreground();
                    let bce = g.bce_mean(d.logits, mask_tensor(&gt));
                    let iou = binary_iou(&logits_mask(&g, d.logits)?, &gt)?;
                    let se = g.squared_error(d.confidence, iou);
                    let loss = g.sum(&[bce, se]);
                    losses.push(g.value(loss).item());
                    if cfg.use_memory {
                        tile_memorize(model, &mut g, d, f, k, &mut bank, &cfg.bank)?;
                    }
                    g.backward(loss);
                    opt.step(model.params_mut(), &g.param_grads());
                }
            }
        }
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let val_score = val.map(|v| validate(model, v, cfg)).transpose()?;
        let improved = match (&best, val_score) {
            (None, _) => true,
            (Some((_, b, _)), Some(s)) => s > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((epoch, val_score.unwrap_or(f64::NAN), model.params().clone()));
        }
        logs.push(EpochLog { epoch, mean_loss, val_score });
    }
    let (best_epoch, best_score, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
        best_score: val.map(|_| best_score),
        steps: opt.steps(),
    })
}
