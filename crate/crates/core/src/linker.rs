//! Heuristic frame-to-frame instance linking and box prompt providers.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, BinaryMask, BoxPrompt, InstanceMask};

pub const DEFAULT_LINK_IOU: f64 = 0.3;

/// One object across a video: exactly one (possibly empty) mask per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedInstance {
    pub id: u32,
    pub masks: Vec<BinaryMask>,
}

impl LinkedInstance {
    pub fn is_empty(&self) -> bool {
        self.masks.iter().all(BinaryMask::is_empty)
    }
}

/// Ground-truth tracks straight from consistently labeled per-frame masks.
pub fn tracks_from_labels(per_frame: &[InstanceMask]) -> Vec<LinkedInstance> {
    let labels: BTreeSet<u16> = per_frame.iter().flat_map(|m| m.inventory()).collect();
    labels
        .into_iter()
        .map(|l| LinkedInstance {
            id: l as u32,
            masks: per_frame.iter().map(|m| m.select(l)).collect(),
        })
        .collect()
}

/// Link per-frame instances into tracks by mask IoU with the previous frame.
///
/// Each instance joins the track (present in the previous frame) with the
/// highest IoU when that IoU is at least `tau`; ties go to the smaller track id.
/// Several tracks may point at one instance (a merge), in which case only the
/// best one continues. An instance whose best track was already claimed in the
/// current frame starts a new track, so every input instance lands in exactly
/// one track.
pub fn link_instances(per_frame: &[InstanceMask], tau: f64) -> Result<Vec<LinkedInstance>> {
    let Some(first) = per_frame.first() else {
        return Ok(Vec::new());
    };
    for m in &per_frame[1..] {
        raster::same_dims(first, m)?;
    }
    let (h, w) = (first.height(), first.width());
    let n = per_frame.len();
    let mut tracks: Vec<LinkedInstance> = Vec::new();
    let new_track = |tracks: &mut Vec<LinkedInstance>, t: usize, mask: BinaryMask| {
        let mut masks = vec![BinaryMask::empty(h, w); n];
        masks[t] = mask;
        tracks.push(LinkedInstance {
            id: tracks.len() as u32 + 1,
            masks,
        });
    };
    for l in first.inventory() {
        new_track(&mut tracks, 0, first.select(l));
    }
    for t in 1..n {
        let instances: Vec<BinaryMask> = per_frame[t].inventory().into_iter().map(|l| per_frame[t].select(l)).collect();
        // (iou, track index, instance index) for every admissible link
        let mut best: Vec<Option<(f64, usize)>> = vec![None; instances.len()];
        for (ii, inst) in instances.iter().enumerate() {
            for (ti, tr) in tracks.iter().enumerate() {
                if tr.masks[t - 1].is_empty() {
                    continue;
                }
                let iou = raster::binary_iou(inst, &tr.masks[t - 1])?;
                if iou >= tau && best[ii].is_none_or(|(b, _)| iou > b) {
                    best[ii] = Some((iou, ti));
                }
            }
        }
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.sort_by(|&a, &b| {
            let ka = best[a].map_or(-1.0, |x| x.0);
            let kb = best[b].map_or(-1.0, |x| x.0);
            kb.total_cmp(&ka).then(a.cmp(&b))
        });
        let mut claimed = vec![false; tracks.len()];
        for ii in order {
            match best[ii] {
                Some((_, ti)) if !claimed[ti] => {
                    claimed[ti] = true;
                    tracks[ti].masks[t] = instances[ii].clone();
                }
                _ => new_track(&mut tracks, t, instances[ii].clone()),
            }
        }
    }
    Ok(tracks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PromptMode {
    Oracle,
    JitteredOracle { sigma: f64 },
    FromFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptProvider {
    pub mode: PromptMode,
    pub seed: u64,
}

impl PromptProvider {
    pub fn oracle() -> Self {
        Self {
            mode: PromptMode::Oracle,
            seed: 0,
        }
    }

    pub fn jittered(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("jitter sigma must be >= 0, got {sigma}")));
        }
        Ok(Self {
            mode: PromptMode::JitteredOracle { sigma },
            seed,
        })
    }
}

/// One prompt per object; `id` is the object identifier the prompt tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPrompt {
    pub id: u32,
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
}

impl ObjectPrompt {
    pub fn prompt(&self) -> BoxPrompt {
        BoxPrompt::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFile {
    pub boxes: Vec<ObjectPrompt>,
}

pub fn read_prompt_file(path: &Path) -> Result<Vec<ObjectPrompt>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_json(&text, &path.display().to_string())
}

pub fn parse_prompt_json(text: &str, source_name: &str) -> Result<Vec<ObjectPrompt>> {
    let file: PromptFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(file.boxes)
}

/// Boxes for the instances of the first processed frame.
pub fn provide_prompts(gt: &InstanceMask, provider: &PromptProvider) -> Result<Vec<ObjectPrompt>> {
    let oracle = || {
        gt.inventory()
            .into_iter()
            .filter_map(|l| {
                BoxPrompt::of_mask(&gt.select(l)).map(|b| ObjectPrompt {
                    id: l as u32,
                    bbox: [b.x0, b.y0, b.x1, b.y1],
                })
            })
            .collect::<Vec<_>>()
    };
    match &provider.mode {
        PromptMode::Oracle => Ok(oracle()),
        PromptMode::JitteredOracle { sigma } => {
            if *sigma == 0.0 {
                return Ok(oracle());
            }
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(provider.seed);
            let (w, h) = (gt.width() as f64, gt.height() as f64);
            let mut out = Vec::new();
            for p in oracle() {
                let mut jit = |v: usize, hi: f64| -> usize {
                    let d: f64 = normal.sample(&mut rng);
                    (v as f64 + d.round()).clamp(0.0, hi) as usize
                };
                let x0 = jit(p.bbox[0], w);
                let y0 = jit(p.bbox[1], h);
                let x1 = jit(p.bbox[2], w);
                let y1 = jit(p.bbox[3], h);
                if x0 < x1 && y0 < y1 {
                    out.push(ObjectPrompt {
                        id: p.id,
                        bbox: [x0, y0, x1, y1],
                    });
                }
            }
            Ok(out)
        }
        PromptMode::FromFile { path } => read_prompt_file(path),
    }
}
