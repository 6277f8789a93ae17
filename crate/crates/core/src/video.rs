//! On-disk sequences. A sequence directory holds `frame_NNNN.png`,
//! optional `mask_NNNN.png` and a `manifest.json`:
//!
//! ```text
//! { "frames": [...], "masks": [...], "years": [...], "order": "latest_first" | "chronological", "flags": [...] }
//! ```
//!
//! `years` is optional and `masks` may be empty for unannotated input. A
//! dataset directory holds one sequence per `video_NNNN` subdirectory; a tile
//! set is a single sequence directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_grid, load_mask, save_grid, save_mask, InstanceMask, RasterGrid};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrder {
    LatestFirst,
    Chronological,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub frames: Vec<String>,
    #[serde(default)]
    pub masks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years: Option<Vec<i32>>,
    pub order: FrameOrder,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Frames and masks in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub frames: Vec<RasterGrid>,
    /// Empty when the sequence carries no annotation.
    pub masks: Vec<InstanceMask>,
}

impl Sequence {
    /// Permutation from processing position to file position; the latest
    /// frame is processed first.
    pub fn processing_order(&self) -> Vec<usize> {
        let n = self.frames.len();
        match self.manifest.order {
            FrameOrder::LatestFirst => (0..n).collect(),
            FrameOrder::Chronological => (0..n).rev().collect(),
        }
    }
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

pub fn mask_name(i: usize) -> String {
    format!("mask_{i:04}.png")
}

pub fn video_dir_name(i: usize) -> String {
    format!("video_{i:04}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        let source_name = path.display().to_string();
        if e.is_data() {
            Error::Schema {
                source_name,
                message: e.to_string(),
            }
        } else {
            Error::Parse {
                source_name,
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            }
        }
    })
}

/// Write a sequence with frames and masks in the given order.
pub fn write_sequence(
    dir: &Path,
    frames: &[RasterGrid],
    masks: &[InstanceMask],
    years: Option<Vec<i32>>,
    order: FrameOrder,
    flags: Vec<String>,
) -> Result<SequenceManifest> {
    if !masks.is_empty() && masks.len() != frames.len() {
        return Err(Error::dims(format!("{} masks", frames.len()), format!("{} masks", masks.len())));
    }
    create_dir(dir)?;
    let mut manifest = SequenceManifest {
        frames: Vec::with_capacity(frames.len()),
        masks: Vec::with_capacity(masks.len()),
        years,
        order,
        flags,
    };
    for (i, f) in frames.iter().enumerate() {
        save_grid(&dir.join(frame_name(i)), f)?;
        manifest.frames.push(frame_name(i));
    }
    for (i, m) in masks.iter().enumerate() {
        save_mask(&dir.join(mask_name(i)), m)?;
        manifest.masks.push(mask_name(i));
    }
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<SequenceManifest> {
    let path = dir.join(MANIFEST);
    let m: SequenceManifest = read_json(&path)?;
    let schema = |message: String| Error::Schema {
        source_name: path.display().to_string(),
        message,
    };
    if m.frames.is_empty() {
        return Err(schema("field `frames`: must list at least one frame".into()));
    }
    if !m.masks.is_empty() && m.masks.len() != m.frames.len() {
        return Err(schema(format!(
            "field `masks`: {} entries for {} frames",
            m.masks.len(),
            m.frames.len()
        )));
    }
    if let Some(y) = &m.years {
        if y.len() != m.frames.len() {
            return Err(schema(format!("field `years`: {} entries for {} frames", y.len(), m.frames.len())));
        }
    }
    for name in m.frames.iter().chain(&m.masks) {
        if name.contains('/') || name.contains('\\') || name == ".." {
            return Err(schema(format!("file name {name:?} must be relative to the sequence directory")));
        }
    }
    Ok(m)
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let manifest = read_manifest(dir)?;
    let frames = manifest
        .frames
        .iter()
        .map(|f| load_grid(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let masks = manifest
        .masks
        .iter()
        .map(|f| load_mask(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    for (f, m) in frames.iter().zip(&masks) {
        crate::raster::same_dims(f, m)?;
    }
    if let Some(first) = frames.first() {
        for f in &frames[1..] {
            crate::raster::same_dims(first, f)?;
        }
    }
    Ok(Sequence { manifest, frames, masks })
}

/// Sequence subdirectories of a dataset, sorted by name. A directory that is
/// itself a sequence yields just itself.
pub fn list_sequences(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let p = e.path();
        if p.is_dir() && p.join(MANIFEST).is_file() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("no sequences under {}", dir.display())));
    }
    Ok(out)
}
