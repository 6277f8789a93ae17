//! PNG persistence: grids as 8-bit grayscale, instance masks as 16-bit grayscale.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{InstanceMask, RasterGrid};
use crate::error::{Error, Result};

struct Decoded {
    width: usize,
    height: usize,
    depth: u8,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::MalformedImage {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(Cursor::new(raw));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| malformed(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(malformed(format!("expected single-channel grayscale, found {:?}", info.color_type)));
    }
    let depth = match info.bit_depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => return Err(malformed(format!("unsupported bit depth {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let out = reader.next_frame(&mut buf).map_err(|e| malformed(e.to_string()))?;
    buf.truncate(out.buffer_size());
    Ok(Decoded {
        width: out.width as usize,
        height: out.height as usize,
        depth,
        bytes: buf,
    })
}

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let w = std::io::BufWriter::new(file);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let to_io = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub fn save_grid(path: &Path, g: &RasterGrid) -> Result<()> {
    encode(path, g.width, g.height, png::ColorType::Grayscale, png::BitDepth::Eight, &g.data)
}

pub fn load_grid(path: &Path) -> Result<RasterGrid> {
    let d = decode(path)?;
    if d.depth != 8 {
        return Err(Error::BitDepth {
            path: path.to_path_buf(),
            expected: 8,
            found: d.depth,
        });
    }
    RasterGrid::new(d.height, d.width, d.bytes)
}

pub fn save_mask(path: &Path, m: &InstanceMask) -> Result<()> {
    let bytes: Vec<u8> = m.labels.iter().flat_map(|l| l.to_be_bytes()).collect();
    encode(path, m.width, m.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

pub fn load_mask(path: &Path) -> Result<InstanceMask> {
    let d = decode(path)?;
    if d.depth != 16 {
        return Err(Error::BitDepth {
            path: path.to_path_buf(),
            expected: 16,
            found: d.depth,
        });
    }
    let labels = d
        .bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    InstanceMask::new(d.height, d.width, labels)
}

/// Write an interleaved RGB8 buffer (used for overlays).
pub fn save_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::dims(width * height * 3, rgb.len()));
    }
    encode(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = RasterGrid::new(3, 5, (0..15).map(|v| (v * 17) as u8).collect()).unwrap();
        let p = dir.path().join("g.png");
        save_grid(&p, &g).unwrap();
        assert_eq!(load_grid(&p).unwrap(), g);

        let m = InstanceMask::new(2, 3, vec![0, 1, 300, 65535, 7, 0]).unwrap();
        let p = dir.path().join("m.png");
        save_mask(&p, &m).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn bit_depth_and_payload_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_grid(&p, &RasterGrid::filled(4, 4, 9)).unwrap();
        assert!(matches!(load_mask(&p), Err(Error::BitDepth { expected: 16, found: 8, .. })));

        let bytes = fs::read(&p).unwrap();
        let t = dir.path().join("t.png");
        fs::write(&t, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_grid(&t), Err(Error::MalformedImage { .. })));

        assert!(matches!(load_grid(&dir.path().join("nope.png")), Err(Error::MissingFile(_))));
    }
}
