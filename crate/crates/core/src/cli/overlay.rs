//! Color overlays: instance boundaries and track ids drawn on a copy of the tile.

use crate::raster::{InstanceMask, RasterGrid};

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 200, 200],
    [240, 50, 230],
    [128, 128, 0],
];

/// 3x5 digit glyphs, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

pub fn color_of(id: u16) -> [u8; 3] {
    PALETTE[id as usize % PALETTE.len()]
}

/// Interleaved RGB8 buffer of `grid` with every labeled instance outlined in
/// its color and its id written at the top-left of its bounding box.
pub fn render(grid: &RasterGrid, mask: &InstanceMask) -> Vec<u8> {
    let (h, w) = (grid.height(), grid.width());
    let mut rgb: Vec<u8> = grid.data().iter().flat_map(|&v| [v, v, v]).collect();
    let mut put = |x: usize, y: usize, c: [u8; 3]| {
        if x < w && y < h {
            let i = (y * w + x) * 3;
            rgb[i..i + 3].copy_from_slice(&c);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let l = mask.get(x, y);
            if l == 0 {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || mask.get(x - 1, y) != l
                || mask.get(x + 1, y) != l
                || mask.get(x, y - 1) != l
                || mask.get(x, y + 1) != l;
            if edge {
                put(x, y, color_of(l));
            }
        }
    }
    for l in mask.inventory() {
        let Some((x0, y0, _, _)) = mask.select(l).bbox() else { continue };
        let text = l.to_string();
        for (k, ch) in text.bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            let ox = x0 + 1 + k * 4;
            for (dy, row) in glyph.iter().enumerate() {
                for dx in 0..3 {
                    if row & (0b100 >> dx) != 0 {
                        put(ox + dx, y0 + 1 + dy, color_of(l));
                    }
                }
            }
        }
    }
    rgb
}
