//! Raster primitives: intensity grids, instance masks, binary masks, 4-connected
//! morphology and component labeling, translation and overlap measures.

mod io;

use std::collections::BTreeSet;

pub use io::{load_grid, load_mask, save_grid, save_mask, save_rgb};

use crate::error::{Error, Result};

/// Intensity of ink (building) pixels.
pub const INK: u8 = 0;
/// Intensity of paper background.
pub const PAPER: u8 = 255;

/// Row-major 8-bit intensity image. 0 is black ink, 255 is white paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterGrid {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RasterGrid {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        assert!(height >= 1 && width >= 1, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

/// Row-major 16-bit instance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        check_dims(height, width, labels.len())?;
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "mask dimensions must be positive");
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.labels[y * self.width + x] = v;
    }

    /// Sorted set of nonzero labels.
    pub fn inventory(&self) -> BTreeSet<u16> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn area(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn select(&self, label: u16) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == label && l != 0).collect(),
        }
    }

    /// Foreground of all instances.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub fn same_shape<T: Shaped>(&self, other: &T) -> bool {
        self.height == other.dims().0 && self.width == other.dims().1
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(height, width, bits.len())?;
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "mask dimensions must be positive");
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        let mut m = Self::empty(height, width);
        m.bits.iter_mut().for_each(|b| *b = true);
        m
    }

    /// Threshold real-valued logits at 0.
    pub fn from_logits(height: usize, width: usize, logits: &[f64]) -> Result<Self> {
        check_dims(height, width, logits.len())?;
        Ok(Self {
            height,
            width,
            bits: logits.iter().map(|&v| v > 0.0).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// True when every pixel of `other` is also set in `self`.
    pub fn contains(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    /// Tight bounding box `(x0, y0, x1, y1)` with exclusive upper corner.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
                    });
                }
            }
        }
        bb
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        same_dims(self, other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Box prompt in pixel-edge coordinates: covers `x0 <= x < x1`, `y0 <= y < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoxPrompt {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxPrompt {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Tight box of a nonempty mask.
    pub fn of_mask(m: &BinaryMask) -> Option<Self> {
        m.bbox().map(|(x0, y0, x1, y1)| Self { x0, y0, x1, y1 })
    }

    pub fn is_valid_for(&self, height: usize, width: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }
}

/// Anything with `(height, width)`.
pub trait Shaped {
    fn dims(&self) -> (usize, usize);
}

impl Shaped for RasterGrid {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shaped for InstanceMask {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Shaped for BinaryMask {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

pub(crate) fn same_dims(a: &impl Shaped, b: &impl Shaped) -> Result<()> {
    let (da, db) = (a.dims(), b.dims());
    if da != db {
        return Err(Error::dims(
            format!("{}x{}", da.0, da.1),
            format!("{}x{}", db.0, db.1),
        ));
    }
    Ok(())
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "raster dimensions must be positive, got {height}x{width}"
        )));
    }
    if height * width != len {
        return Err(Error::dims(height * width, len));
    }
    Ok(())
}

fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let (x, y) = (x as isize, y as isize);
    [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        .into_iter()
        .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
        .map(|(nx, ny)| (nx as usize, ny as usize))
}

/// Label 4-connected foreground regions 1..n in order of their first pixel in
/// row-major scan.
pub fn connected_components(b: &BinaryMask) -> InstanceMask {
    let (h, w) = (b.height, b.width);
    let mut out = InstanceMask::empty(h, w);
    let mut next: u16 = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !b.bits[start] || out.labels[start] != 0 {
            continue;
        }
        next = next.checked_add(1).expect("more than 65535 components");
        out.labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            for (nx, ny) in neighbors4(x, y, w, h) {
                let j = ny * w + nx;
                if b.bits[j] && out.labels[j] == 0 {
                    out.labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    out
}

/// Number of 4-connected components of `b`.
pub fn component_count(b: &BinaryMask) -> usize {
    connected_components(b).max_label() as usize
}

/// Dilation by the 4-neighborhood plus center.
pub fn dilate(b: &BinaryMask, iterations: usize) -> BinaryMask {
    let mut cur = b.clone();
    for _ in 0..iterations {
        let mut next = cur.clone();
        for y in 0..cur.height {
            for x in 0..cur.width {
                if cur.get(x, y) {
                    for (nx, ny) in neighbors4(x, y, cur.width, cur.height) {
                        next.set(nx, ny, true);
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Erosion by the 4-neighborhood plus center; outside the grid counts as false.
pub fn erode(b: &BinaryMask, iterations: usize) -> BinaryMask {
    let mut cur = b.clone();
    for _ in 0..iterations {
        let mut next = cur.clone();
        for y in 0..cur.height {
            for x in 0..cur.width {
                if !cur.get(x, y) {
                    continue;
                }
                let on_border = x == 0 || y == 0 || x + 1 == cur.width || y + 1 == cur.height;
                let keep = !on_border && neighbors4(x, y, cur.width, cur.height).all(|(nx, ny)| cur.get(nx, ny));
                next.set(x, y, keep);
            }
        }
        cur = next;
    }
    cur
}

fn check_shift(height: usize, width: usize, dx: isize, dy: isize) -> Result<()> {
    if dx.unsigned_abs() >= width || dy.unsigned_abs() >= height {
        return Err(Error::InvalidArgument(format!(
            "shift ({dx}, {dy}) must be smaller than grid {width}x{height}"
        )));
    }
    Ok(())
}

fn shift_buffer<T: Copy>(src: &[T], height: usize, width: usize, dx: isize, dy: isize, fill: T) -> Vec<T> {
    let mut out = vec![fill; src.len()];
    for y in 0..height {
        let sy = y as isize - dy;
        if sy < 0 || sy >= height as isize {
            continue;
        }
        for x in 0..width {
            let sx = x as isize - dx;
            if sx < 0 || sx >= width as isize {
                continue;
            }
            out[y * width + x] = src[sy as usize * width + sx as usize];
        }
    }
    out
}

/// Translate content by `(dx, dy)`; vacated pixels take `fill`.
pub fn shift_grid(g: &RasterGrid, dx: isize, dy: isize, fill: u8) -> Result<RasterGrid> {
    check_shift(g.height, g.width, dx, dy)?;
    Ok(RasterGrid {
        height: g.height,
        width: g.width,
        data: shift_buffer(&g.data, g.height, g.width, dx, dy, fill),
    })
}

/// Translate labels by `(dx, dy)`; vacated pixels become background.
pub fn shift_mask(m: &InstanceMask, dx: isize, dy: isize) -> Result<InstanceMask> {
    check_shift(m.height, m.width, dx, dy)?;
    Ok(InstanceMask {
        height: m.height,
        width: m.width,
        labels: shift_buffer(&m.labels, m.height, m.width, dx, dy, 0),
    })
}

/// Intersection and union pixel counts.
pub fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize)> {
    same_dims(a, b)?;
    let mut inter = 0;
    let mut union = 0;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok((inter, union))
}

/// |a ∩ b| / |a ∪ b|, with two empty masks scoring 1.
pub fn binary_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap_counts(a, b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::new(h, w, bits).unwrap()
    }

    #[test]
    fn components_empty_and_singleton() {
        let m = BinaryMask::empty(4, 5);
        assert!(connected_components(&m).inventory().is_empty());
        let mut m = BinaryMask::empty(3, 3);
        m.set(0, 0, true);
        let cc = connected_components(&m);
        assert_eq!(cc.get(0, 0), 1);
        assert_eq!(cc.area(1), 1);
        assert_eq!(cc.inventory().len(), 1);
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let m = mask_from(&["#.", ".#"]);
        let cc = connected_components(&m);
        assert_eq!(cc.get(0, 0), 1);
        assert_eq!(cc.get(1, 1), 2);
    }

    #[test]
    fn component_labels_follow_scan_order() {
        let m = mask_from(&["..#", "#..", "#.#"]);
        let cc = connected_components(&m);
        assert_eq!(cc.get(2, 0), 1);
        assert_eq!(cc.get(0, 1), 2);
        assert_eq!(cc.get(0, 2), 2);
        assert_eq!(cc.get(2, 2), 3);
    }

    #[test]
    fn dilate_single_pixel_is_plus() {
        let mut m = BinaryMask::empty(5, 5);
        m.set(2, 2, true);
        let d = dilate(&m, 1);
        assert_eq!(d, mask_from(&[".....", "..#..", ".###.", "..#..", "....."]));
        assert_eq!(dilate(&m, 0), m);
        let full = BinaryMask::full(4, 4);
        assert_eq!(dilate(&full, 3), full);
    }

    #[test]
    fn erode_plus_and_border() {
        let plus = mask_from(&[".....", "..#..", ".###.", "..#..", "....."]);
        assert_eq!(erode(&plus, 1), mask_from(&[".....", ".....", "..#..", ".....", "....."]));
        let full = BinaryMask::full(3, 3);
        assert_eq!(erode(&full, 1), mask_from(&["...", ".#.", "..."]));
        assert_eq!(erode(&plus, 0), plus);
    }

    #[test]
    fn shift_examples() {
        let mut g = RasterGrid::filled(3, 3, PAPER);
        g.set(1, 1, INK);
        assert_eq!(shift_grid(&g, 0, 0, PAPER).unwrap(), g);
        let s = shift_grid(&g, 1, 0, 7).unwrap();
        assert_eq!(s.get(2, 1), INK);
        assert!((0..3).all(|y| s.get(0, y) == 7));
        assert!(shift_grid(&g, 3, 0, PAPER).is_err());
        assert!(shift_grid(&g, 0, -3, PAPER).is_err());
    }

    #[test]
    fn shift_round_trip_leaves_fill_ring() {
        let g = RasterGrid::new(4, 4, (0..16).map(|v| v as u8 + 10).collect()).unwrap();
        let back = shift_grid(&shift_grid(&g, 1, 1, 0).unwrap(), -1, -1, 0).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if x == 3 || y == 3 { 0 } else { g.get(x, y) };
                assert_eq!(back.get(x, y), expect);
            }
        }
    }

    #[test]
    fn iou_examples() {
        let a = mask_from(&["##..", "##.."]);
        assert_eq!(binary_iou(&a, &a).unwrap(), 1.0);
        let b = mask_from(&["..##", "..##"]);
        assert_eq!(binary_iou(&a, &b).unwrap(), 0.0);
        let c = mask_from(&[".##.", ".##."]);
        assert!((binary_iou(&a, &c).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        let e = BinaryMask::empty(2, 4);
        assert_eq!(binary_iou(&e, &e).unwrap(), 1.0);
        assert!(binary_iou(&a, &BinaryMask::empty(3, 4)).is_err());
    }

    fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..max, 1..max).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |bits| BinaryMask::new(h, w, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn closing_is_extensive_on_interior(m in arb_mask(12)) {
            let mut m = m;
            let (h, w) = (m.height(), m.width());
            for y in 0..h { for x in 0..w {
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h { m.set(x, y, false); }
            }}
            let closed = erode(&dilate(&m, 1), 1);
            prop_assert!(closed.contains(&m));
        }

        #[test]
        fn components_are_connected_and_separated(m in arb_mask(10)) {
            let cc = connected_components(&m);
            let (h, w) = (m.height(), m.width());
            // adjacent foreground pixels share a label
            for y in 0..h { for x in 0..w {
                let l = cc.get(x, y);
                prop_assert_eq!(l != 0, m.get(x, y));
                if l == 0 { continue; }
                for (nx, ny) in neighbors4(x, y, w, h) {
                    let n = cc.get(nx, ny);
                    prop_assert!(n == 0 || n == l);
                }
            }}
            // each label is a single component
            for l in cc.inventory() {
                prop_assert_eq!(component_count(&cc.select(l)), 1);
            }
        }

        #[test]
        fn iou_symmetric_and_one_iff_equal(a in arb_mask(6), seed in any::<u64>()) {
            let bits: Vec<bool> = (0..a.bits().len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let b = BinaryMask::new(a.height(), a.width(), bits).unwrap();
            let ab = binary_iou(&a, &b).unwrap();
            prop_assert_eq!(ab, binary_iou(&b, &a).unwrap());
            prop_assert_eq!(ab == 1.0, a == b);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn shift_preserves_in_bounds_values(
            data in proptest::collection::vec(1u8..=255, 36),
            dx in -5isize..=5, dy in -5isize..=5,
        ) {
            let g = RasterGrid::new(6, 6, data).unwrap();
            let s = shift_grid(&g, dx, dy, 0).unwrap();
            let mut expect: Vec<u8> = Vec::new();
            for y in 0..6isize { for x in 0..6isize {
                let (tx, ty) = (x + dx, y + dy);
                if (0..6).contains(&tx) && (0..6).contains(&ty) {
                    expect.push(g.get(x as usize, y as usize));
                }
            }}
            let mut got: Vec<u8> = s.data().iter().copied().filter(|&v| v != 0).collect();
            expect.sort_unstable();
            got.sort_unstable();
            prop_assert_eq!(got, expect);
        }
    }
}
