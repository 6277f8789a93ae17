//! Synthetic single-epoch maps and two-frame pseudo time series.
//!
//! A pseudo video is built from one annotated frame by composing temporal
//! transformations: a global shift, merges of neighbouring buildings,
//! disappearances, and appearances (a rectangle that overlaps an existing
//! building is a shape change and inherits its ID).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{self, BinaryMask, InstanceMask, RasterGrid, INK, PAPER};

pub type SynthRng = ChaCha8Rng;

const PLACEMENT_ATTEMPTS: usize = 1000;
const APPEARANCE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shift_range: usize,
    /// Inclusive ranges.
    pub appear_count_range: (usize, usize),
    pub disappear_count_range: (usize, usize),
    pub merge_count_range: (usize, usize),
    pub rect_size_range: (usize, usize),
    pub max_dilate_iters: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shift_range: 5,
            appear_count_range: (0, 3),
            disappear_count_range: (0, 2),
            merge_count_range: (0, 1),
            rect_size_range: (5, 30),
            max_dilate_iters: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("appear_count_range", self.appear_count_range),
            ("disappear_count_range", self.disappear_count_range),
            ("merge_count_range", self.merge_count_range),
            ("rect_size_range", self.rect_size_range),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("{name}: empty range {lo}..={hi}")));
            }
        }
        if self.rect_size_range.0 == 0 {
            return Err(Error::InvalidArgument("rect_size_range: sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> SynthRng {
        SynthRng::seed_from_u64(self.seed)
    }
}

/// Mix a base seed with an item index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A map tile with its instance annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedFrame {
    pub grid: RasterGrid,
    pub mask: InstanceMask,
}

impl AnnotatedFrame {
    pub fn new(grid: RasterGrid, mask: InstanceMask) -> Result<Self> {
        raster::same_dims(&grid, &mask)?;
        Ok(Self { grid, mask })
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    /// Modal intensity over non-instance pixels (paper white if there are none).
    pub fn background_intensity(&self) -> u8 {
        let mut hist = [0usize; 256];
        for (&v, &l) in self.grid.data().iter().zip(self.mask.labels()) {
            if l == 0 {
                hist[v as usize] += 1;
            }
        }
        if hist.iter().all(|&c| c == 0) {
            return PAPER;
        }
        // ties resolve to the lighter value
        let mut best = 0;
        for v in 0..256 {
            if hist[v] >= hist[best] {
                best = v;
            }
        }
        best as u8
    }
}

/// Axis-aligned rectangle, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}

/// What a transformation did; recorded in video manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Shift {
        dx: isize,
        dy: isize,
        dropped: Vec<u16>,
    },
    Appear {
        label: u16,
        rect: Rect,
        shape_change: bool,
    },
    Disappear {
        label: u16,
    },
    Merge {
        kept: u16,
        absorbed: u16,
        iterations: usize,
        /// Row-major pixel indices of the two originals.
        #[serde(skip)]
        original_pixels: Vec<usize>,
        /// Row-major pixel indices of the merged region.
        #[serde(skip)]
        merged_pixels: Vec<usize>,
    },
    Skipped {
        op: String,
        reason: String,
    },
}

impl Event {
    pub fn is_skipped(&self) -> bool {
        matches!(self, Event::Skipped { .. })
    }

    fn skipped(op: &str, reason: impl Into<String>) -> Self {
        Event::Skipped {
            op: op.to_string(),
            reason: reason.into(),
        }
    }
}

/// A transformed frame and the event describing the transformation.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub frame: AnnotatedFrame,
    pub event: Event,
}

fn sample_size(rng: &mut SynthRng, range: (usize, usize), limit: usize) -> usize {
    let hi = range.1.min(limit);
    let lo = range.0.min(hi);
    rng.random_range(lo..=hi)
}

/// Generate a light, speckled map with `n_buildings` dark, mutually
/// non-touching rectangles labeled 1..n in placement order.
pub fn gen_synthetic_map(
    height: usize,
    width: usize,
    n_buildings: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<AnnotatedFrame> {
    cfg.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("map dimensions must be positive".into()));
    }
    if n_buildings > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many buildings".into()));
    }
    let mut rng = SynthRng::seed_from_u64(seed);
    let mut grid = RasterGrid::filled(height, width, PAPER);
    for v in grid.data_mut() {
        if rng.random::<f64>() < 0.03 {
            *v = rng.random_range(170..=235);
        }
    }
    let mut mask = InstanceMask::empty(height, width);
    for label in 1..=n_buildings as u16 {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = sample_size(&mut rng, cfg.rect_size_range, width);
            let h = sample_size(&mut rng, cfg.rect_size_range, height);
            let x0 = rng.random_range(0..=width - w);
            let y0 = rng.random_range(0..=height - h);
            let rect = Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            };
            // one-pixel halo keeps buildings from touching
            let hx0 = rect.x0.saturating_sub(1);
            let hy0 = rect.y0.saturating_sub(1);
            let hx1 = (rect.x1 + 1).min(width);
            let hy1 = (rect.y1 + 1).min(height);
            let clear = (hy0..hy1).all(|y| (hx0..hx1).all(|x| mask.get(x, y) == 0));
            if clear {
                for (x, y) in rect.pixels() {
                    mask.set(x, y, label);
                    grid.set(x, y, INK);
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::LayoutInfeasible(format!(
                "could not place building {label} of {n_buildings} on {height}x{width} after {PLACEMENT_ATTEMPTS} attempts"
            )));
        }
    }
    AnnotatedFrame::new(grid, mask)
}

/// Shift the frame by a uniform offset in `[-shift_range, shift_range]²`.
pub fn apply_shift(f: &AnnotatedFrame, cfg: &SynthConfig, rng: &mut SynthRng) -> Outcome {
    let r = cfg.shift_range as i64;
    let dx = rng.random_range(-r..=r) as isize;
    let dy = rng.random_range(-r..=r) as isize;
    shift_by(f, dx, dy)
}

/// Deterministic shift; offsets beyond the frame are clamped to keep one pixel row/column.
pub fn shift_by(f: &AnnotatedFrame, dx: isize, dy: isize) -> Outcome {
    let dx = dx.clamp(-(f.width() as isize - 1), f.width() as isize - 1);
    let dy = dy.clamp(-(f.height() as isize - 1), f.height() as isize - 1);
    let fill = f.background_intensity();
    let grid = raster::shift_grid(&f.grid, dx, dy, fill).expect("shift clamped to grid");
    let mask = raster::shift_mask(&f.mask, dx, dy).expect("shift clamped to grid");
    let after = mask.inventory();
    let dropped = f.mask.inventory().difference(&after).copied().collect();
    Outcome {
        frame: AnnotatedFrame { grid, mask },
        event: Event::Shift { dx, dy, dropped },
    }
}

/// Insert one dark rectangle (see module docs for the ID rules).
pub fn apply_appearance(f: &AnnotatedFrame, cfg: &SynthConfig, rng: &mut SynthRng) -> Outcome {
    appearance_with_floor(f, cfg, rng, 0)
}

/// As [`apply_appearance`], but fresh IDs are also kept above `label_floor`
/// so they cannot collide with labels that existed earlier in a sequence.
pub fn appearance_with_floor(f: &AnnotatedFrame, cfg: &SynthConfig, rng: &mut SynthRng, label_floor: u16) -> Outcome {
    let (height, width) = (f.height(), f.width());
    for _ in 0..APPEARANCE_ATTEMPTS {
        let w = sample_size(rng, cfg.rect_size_range, width);
        let h = sample_size(rng, cfg.rect_size_range, height);
        let x0 = rng.random_range(0..=width - w);
        let y0 = rng.random_range(0..=height - h);
        let rect = Rect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        };
        let hit: BTreeSet<u16> = rect.pixels().map(|(x, y)| f.mask.get(x, y)).filter(|&l| l != 0).collect();
        let (label, shape_change) = match hit.len() {
            0 => {
                let base = f.mask.max_label().max(label_floor);
                match base.checked_add(1) {
                    Some(l) => (l, false),
                    None => return unchanged(f, "appearance", "label space exhausted"),
                }
            }
            1 => (*hit.iter().next().unwrap(), true),
            _ => continue,
        };
        let mut out = f.clone();
        for (x, y) in rect.pixels() {
            out.mask.set(x, y, label);
            out.grid.set(x, y, INK);
        }
        return Outcome {
            frame: out,
            event: Event::Appear {
                label,
                rect,
                shape_change,
            },
        };
    }
    unchanged(f, "appearance", "no placement overlapping at most one instance")
}

fn unchanged(f: &AnnotatedFrame, op: &str, reason: &str) -> Outcome {
    Outcome {
        frame: f.clone(),
        event: Event::skipped(op, reason),
    }
}

/// Remove one uniformly chosen instance, painting it with the background intensity.
pub fn apply_disappearance(f: &AnnotatedFrame, _cfg: &SynthConfig, rng: &mut SynthRng) -> Outcome {
    let inv: Vec<u16> = f.mask.inventory().into_iter().collect();
    if inv.is_empty() {
        return unchanged(f, "disappearance", "no instances");
    }
    let label = inv[rng.random_range(0..inv.len())];
    let fill = f.background_intensity();
    let mut out = f.clone();
    for i in 0..out.mask.labels().len() {
        if out.mask.labels()[i] == label {
            out.mask.labels_mut()[i] = 0;
            out.grid.data_mut()[i] = fill;
        }
    }
    Outcome {
        frame: out,
        event: Event::Disappear { label },
    }
}

fn centroids(mask: &InstanceMask) -> BTreeMap<u16, (f64, f64)> {
    let mut acc: BTreeMap<u16, (f64, f64, f64)> = BTreeMap::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let l = mask.get(x, y);
            if l != 0 {
                let e = acc.entry(l).or_default();
                e.0 += x as f64;
                e.1 += y as f64;
                e.2 += 1.0;
            }
        }
    }
    acc.into_iter().map(|(l, (sx, sy, n))| (l, (sx / n, sy / n))).collect()
}

/// Pair with minimum centroid distance; ties go to the smaller `(a, b)`.
pub fn closest_pair(mask: &InstanceMask) -> Option<(u16, u16)> {
    let c: Vec<(u16, (f64, f64))> = centroids(mask).into_iter().collect();
    let mut best: Option<(f64, u16, u16)> = None;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let (a, pa) = c[i];
            let (b, pb) = c[j];
            let d = ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, a, b));
            }
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// Merge the two closest instances by dilation then constrained erosion.
pub fn apply_merge(f: &AnnotatedFrame, cfg: &SynthConfig, _rng: &mut SynthRng) -> Outcome {
    let Some((a, b)) = closest_pair(&f.mask) else {
        return unchanged(f, "merge", "fewer than two instances");
    };
    let (h, w) = (f.height(), f.width());
    let originals = f.mask.select(a).union(&f.mask.select(b)).expect("same dims");
    // pixels owned by other instances are never claimed
    let blocked: Vec<bool> = f.mask.labels().iter().map(|&l| l != 0 && l != a && l != b).collect();

    let mut region = originals.clone();
    let mut iterations = 0;
    while raster::component_count(&region) > 1 {
        if iterations == cfg.max_dilate_iters {
            return unchanged(f, "merge", format!("instances {a} and {b} not connected after {iterations} dilations").as_str());
        }
        let grown = raster::dilate(&region, 1);
        let bits = grown.bits().iter().zip(&blocked).map(|(&g, &x)| g && !x).collect();
        region = BinaryMask::new(h, w, bits).expect("same dims");
        iterations += 1;
    }

    for _ in 0..iterations {
        region = erode_preserving(&region, &originals);
    }

    let kept = a.min(b);
    let absorbed = a.max(b);
    let mut out = f.clone();
    let mut merged_pixels = Vec::new();
    for (i, &on) in region.bits().iter().enumerate() {
        if on {
            out.mask.labels_mut()[i] = kept;
            out.grid.data_mut()[i] = INK;
            merged_pixels.push(i);
        }
    }
    let original_pixels = originals.bits().iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i).collect();
    Outcome {
        frame: out,
        event: Event::Merge {
            kept,
            absorbed,
            iterations,
            original_pixels,
            merged_pixels,
        },
    }
}

/// One erosion step that keeps `protected` pixels and never splits `region`.
fn erode_preserving(region: &BinaryMask, protected: &BinaryMask) -> BinaryMask {
    let eroded = raster::erode(region, 1);
    let candidate = eroded.union(protected).expect("same dims");
    if raster::component_count(&candidate) <= 1 {
        return candidate;
    }
    // fall back to removing pixels one at a time while connectivity holds
    let mut cur = region.clone();
    for i in 0..cur.bits().len() {
        let (x, y) = (i % cur.width(), i / cur.width());
        if cur.get(x, y) && !eroded.get(x, y) && !protected.get(x, y) {
            cur.set(x, y, false);
            if raster::component_count(&cur) > 1 {
                cur.set(x, y, true);
            }
        }
    }
    cur
}

/// A two-frame pseudo video with its transformation log.
#[derive(Debug, Clone)]
pub struct PseudoVideo {
    pub frames: [AnnotatedFrame; 2],
    pub events: Vec<Event>,
}

impl PseudoVideo {
    pub fn flags(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Skipped { op, reason } => Some(format!("skipped {op}: {reason}")),
                _ => None,
            })
            .collect()
    }
}

fn find_root(parent: &BTreeMap<u16, u16>, mut l: u16) -> u16 {
    while let Some(&p) = parent.get(&l) {
        if p == l {
            break;
        }
        l = p;
    }
    l
}

/// Compose shift, merges, disappearances and appearances into frame 1.
pub fn synthesize_pseudo_video(f: &AnnotatedFrame, cfg: &SynthConfig) -> Result<PseudoVideo> {
    cfg.validate()?;
    let mut rng = cfg.rng();
    let floor = f.mask.max_label();
    let mut events = Vec::new();

    let shifted = apply_shift(f, cfg, &mut rng);
    events.push(shifted.event);
    let mut cur = shifted.frame;

    let n_merge = rng.random_range(cfg.merge_count_range.0..=cfg.merge_count_range.1);
    let n_disappear = rng.random_range(cfg.disappear_count_range.0..=cfg.disappear_count_range.1);
    let n_appear = rng.random_range(cfg.appear_count_range.0..=cfg.appear_count_range.1);

    let mut parent: BTreeMap<u16, u16> = BTreeMap::new();
    for _ in 0..n_merge {
        let o = apply_merge(&cur, cfg, &mut rng);
        if let Event::Merge { kept, absorbed, .. } = &o.event {
            parent.insert(*absorbed, *kept);
        }
        events.push(o.event);
        cur = o.frame;
    }
    for _ in 0..n_disappear {
        let o = apply_disappearance(&cur, cfg, &mut rng);
        events.push(o.event);
        cur = o.frame;
    }
    for _ in 0..n_appear {
        let o = appearance_with_floor(&cur, cfg, &mut rng, floor);
        events.push(o.event);
        cur = o.frame;
    }

    let mut first = f.clone();
    if !parent.is_empty() {
        for l in first.mask.labels_mut() {
            if *l != 0 {
                *l = find_root(&parent, *l);
            }
        }
    }
    Ok(PseudoVideo {
        frames: [first, cur],
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with_rects(h: usize, w: usize, rects: &[(u16, Rect)]) -> AnnotatedFrame {
        let mut grid = RasterGrid::filled(h, w, PAPER);
        let mut mask = InstanceMask::empty(h, w);
        for (l, r) in rects {
            for (x, y) in r.pixels() {
                grid.set(x, y, INK);
                mask.set(x, y, *l);
            }
        }
        AnnotatedFrame::new(grid, mask).unwrap()
    }

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Rect {
        Rect { x0, y0, x1, y1 }
    }

    #[test]
    fn genmap_empty_and_deterministic() {
        let cfg = SynthConfig::default();
        let f = gen_synthetic_map(64, 64, 0, &cfg, 3).unwrap();
        assert!(f.mask.inventory().is_empty());
        let a = gen_synthetic_map(128, 128, 5, &cfg, 11).unwrap();
        let b = gen_synthetic_map(128, 128, 5, &cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn genmap_rectangles_are_solid_and_separate() {
        let cfg = SynthConfig::default();
        let f = gen_synthetic_map(128, 128, 3, &cfg, 7).unwrap();
        assert_eq!(f.mask.inventory(), BTreeSet::from([1, 2, 3]));
        let cc = raster::connected_components(&f.mask.foreground());
        assert_eq!(cc.inventory().len(), 3);
        for l in 1..=3u16 {
            let m = f.mask.select(l);
            let (x0, y0, x1, y1) = m.bbox().unwrap();
            assert_eq!(m.count(), (x1 - x0) * (y1 - y0));
            assert!((5..=30).contains(&(x1 - x0)) && (5..=30).contains(&(y1 - y0)));
        }
    }

    #[test]
    fn genmap_infeasible_layout() {
        let cfg = SynthConfig {
            rect_size_range: (8, 8),
            ..SynthConfig::default()
        };
        assert!(matches!(gen_synthetic_map(10, 10, 5, &cfg, 1), Err(Error::LayoutInfeasible(_))));
    }

    #[test]
    fn shift_zero_range_is_identity() {
        let cfg = SynthConfig {
            shift_range: 0,
            ..SynthConfig::default()
        };
        let f = gen_synthetic_map(64, 64, 3, &cfg, 2).unwrap();
        let o = apply_shift(&f, &cfg, &mut cfg.rng());
        assert_eq!(o.frame, f);
    }

    #[test]
    fn shift_keeps_interior_building_area() {
        let f = frame_with_rects(40, 40, &[(1, rect(10, 10, 20, 18))]);
        let o = shift_by(&f, 5, -5);
        assert_eq!(o.frame.mask.area(1), 80);
    }

    #[test]
    fn shift_drops_building_pushed_off_edge() {
        let f = frame_with_rects(20, 20, &[(1, rect(17, 5, 20, 10)), (2, rect(2, 2, 6, 6))]);
        let o = shift_by(&f, 5, 0);
        assert_eq!(o.frame.mask.inventory(), BTreeSet::from([2]));
        assert!(matches!(o.event, Event::Shift { ref dropped, .. } if dropped == &vec![1]));
    }

    #[test]
    fn appearance_on_empty_frame() {
        let cfg = SynthConfig::default();
        let f = frame_with_rects(64, 64, &[]);
        for seed in 0..20 {
            let o = apply_appearance(&f, &cfg, &mut SynthRng::seed_from_u64(seed));
            assert_eq!(o.frame.mask.inventory(), BTreeSet::from([1]));
            let Event::Appear { rect, shape_change, .. } = o.event else { panic!() };
            assert!(!shape_change);
            assert!((5..=30).contains(&rect.width()) && (5..=30).contains(&rect.height()));
            assert_eq!(o.frame.mask.area(1), rect.width() * rect.height());
        }
    }

    #[test]
    fn appearance_inside_instance_is_shape_change() {
        let cfg = SynthConfig {
            rect_size_range: (5, 5),
            ..SynthConfig::default()
        };
        let f = frame_with_rects(10, 10, &[(7, rect(0, 0, 10, 10))]);
        let o = apply_appearance(&f, &cfg, &mut cfg.rng());
        assert_eq!(o.frame.mask.inventory(), BTreeSet::from([7]));
        assert_eq!(o.frame.mask.area(7), 100);
    }

    #[test]
    fn appearance_disjoint_gets_fresh_label() {
        let cfg = SynthConfig {
            rect_size_range: (5, 5),
            ..SynthConfig::default()
        };
        // all existing instances sit in one tiny corner region the rectangle can only miss
        let mut f = frame_with_rects(40, 40, &[(4, rect(0, 0, 1, 1))]);
        f.mask.set(39, 39, 2);
        for seed in 0..10 {
            let o = apply_appearance(&f, &cfg, &mut SynthRng::seed_from_u64(seed));
            match o.event {
                Event::Appear { label, shape_change: false, .. } => assert_eq!(label, 5),
                Event::Appear { shape_change: true, .. } => {}
                _ => panic!("unexpected {:?}", o.event),
            }
        }
    }

    #[test]
    fn appearance_never_touches_other_instances() {
        let cfg = SynthConfig::default();
        for seed in 0..30 {
            let f = gen_synthetic_map(64, 64, 4, &SynthConfig { rect_size_range: (5, 12), ..cfg.clone() }, seed).unwrap();
            let o = apply_appearance(&f, &cfg, &mut SynthRng::seed_from_u64(seed));
            let Event::Appear { label, .. } = o.event else { continue };
            for (i, (&before, &after)) in f.mask.labels().iter().zip(o.frame.mask.labels()).enumerate() {
                if before != 0 && before != label {
                    assert_eq!(after, before, "pixel {i} of instance {before} changed");
                }
            }
        }
    }

    #[test]
    fn disappearance_removes_one_instance() {
        let cfg = SynthConfig::default();
        let f = frame_with_rects(30, 30, &[(1, rect(1, 1, 6, 6))]);
        let o = apply_disappearance(&f, &cfg, &mut cfg.rng());
        assert!(o.frame.mask.inventory().is_empty());
        assert!(o.frame.grid.data().iter().all(|&v| v == PAPER));

        let f = frame_with_rects(30, 30, &[(1, rect(1, 1, 6, 6)), (2, rect(10, 10, 15, 15)), (3, rect(20, 1, 25, 6))]);
        let o = apply_disappearance(&f, &cfg, &mut cfg.rng());
        let Event::Disappear { label } = o.event else { panic!() };
        let inv = o.frame.mask.inventory();
        assert_eq!(inv.len(), 2);
        assert!(inv.is_subset(&BTreeSet::from([1, 2, 3])));
        let fill = f.background_intensity();
        for (i, &l) in f.mask.labels().iter().enumerate() {
            if l == label {
                assert_eq!(o.frame.grid.data()[i], fill);
            }
        }
    }

    #[test]
    fn merge_connects_close_pair_with_smallest_id() {
        let cfg = SynthConfig::default();
        let f = frame_with_rects(30, 30, &[(9, rect(5, 5, 10, 10)), (3, rect(12, 5, 17, 10)), (1, rect(25, 25, 28, 28))]);
        let o = apply_merge(&f, &cfg, &mut cfg.rng());
        let Event::Merge { kept, absorbed, .. } = o.event else { panic!("{:?}", o.event) };
        assert_eq!((kept, absorbed), (3, 9));
        let region = o.frame.mask.select(3);
        assert_eq!(raster::component_count(&region), 1);
        assert!(region.contains(&f.mask.select(3).union(&f.mask.select(9)).unwrap()));
        assert_eq!(o.frame.mask.inventory(), BTreeSet::from([1, 3]));
        assert_eq!(o.frame.mask.select(1), f.mask.select(1));
    }

    #[test]
    fn merge_skips_single_instance_and_far_pairs() {
        let cfg = SynthConfig::default();
        let f = frame_with_rects(30, 30, &[(1, rect(5, 5, 10, 10))]);
        let o = apply_merge(&f, &cfg, &mut cfg.rng());
        assert!(o.event.is_skipped());
        assert_eq!(o.frame, f);

        let cfg = SynthConfig {
            max_dilate_iters: 2,
            ..SynthConfig::default()
        };
        let f = frame_with_rects(40, 40, &[(1, rect(0, 0, 5, 5)), (2, rect(30, 30, 35, 35))]);
        let o = apply_merge(&f, &cfg, &mut cfg.rng());
        assert!(o.event.is_skipped());
        assert_eq!(o.frame, f);
    }

    #[test]
    fn pseudo_video_identity_config() {
        let cfg = SynthConfig {
            shift_range: 0,
            appear_count_range: (0, 0),
            disappear_count_range: (0, 0),
            merge_count_range: (0, 0),
            ..SynthConfig::default()
        };
        let f = gen_synthetic_map(64, 64, 3, &SynthConfig::default(), 5).unwrap();
        let v = synthesize_pseudo_video(&f, &cfg).unwrap();
        assert_eq!(v.frames[0], v.frames[1]);
    }

    #[test]
    fn pseudo_video_lineage_and_determinism() {
        let base = SynthConfig::default();
        for i in 0..40u64 {
            let f = gen_synthetic_map(128, 128, 6, &base, i).unwrap();
            let cfg = SynthConfig {
                seed: derive_seed(99, i),
                merge_count_range: (0, 2),
                ..base.clone()
            };
            let v = synthesize_pseudo_video(&f, &cfg).unwrap();
            let v2 = synthesize_pseudo_video(&f, &cfg).unwrap();
            assert_eq!(v.frames, v2.frames);
            let inv0 = v.frames[0].mask.inventory();
            let max0 = f.mask.max_label();
            for l in v.frames[1].mask.inventory() {
                assert!(inv0.contains(&l) || l > max0, "label {l} has no lineage");
            }
        }
    }
}
