//! Video instance metrics (spatio-temporal IoU, greedy matching, P/R/F1) and
//! micro-averaged IoU for semantic segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linker::LinkedInstance;
use crate::raster::{self, BinaryMask};

/// Default st-IoU a prediction must exceed to count as a true positive.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: u32,
    pub gt: u32,
    pub st_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchPair>,
}

impl MatchResult {
    /// Sum counts of several videos; pairs are concatenated.
    pub fn accumulate(&mut self, other: &MatchResult) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.pairs.extend(other.pairs.iter().cloned());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Summed intersections and unions over frames.
pub fn st_overlap(pred: &LinkedInstance, gt: &LinkedInstance) -> Result<(usize, usize)> {
    if pred.masks.len() != gt.masks.len() {
        return Err(Error::dims(format!("{} frames", gt.masks.len()), format!("{} frames", pred.masks.len())));
    }
    let mut inter = 0;
    let mut union = 0;
    for (p, g) in pred.masks.iter().zip(&gt.masks) {
        let (i, u) = raster::overlap_counts(p, g)?;
        inter += i;
        union += u;
    }
    Ok((inter, union))
}

/// Spatio-temporal IoU; two entirely empty tracks score 1.
pub fn st_iou(pred: &LinkedInstance, gt: &LinkedInstance) -> Result<f64> {
    let (inter, union) = st_overlap(pred, gt)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Greedy one-to-one matching in descending st-IoU order (ties by smaller pred
/// id, then smaller gt id). Only pairs strictly above `threshold` match.
pub fn match_instances(preds: &[LinkedInstance], gts: &[LinkedInstance], threshold: f64) -> Result<MatchResult> {
    let mut cand = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let v = st_iou(p, g)?;
            if v > threshold {
                cand.push((v, pi, gi));
            }
        }
    }
    cand.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(preds[a.1].id.cmp(&preds[b.1].id))
            .then(gts[a.2].id.cmp(&gts[b.2].id))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (v, pi, gi) in cand {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        pairs.push(MatchPair {
            pred: preds[pi].id,
            gt: gts[gi].id,
            st_iou: v,
        });
    }
    Ok(MatchResult {
        tp: pairs.len(),
        fp: preds.len() - pairs.len(),
        fn_: gts.len() - pairs.len(),
        pairs,
    })
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn prf1(m: &MatchResult) -> Prf1 {
    let precision = ratio(m.tp, m.tp + m.fp);
    let recall = ratio(m.tp, m.tp + m.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

pub fn semantic_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    raster::binary_iou(pred, gt)
}

/// Dataset-level IoU: total intersection over total union across tiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroIou {
    pub intersection: usize,
    pub union: usize,
}

impl MicroIou {
    pub fn add(&mut self, pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
        let (i, u) = raster::overlap_counts(pred, gt)?;
        self.intersection += i;
        self.union += u;
        Ok(())
    }

    pub fn value(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strip(w: usize, on: std::ops::Range<usize>) -> BinaryMask {
        BinaryMask::new(1, w, (0..w).map(|i| on.contains(&i)).collect()).unwrap()
    }

    fn track(id: u32, masks: Vec<BinaryMask>) -> LinkedInstance {
        LinkedInstance { id, masks }
    }

    #[test]
    fn st_iou_hand_values() {
        // frame 0: |p|=4, |g|=4, overlap 2; frame 1: identical 4-pixel masks
        let p = track(1, vec![strip(8, 0..4), strip(8, 0..4)]);
        let g = track(1, vec![strip(8, 2..6), strip(8, 0..4)]);
        assert!((st_iou(&p, &g).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(st_iou(&p, &p).unwrap(), 1.0);
        let empty = track(2, vec![strip(8, 0..0), strip(8, 0..0)]);
        assert_eq!(st_iou(&empty, &g).unwrap(), 0.0);
        assert_eq!(st_iou(&empty, &empty).unwrap(), 1.0);
        assert!(st_iou(&track(3, vec![strip(8, 0..1)]), &g).is_err());
    }

    #[test]
    fn counting_contract() {
        let g: Vec<_> = (0..3).map(|i| track(i, vec![strip(12, i as usize * 4..i as usize * 4 + 4)])).collect();
        let p = vec![track(10, vec![strip(12, 0..4)]), track(11, vec![strip(12, 9..10)])];
        let m = match_instances(&p, &g, MATCH_THRESHOLD).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 2));
        let s = prf1(&m);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 0.4).abs() < 1e-12);

        let m = match_instances(&g, &g, MATCH_THRESHOLD).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
        let s = prf1(&m);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = prf1(&MatchResult::default());
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn threshold_is_strict() {
        let p = vec![track(1, vec![strip(4, 0..2)])];
        let g = vec![track(1, vec![strip(4, 0..1)])];
        assert_eq!(match_instances(&p, &g, 0.5).unwrap().tp, 0);
    }

    #[test]
    fn micro_iou_sums_before_dividing() {
        let mut acc = MicroIou::default();
        acc.add(&strip(8, 0..4), &strip(8, 2..6)).unwrap();
        acc.add(&strip(8, 0..4), &strip(8, 0..4)).unwrap();
        assert_eq!((acc.intersection, acc.union), (6, 10));
        assert!((acc.value() - 0.6).abs() < 1e-12);
        assert_eq!(semantic_iou(&strip(4, 0..0), &strip(4, 1..2)).unwrap(), 0.0);
    }

    fn arb_track(frames: usize, w: usize) -> impl Strategy<Value = Vec<BinaryMask>> {
        proptest::collection::vec(proptest::collection::vec(any::<bool>(), w), frames)
            .prop_map(move |fs| fs.into_iter().map(|b| BinaryMask::new(1, w, b).unwrap()).collect())
    }

    proptest! {
        #[test]
        fn st_iou_symmetric_and_bounded(a in arb_track(3, 6), b in arb_track(3, 6)) {
            let (pa, pb) = (track(0, a.clone()), track(1, b.clone()));
            let x = st_iou(&pa, &pb).unwrap();
            prop_assert_eq!(x, st_iou(&pb, &pa).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
            // appending a frame empty in both leaves the value unchanged
            let mut a2 = a; a2.push(BinaryMask::empty(1, 6));
            let mut b2 = b; b2.push(BinaryMask::empty(1, 6));
            prop_assert_eq!(x, st_iou(&track(0, a2), &track(1, b2)).unwrap());
        }

        #[test]
        fn counts_are_consistent(ps in proptest::collection::vec(arb_track(2, 5), 0..5),
                                 gs in proptest::collection::vec(arb_track(2, 5), 0..5)) {
            let preds: Vec<_> = ps.into_iter().enumerate().map(|(i, m)| track(i as u32, m)).collect();
            let gts: Vec<_> = gs.into_iter().enumerate().map(|(i, m)| track(i as u32, m)).collect();
            let m = match_instances(&preds, &gts, 0.5).unwrap();
            prop_assert_eq!(m.tp + m.fn_, gts.len());
            prop_assert_eq!(m.tp + m.fp, preds.len());
            prop_assert_eq!(m.tp, m.pairs.len());
        }
    }
}
