//! COCO-style mean average precision for boxes and masks.
//!
//! Per image, detections are ranked by score (ties keep input order) and
//! capped at `max_dets`. For every category and IoU threshold, detections are
//! greedily matched to the best still-unmatched GT with IoU >= threshold;
//! crowd GT absorbs detections without counting them. Precision is made
//! monotone and sampled at 101 recall points.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::coco::{CategorySet, PanopticImage};
use crate::error::Result;
use crate::mask::{bbox_iou, mask_iou, BBox, BinaryMask, ScoredInstance};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bbox,
    Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub category_id: u32,
    pub mask: BinaryMask,
    pub bbox: BBox,
    pub iscrowd: bool,
}

impl GtInstance {
    pub fn new(category_id: u32, mask: BinaryMask, iscrowd: bool) -> Self {
        let bbox = mask.bbox().unwrap_or_default();
        Self {
            category_id,
            mask,
            bbox,
            iscrowd,
        }
    }
}

impl From<&ScoredInstance> for GtInstance {
    fn from(i: &ScoredInstance) -> Self {
        Self {
            category_id: i.category_id(),
            mask: i.mask().clone(),
            bbox: i.bbox(),
            iscrowd: false,
        }
    }
}

/// Thing segments of a panoptic annotation as instance ground truth.
pub fn gt_instances(pan: &PanopticImage, categories: &CategorySet) -> Vec<GtInstance> {
    pan.segments()
        .iter()
        .filter(|s| categories.is_thing(s.category_id))
        .map(|s| GtInstance {
            category_id: s.category_id,
            mask: pan.segment_mask(s.id),
            bbox: s.bbox,
            iscrowd: s.iscrowd,
        })
        .collect()
}

/// `count` evenly spaced values from `start` to `stop`, endpoint exact.
fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    let step = (stop - start) / (count - 1) as f64;
    let mut v: Vec<f64> = (0..count).map(|i| i as f64 * step + start).collect();
    v[count - 1] = stop;
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    pub max_dets: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            iou_thresholds: linspace(0.5, 0.95, 10),
            recall_points: 101,
            max_dets: 100,
        }
    }
}

impl MapParams {
    pub fn single_threshold(t: f64) -> Self {
        Self {
            iou_thresholds: vec![t],
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub mode: Option<IouMode>,
    /// Mean AP over categories with GT and all thresholds.
    pub map: f64,
    /// `(threshold, AP averaged over categories)`.
    pub per_threshold: Vec<(f64, f64)>,
    /// AP averaged over thresholds.
    pub per_category: BTreeMap<u32, f64>,
}

impl MapReport {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|(_, ap)| *ap)
    }
}

/// One detection's fate at every threshold, kept for accumulation.
struct DetRecord {
    score: f64,
    /// Per threshold: matched a GT.
    matched: Vec<bool>,
    /// Per threshold: matched a crowd GT and therefore ignored.
    ignored: Vec<bool>,
}

#[derive(Default)]
struct ImageCategoryEval {
    dets: Vec<DetRecord>,
    non_crowd_gt: usize,
}

fn iou(mode: IouMode, det: &ScoredInstance, gt: &GtInstance) -> f64 {
    match (mode, gt.iscrowd) {
        (IouMode::Mask, false) => mask_iou(det.mask(), &gt.mask).unwrap_or(0.0),
        (IouMode::Bbox, false) => bbox_iou(&det.bbox(), &gt.bbox),
        (IouMode::Mask, true) => {
            let inter = det.mask().intersection_area(&gt.mask).unwrap_or(0);
            inter as f64 / det.area() as f64
        }
        (IouMode::Bbox, true) => {
            let area = det.bbox().area();
            if area == 0 {
                0.0
            } else {
                det.bbox().intersection_area(&gt.bbox) as f64 / area as f64
            }
        }
    }
}

fn evaluate_image_category(
    dets: &[&ScoredInstance],
    gts: &[&GtInstance],
    mode: IouMode,
    thresholds: &[f64],
) -> ImageCategoryEval {
    // Non-crowd GT first, crowd after, each in input order.
    let mut gts: Vec<&GtInstance> = gts.to_vec();
    gts.sort_by_key(|g| g.iscrowd);
    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| iou(mode, d, g)).collect())
        .collect();
    let mut records: Vec<DetRecord> = dets
        .iter()
        .map(|d| DetRecord {
            score: d.score(),
            matched: vec![false; thresholds.len()],
            ignored: vec![false; thresholds.len()],
        })
        .collect();
    for (ti, &t) in thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for (di, rec) in records.iter_mut().enumerate() {
            let mut best_iou = t.min(1.0 - 1e-10);
            let mut best: Option<usize> = None;
            for (gi, g) in gts.iter().enumerate() {
                if gt_taken[gi] && !g.iscrowd {
                    continue;
                }
                // Once matched to a regular GT, stop before the crowd tail.
                if best.is_some_and(|b| !gts[b].iscrowd) && g.iscrowd {
                    break;
                }
                if ious[di][gi] < best_iou {
                    continue;
                }
                best_iou = ious[di][gi];
                best = Some(gi);
            }
            if let Some(gi) = best {
                gt_taken[gi] = true;
                rec.matched[ti] = true;
                rec.ignored[ti] = gts[gi].iscrowd;
            }
        }
    }
    ImageCategoryEval {
        dets: records,
        non_crowd_gt: gts.iter().filter(|g| !g.iscrowd).count(),
    }
}

/// AP from detections ranked by score. `None` when there is no non-crowd GT.
fn average_precision(
    ranked: &[(bool, bool)],
    non_crowd_gt: usize,
    recall_thresholds: &[f64],
) -> Option<f64> {
    if non_crowd_gt == 0 {
        return None;
    }
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(matched, ignored) in ranked {
        if ignored {
            continue;
        }
        if matched {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / non_crowd_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let sum: f64 = recall_thresholds
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(sum / recall_thresholds.len() as f64)
}

/// COCO mAP with default thresholds 0.50:0.05:0.95 and 100 detections per image.
pub fn coco_map(
    gt: &BTreeMap<u64, Vec<GtInstance>>,
    pred: &BTreeMap<u64, Vec<ScoredInstance>>,
    mode: IouMode,
) -> Result<MapReport> {
    coco_map_with(gt, pred, mode, &MapParams::default())
}

pub fn coco_map_with(
    gt: &BTreeMap<u64, Vec<GtInstance>>,
    pred: &BTreeMap<u64, Vec<ScoredInstance>>,
    mode: IouMode,
    params: &MapParams,
) -> Result<MapReport> {
    let image_ids: Vec<u64> = gt
        .keys()
        .chain(pred.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let categories: BTreeSet<u32> = gt.values().flatten().map(|g| g.category_id).collect();
    let thresholds = &params.iou_thresholds;

    let per_image: Vec<BTreeMap<u32, ImageCategoryEval>> = par::map(&image_ids, |id| {
        let gts: &[GtInstance] = gt.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let mut dets: Vec<&ScoredInstance> =
            pred.get(id).map(|v| v.iter().collect()).unwrap_or_default();
        dets.sort_by(|a, b| b.score().total_cmp(&a.score()));
        dets.truncate(params.max_dets);
        categories
            .iter()
            .map(|&c| {
                let d: Vec<&ScoredInstance> =
                    dets.iter().copied().filter(|d| d.category_id() == c).collect();
                let g: Vec<&GtInstance> = gts.iter().filter(|g| g.category_id == c).collect();
                (c, evaluate_image_category(&d, &g, mode, thresholds))
            })
            .collect()
    });

    let recall_thresholds = linspace(0.0, 1.0, params.recall_points);
    let mut per_category = BTreeMap::new();
    let mut per_threshold_sum = vec![0.0; thresholds.len()];
    let mut evaluated = 0usize;
    for &c in &categories {
        let mut dets: Vec<&DetRecord> = Vec::new();
        let mut non_crowd = 0usize;
        for img in &per_image {
            if let Some(e) = img.get(&c) {
                dets.extend(e.dets.iter());
                non_crowd += e.non_crowd_gt;
            }
        }
        // Stable: equal scores keep image order, then in-image rank.
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        let aps: Vec<f64> = (0..thresholds.len())
            .filter_map(|ti| {
                let ranked: Vec<(bool, bool)> =
                    dets.iter().map(|d| (d.matched[ti], d.ignored[ti])).collect();
                average_precision(&ranked, non_crowd, &recall_thresholds)
            })
            .collect();
        if aps.is_empty() {
            continue;
        }
        evaluated += 1;
        for (s, ap) in per_threshold_sum.iter_mut().zip(&aps) {
            *s += ap;
        }
        per_category.insert(c, aps.iter().sum::<f64>() / aps.len() as f64);
    }
    let per_threshold: Vec<(f64, f64)> = thresholds
        .iter()
        .zip(&per_threshold_sum)
        .map(|(&t, &s)| (t, if evaluated == 0 { 0.0 } else { s / evaluated as f64 }))
        .collect();
    let map = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold.len() as f64
    };
    Ok(MapReport {
        mode: Some(mode),
        map,
        per_threshold,
        per_category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x: u32, y: u32, w: u32, h: u32) -> BinaryMask {
        BinaryMask::from_bbox(40, 20, BBox::new(x, y, w, h)).unwrap()
    }

    fn det(cat: u32, score: f64, m: BinaryMask) -> ScoredInstance {
        ScoredInstance::new(cat, score, m).unwrap()
    }

    #[test]
    fn thresholds_match_coco_grid() {
        let t = MapParams::default().iou_thresholds;
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        assert!((t[3] - 0.65).abs() < 1e-12);
        // Same rounding as numpy.linspace(0.5, 0.95, 10).
        assert_eq!(t[8], 0.8999999999999999);
    }

    #[test]
    fn identical_predictions_score_one() {
        let g = vec![det(1, 1.0, rect(0, 0, 5, 5)), det(2, 1.0, rect(10, 2, 8, 6))];
        let gt = BTreeMap::from([(1, g.iter().map(GtInstance::from).collect())]);
        let pred = BTreeMap::from([(1, g)]);
        for mode in [IouMode::Mask, IouMode::Bbox] {
            assert_eq!(coco_map(&gt, &pred, mode).unwrap().map, 1.0);
        }
    }

    #[test]
    fn no_predictions_score_zero() {
        let gt = BTreeMap::from([(1, vec![GtInstance::new(1, rect(0, 0, 5, 5), false)])]);
        let r = coco_map(&gt, &BTreeMap::new(), IouMode::Mask).unwrap();
        assert_eq!(r.map, 0.0);
        assert_eq!(r.per_category.len(), 1);
    }

    #[test]
    fn one_gt_two_predictions() {
        // GT 10x10. Pred A (score 0.9) overlaps 30 px of a 10x10 box -> IoU 30/170.
        // Pred B (score 0.8) is 9x10 inside -> IoU 0.9.
        let gt_mask = rect(0, 0, 10, 10);
        let a = det(1, 0.9, rect(7, 0, 10, 10));
        let b = det(1, 0.8, rect(0, 0, 9, 10));
        assert!((mask_iou(a.mask(), &gt_mask).unwrap() - 30.0 / 170.0).abs() < 1e-12);
        assert!((mask_iou(b.mask(), &gt_mask).unwrap() - 0.9).abs() < 1e-12);
        let gt = BTreeMap::from([(1, vec![GtInstance::new(1, gt_mask, false)])]);
        let pred = BTreeMap::from([(1, vec![a, b])]);
        let r = coco_map_with(&gt, &pred, IouMode::Mask, &MapParams::single_threshold(0.5))
            .unwrap();
        // Ranked: FP then TP. Precision [0, 1/2] -> envelope [1/2, 1/2]; every
        // recall point maps to 1/2.
        assert!((r.map - 0.5).abs() < 1e-9);
    }

    #[test]
    fn crowd_absorbs_detection() {
        let gt = BTreeMap::from([(
            1,
            vec![
                GtInstance::new(1, rect(0, 0, 10, 10), false),
                GtInstance::new(1, rect(20, 0, 20, 20), true),
            ],
        )]);
        let pred = BTreeMap::from([(
            1,
            vec![
                det(1, 0.95, rect(22, 2, 5, 5)),
                det(1, 0.9, rect(0, 0, 10, 10)),
            ],
        )]);
        let r = coco_map(&gt, &pred, IouMode::Mask).unwrap();
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn max_dets_caps_per_image() {
        let gt = BTreeMap::from([(1, vec![GtInstance::new(1, rect(0, 0, 4, 4), false)])]);
        let pred = BTreeMap::from([(
            1,
            vec![det(1, 0.9, rect(30, 10, 3, 3)), det(1, 0.5, rect(0, 0, 4, 4))],
        )]);
        let params = MapParams {
            max_dets: 1,
            ..MapParams::single_threshold(0.5)
        };
        assert_eq!(coco_map_with(&gt, &pred, IouMode::Mask, &params).unwrap().map, 0.0);
    }

    /// Exhaustive AP oracle at one threshold for tiny inputs: enumerates every
    /// greedy-consistent assignment by replaying the rule literally on dense data.
    fn brute_force_ap(gts: &[BinaryMask], dets: &[(f64, BinaryMask)], t: f64) -> f64 {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].0.partial_cmp(&dets[a].0).unwrap().then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        let mut flags = Vec::new();
        for &d in &order {
            let a = crate::mask::rle_decode(&dets[d].1);
            let mut best: Option<(usize, f64)> = None;
            for (g, gm) in gts.iter().enumerate() {
                let b = crate::mask::rle_decode(gm);
                let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as f64;
                let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count() as f64;
                let iou = inter / union;
                if !taken[g] && iou >= t && best.is_none_or(|(_, bi)| iou >= bi) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            flags.push(best.is_some());
        }
        let mut prec = Vec::new();
        let mut rec = Vec::new();
        let mut tp = 0.0;
        for (i, &f) in flags.iter().enumerate() {
            if f {
                tp += 1.0;
            }
            prec.push(tp / (i + 1) as f64);
            rec.push(tp / gts.len() as f64);
        }
        (0..=100)
            .map(|r| {
                let r = r as f64 / 100.0;
                // Interpolated precision: best precision at any recall >= r.
                (0..prec.len())
                    .filter(|&i| rec[i] >= r - 1e-12)
                    .map(|i| prec[i])
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 101.0
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn boxes(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(u32, u32, u32, u32)>> {
            prop::collection::vec((0u32..30, 0u32..12, 2u32..10, 2u32..8), n)
        }

        proptest! {
            #[test]
            fn single_threshold_matches_oracle(
                g in boxes(1..4),
                d in boxes(0..4),
                scores in prop::collection::vec(0.01f64..1.0, 4),
            ) {
                let gts: Vec<BinaryMask> = g.iter().map(|b| rect(b.0, b.1, b.2, b.3)).collect();
                let dets: Vec<(f64, BinaryMask)> = d
                    .iter()
                    .zip(&scores)
                    .map(|(b, &s)| (s, rect(b.0, b.1, b.2, b.3)))
                    .collect();
                let gt = BTreeMap::from([(1, gts.iter().cloned().map(|m| GtInstance::new(1, m, false)).collect())]);
                let pred = BTreeMap::from([(1, dets.iter().map(|(s, m)| det(1, *s, m.clone())).collect())]);
                let r = coco_map_with(&gt, &pred, IouMode::Mask, &MapParams::single_threshold(0.5)).unwrap();
                let expected = brute_force_ap(&gts, &dets, 0.5);
                prop_assert!((r.map - expected).abs() < 1e-9, "{} vs {}", r.map, expected);
            }
        }
    }
}
