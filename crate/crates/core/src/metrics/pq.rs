//! Panoptic quality.
//!
//! A ground-truth and a predicted segment match when they share a category
//! and their IoU exceeds 0.5, where the predicted segment's pixels on GT VOID
//! do not count toward the union. Crowd GT segments never match; an unmatched
//! prediction lying mostly (> 0.5) on VOID or same-category crowd pixels is
//! not a false positive.

use std::collections::{BTreeMap, HashMap};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::coco::{validate_panoptic_with, CategorySet, PanopticImage, SegmentInfo};
use crate::error::{Error, Result};
use crate::mask::VOID;
use crate::par;

/// IoU a pair must strictly exceed to match.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqAccumulator {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl AddAssign for PqAccumulator {
    fn add_assign(&mut self, o: Self) {
        self.iou_sum += o.iou_sum;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl PqAccumulator {
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `(pq, sq, rq)` with zero for undefined ratios.
    pub fn scores(&self) -> (f64, f64, f64) {
        let tp = self.tp as f64;
        let denom = tp + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        let sq = if self.tp == 0 { 0.0 } else { self.iou_sum / tp };
        let rq = if denom == 0.0 { 0.0 } else { tp / denom };
        let pq = if denom == 0.0 { 0.0 } else { self.iou_sum / denom };
        (pq, sq, rq)
    }
}

/// Per-category PQ accumulators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqStats {
    pub per_category: BTreeMap<u32, PqAccumulator>,
}

impl AddAssign<&PqStats> for PqStats {
    fn add_assign(&mut self, o: &PqStats) {
        for (&c, acc) in &o.per_category {
            *self.per_category.entry(c).or_default() += *acc;
        }
    }
}

impl PqStats {
    fn entry(&mut self, category: u32) -> &mut PqAccumulator {
        self.per_category.entry(category).or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SegmentMatch {
    pub gt_id: u32,
    pub pred_id: u32,
    pub category_id: u32,
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MatchResult {
    /// Sorted by GT segment id.
    pub matches: Vec<SegmentMatch>,
    pub stats: PqStats,
}

/// Pixel counts of every `(gt id, pred id)` pair that co-occurs.
pub(crate) fn pair_counts(gt: &[u32], pred: &[u32]) -> HashMap<(u32, u32), u64> {
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut iter = gt.iter().copied().zip(pred.iter().copied());
    let Some(mut current) = iter.next() else {
        return counts;
    };
    let mut run = 1u64;
    for pair in iter {
        if pair == current {
            run += 1;
        } else {
            *counts.entry(current).or_default() += run;
            current = pair;
            run = 1;
        }
    }
    *counts.entry(current).or_default() += run;
    counts
}

fn check_image(pan: &PanopticImage, categories: &CategorySet, which: &str) -> Result<()> {
    let report = validate_panoptic_with(pan, categories);
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::InvalidPanoptic(format!(
            "{which}: {v} ({} violation(s))",
            report.violations.len()
        ))),
    }
}

/// Match segments of one image and tally TP/FP/FN per category.
pub fn match_segments(
    gt: &PanopticImage,
    pred: &PanopticImage,
    categories: &CategorySet,
) -> Result<MatchResult> {
    if gt.dims() != pred.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    check_image(gt, categories, "ground truth")?;
    check_image(pred, categories, "prediction")?;

    let counts = pair_counts(gt.id_map(), pred.id_map());
    let gt_segs: HashMap<u32, &SegmentInfo> = gt.segments().iter().map(|s| (s.id, s)).collect();
    let pred_segs: HashMap<u32, &SegmentInfo> =
        pred.segments().iter().map(|s| (s.id, s)).collect();
    let on_void = |pred_id: u32| counts.get(&(VOID, pred_id)).copied().unwrap_or(0);

    let mut matches = Vec::new();
    for (&(gt_id, pred_id), &inter) in &counts {
        if gt_id == VOID || pred_id == VOID {
            continue;
        }
        let (g, p) = (gt_segs[&gt_id], pred_segs[&pred_id]);
        if g.iscrowd || g.category_id != p.category_id {
            continue;
        }
        let union = p.area + g.area - inter - on_void(pred_id);
        let iou = inter as f64 / union as f64;
        if iou > MATCH_IOU {
            matches.push(SegmentMatch {
                gt_id,
                pred_id,
                category_id: g.category_id,
                iou,
            });
        }
    }
    matches.sort_by_key(|m| m.gt_id);

    let mut stats = PqStats::default();
    for m in &matches {
        let acc = stats.entry(m.category_id);
        acc.tp += 1;
        acc.iou_sum += m.iou;
    }
    let matched_gt: Vec<u32> = matches.iter().map(|m| m.gt_id).collect();
    let mut matched_pred: Vec<u32> = matches.iter().map(|m| m.pred_id).collect();
    matched_pred.sort_unstable();

    for g in gt.segments() {
        if !g.iscrowd && matched_gt.binary_search(&g.id).is_err() {
            stats.entry(g.category_id).fn_ += 1;
        }
    }
    for p in pred.segments() {
        if matched_pred.binary_search(&p.id).is_ok() {
            continue;
        }
        let crowd: u64 = gt
            .segments()
            .iter()
            .filter(|g| g.iscrowd && g.category_id == p.category_id)
            .map(|g| counts.get(&(g.id, p.id)).copied().unwrap_or(0))
            .sum();
        let ignored = on_void(p.id) + crowd;
        if ignored as f64 / p.area as f64 > MATCH_IOU {
            continue;
        }
        stats.entry(p.category_id).fp += 1;
    }
    Ok(MatchResult { matches, stats })
}

pub fn pq_match(
    gt: &PanopticImage,
    pred: &PanopticImage,
    categories: &CategorySet,
) -> Result<PqStats> {
    match_segments(gt, pred, categories).map(|m| m.stats)
}

/// Accumulate PQ statistics over a dataset. Images are paired by id; a GT
/// image without a prediction is scored against an all-VOID prediction.
/// Per-image work runs in parallel; the reduction follows GT id order.
pub fn pq_dataset(
    gt: &[(u64, PanopticImage)],
    pred: &[(u64, PanopticImage)],
    categories: &CategorySet,
) -> Result<PqStats> {
    let preds: BTreeMap<u64, &PanopticImage> = pred.iter().map(|(id, p)| (*id, p)).collect();
    if let Some(id) = preds.keys().find(|id| !gt.iter().any(|(g, _)| g == *id)) {
        return Err(Error::InvalidPanoptic(format!(
            "prediction for image {id} has no ground truth"
        )));
    }
    let mut sorted: Vec<&(u64, PanopticImage)> = gt.iter().collect();
    sorted.sort_by_key(|(id, _)| *id);
    let per_image = par::try_map(&sorted, |(id, g)| {
        let stats = match preds.get(id) {
            Some(p) => pq_match(g, p, categories),
            None => {
                log::warn!("image {id} has no prediction; scoring it as all VOID");
                let empty = PanopticImage::from_parts(
                    g.width(),
                    g.height(),
                    vec![VOID; g.id_map().len()],
                    vec![],
                )?;
                pq_match(g, &empty, categories)
            }
        };
        stats.map_err(|e| e.in_image(*id))
    })?;
    let mut total = PqStats::default();
    for s in &per_image {
        total += s;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqScores {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Category-averaged PQ over `n` categories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqMean {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqSummary {
    pub per_category: BTreeMap<u32, PqScores>,
    pub all: PqMean,
    pub things: PqMean,
    pub stuff: PqMean,
}

fn mean<'a>(scores: impl Iterator<Item = &'a PqScores>) -> PqMean {
    let mut m = PqMean::default();
    for s in scores {
        m.pq += s.pq;
        m.sq += s.sq;
        m.rq += s.rq;
        m.n += 1;
    }
    if m.n > 0 {
        let n = m.n as f64;
        m.pq /= n;
        m.sq /= n;
        m.rq /= n;
    }
    m
}

/// Per-category PQ/SQ/RQ and their means over categories that appear in
/// either GT or predictions (any TP, FP or FN).
pub fn pq_summarize(stats: &PqStats, categories: &CategorySet) -> PqSummary {
    let per_category: BTreeMap<u32, PqScores> = stats
        .per_category
        .iter()
        .filter(|(_, acc)| !acc.is_empty())
        .map(|(&c, acc)| {
            let (pq, sq, rq) = acc.scores();
            let s = PqScores {
                pq,
                sq,
                rq,
                tp: acc.tp,
                fp: acc.fp,
                fn_: acc.fn_,
            };
            (c, s)
        })
        .collect();
    PqSummary {
        all: mean(per_category.values()),
        things: mean(
            per_category
                .iter()
                .filter(|(c, _)| categories.is_thing(**c))
                .map(|(_, s)| s),
        ),
        stuff: mean(
            per_category
                .iter()
                .filter(|(c, _)| !categories.is_thing(**c))
                .map(|(_, s)| s),
        ),
        per_category,
    }
}
