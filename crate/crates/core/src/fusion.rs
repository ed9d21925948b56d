//! Greedy combination of instance predictions with a semantic label map.
//!
//! Instances are rasterized in priority order (score, then mask area, then
//! input order); each claims only pixels nobody claimed before it and is
//! dropped when too much of its mask is already taken. Remaining pixels take
//! their semantic label: every stuff category becomes at most one segment,
//! small stuff segments are dropped, and merged-thing or VOID pixels stay VOID.

use std::collections::{BTreeMap, HashMap};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::coco::{CategorySet, PanopticImage};
use crate::error::{Error, Result};
use crate::mask::{LabelMap, ScoredInstance, VOID};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Instances scoring below this are discarded.
    pub score_threshold: f64,
    /// Largest fraction of an instance's mask that may already be claimed.
    pub overlap_threshold: f64,
    /// Stuff segments smaller than this many pixels are dropped.
    pub stuff_area_min: u64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            overlap_threshold: 0.5,
            stuff_area_min: 4096,
        }
    }
}

impl FusionParams {
    pub fn new(score_threshold: f64, overlap_threshold: f64, stuff_area_min: u64) -> Result<Self> {
        let p = Self {
            score_threshold,
            overlap_threshold,
            stuff_area_min,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters that never drop anything on account of score, overlap or area.
    pub fn keep_all() -> Self {
        Self {
            score_threshold: 0.0,
            overlap_threshold: 1.0,
            stuff_area_min: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("overlap_threshold", self.overlap_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Exact drop and coverage counts; sums across images by plain addition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionStats {
    pub images: u64,
    pub instances_in: u64,
    pub instances_kept: u64,
    pub dropped_low_score: u64,
    /// Too much of the mask was already claimed (including fully covered masks).
    pub dropped_overlap: u64,
    pub stuff_segments_kept: u64,
    pub dropped_stuff_segments: u64,
    pub void_pixels: u64,
    pub total_pixels: u64,
}

impl FusionStats {
    pub fn void_fraction(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.void_pixels as f64 / self.total_pixels as f64
        }
    }
}

impl AddAssign for FusionStats {
    fn add_assign(&mut self, o: Self) {
        self.images += o.images;
        self.instances_in += o.instances_in;
        self.instances_kept += o.instances_kept;
        self.dropped_low_score += o.dropped_low_score;
        self.dropped_overlap += o.dropped_overlap;
        self.stuff_segments_kept += o.stuff_segments_kept;
        self.dropped_stuff_segments += o.dropped_stuff_segments;
        self.void_pixels += o.void_pixels;
        self.total_pixels += o.total_pixels;
    }
}

/// Priority order: score descending, then larger mask, then input index.
pub fn priority_order(instances: &[ScoredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (&instances[a], &instances[b]);
        ib.score()
            .total_cmp(&ia.score())
            .then(ib.area().cmp(&ia.area()))
            .then(a.cmp(&b))
    });
    order
}

fn check_inputs(
    instances: &[ScoredInstance],
    semantic: &LabelMap,
    params: &FusionParams,
    categories: &CategorySet,
) -> Result<()> {
    params.validate()?;
    for inst in instances {
        let dims = (inst.mask().width(), inst.mask().height());
        if dims != semantic.dims() {
            return Err(Error::DimensionMismatch {
                expected: semantic.dims(),
                found: dims,
            });
        }
        match categories.get(inst.category_id()) {
            None => return Err(Error::UnknownCategory(inst.category_id())),
            Some(c) if !c.is_thing => return Err(Error::StuffInstance(c.id)),
            Some(_) => {}
        }
    }
    let known = |l: u32| categories.contains(l) || l == categories.merged_thing_id();
    if let Some(l) = semantic.find_unknown(known) {
        return Err(Error::UnknownCategory(l));
    }
    Ok(())
}

/// Fuse one image's instances and semantic labels into a panoptic image.
pub fn fuse(
    instances: &[ScoredInstance],
    semantic: &LabelMap,
    params: &FusionParams,
    categories: &CategorySet,
) -> Result<(PanopticImage, FusionStats)> {
    check_inputs(instances, semantic, params, categories)?;
    let (width, height) = semantic.dims();
    let mut stats = FusionStats {
        images: 1,
        instances_in: instances.len() as u64,
        total_pixels: semantic.labels().len() as u64,
        ..Default::default()
    };
    let mut id_map = vec![VOID; semantic.labels().len()];
    let mut labels: Vec<(u32, u32, bool)> = Vec::new();
    let mut next_id = 1u32;

    for idx in priority_order(instances) {
        let inst = &instances[idx];
        if inst.score() < params.score_threshold {
            stats.dropped_low_score += 1;
            continue;
        }
        let area = inst.area();
        let claimed = inst
            .mask()
            .foreground()
            .filter(|&p| id_map[p] != VOID)
            .count() as u64;
        if claimed == area || claimed as f64 / area as f64 > params.overlap_threshold {
            stats.dropped_overlap += 1;
            continue;
        }
        for (s, e) in inst.mask().intervals() {
            for slot in &mut id_map[s..e] {
                if *slot == VOID {
                    *slot = next_id;
                }
            }
        }
        labels.push((next_id, inst.category_id(), false));
        next_id += 1;
        stats.instances_kept += 1;
    }

    let mut stuff_area: BTreeMap<u32, u64> = BTreeMap::new();
    for (&claim, &label) in id_map.iter().zip(semantic.labels()) {
        if claim == VOID && categories.is_stuff(label) {
            *stuff_area.entry(label).or_default() += 1;
        }
    }
    let mut stuff_ids: HashMap<u32, u32> = HashMap::new();
    for (category, area) in stuff_area {
        if area < params.stuff_area_min {
            stats.dropped_stuff_segments += 1;
            continue;
        }
        stuff_ids.insert(category, next_id);
        labels.push((next_id, category, false));
        next_id += 1;
        stats.stuff_segments_kept += 1;
    }
    for (slot, label) in id_map.iter_mut().zip(semantic.labels()) {
        if *slot == VOID {
            *slot = stuff_ids.get(label).copied().unwrap_or(VOID);
        }
    }
    stats.void_pixels = id_map.iter().filter(|&&id| id == VOID).count() as u64;

    let pan = PanopticImage::from_id_map(width, height, id_map, &labels)?;
    Ok((pan, stats))
}

/// Inputs for one image of a batch.
#[derive(Clone, Debug)]
pub struct FusionInput {
    pub image_id: u64,
    pub instances: Vec<ScoredInstance>,
    pub semantic: LabelMap,
}

#[derive(Clone, Debug, Default)]
pub struct FusionBatch {
    pub images: Vec<(u64, PanopticImage)>,
    pub stats: FusionStats,
}

/// Fuse every image, in parallel where enabled. Output keeps input order and
/// statistics are summed in that order, so results do not depend on worker count.
pub fn fuse_batch(
    inputs: &[FusionInput],
    params: &FusionParams,
    categories: &CategorySet,
) -> Result<FusionBatch> {
    params.validate()?;
    let fused = par::try_map(inputs, |inp| {
        fuse(&inp.instances, &inp.semantic, params, categories)
            .map(|r| (inp.image_id, r))
            .map_err(|e| e.in_image(inp.image_id))
    })?;
    let mut batch = FusionBatch::default();
    for (image_id, (pan, stats)) in fused {
        batch.stats += stats;
        batch.images.push((image_id, pan));
    }
    Ok(batch)
}
