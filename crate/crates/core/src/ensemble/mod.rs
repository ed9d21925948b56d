//! Semantic-model ensembling by averaging per-pixel category confidences.
//!
//! Probabilities are stored as `f32` (the on-disk precision). Averages are
//! accumulated in `f64` with compensated summation in input order and rounded
//! once to `f32`, so the result does not depend on how pixels are split
//! across workers.

mod container;

pub use container::{read_confidence_map, write_confidence_map, MAGIC, VERSION};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mask::{pixel_count, LabelMap};
use crate::par;

/// Per-pixel sums further than this from 1 are rejected.
pub const REJECT_TOLERANCE: f64 = 1e-3;
/// Per-pixel sums within this of 1 are accepted as-is; drift between the two
/// tolerances is renormalized with a warning.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

const ROWS_PER_TASK: usize = 16;

/// Per-pixel probability vectors over an ordered category list.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticConfidenceMap {
    width: u32,
    height: u32,
    category_ids: Vec<u32>,
    /// Pixel-major: `probs[pixel * k + c]`.
    probs: Vec<f32>,
}

impl SemanticConfidenceMap {
    /// Validate and, if needed, renormalize pixel-major probabilities.
    pub fn new(width: u32, height: u32, category_ids: Vec<u32>, probs: Vec<f32>) -> Result<Self> {
        let mut map = Self::unchecked(width, height, category_ids, probs)?;
        let k = map.category_ids.len();
        let mut renormalized = 0usize;
        for (p, v) in map.probs.chunks_exact_mut(k).enumerate() {
            if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::InvalidConfidenceMap(format!(
                    "pixel {p} holds invalid confidence {bad}"
                )));
            }
            let sum: f64 = v.iter().map(|&x| x as f64).sum();
            let drift = (sum - 1.0).abs();
            if drift > REJECT_TOLERANCE {
                return Err(Error::InvalidConfidenceMap(format!(
                    "pixel {p} confidences sum to {sum}"
                )));
            }
            if drift > NORMALIZATION_TOLERANCE {
                for x in v.iter_mut() {
                    *x = (*x as f64 / sum) as f32;
                }
                renormalized += 1;
            }
        }
        if renormalized > 0 {
            log::warn!("renormalized {renormalized} pixels whose confidences drifted from 1");
        }
        Ok(map)
    }

    fn unchecked(width: u32, height: u32, category_ids: Vec<u32>, probs: Vec<f32>) -> Result<Self> {
        let n = pixel_count(width, height)?;
        if category_ids.is_empty() {
            return Err(Error::InvalidConfidenceMap("no categories".into()));
        }
        let unique: BTreeSet<_> = category_ids.iter().collect();
        if unique.len() != category_ids.len() {
            return Err(Error::InvalidConfidenceMap(
                "duplicate category ids".into(),
            ));
        }
        if probs.len() != n * category_ids.len() {
            return Err(Error::InvalidConfidenceMap(format!(
                "{} values for {n} pixels x {} categories",
                probs.len(),
                category_ids.len()
            )));
        }
        Ok(Self {
            width,
            height,
            category_ids,
            probs,
        })
    }

    /// Build from category planes (`planes[c * n + pixel]`), as stored on disk.
    pub fn from_planes(
        width: u32,
        height: u32,
        category_ids: Vec<u32>,
        planes: &[f32],
    ) -> Result<Self> {
        let n = pixel_count(width, height)?;
        let k = category_ids.len();
        if planes.len() != n * k {
            return Err(Error::InvalidConfidenceMap(format!(
                "{} plane values for {n} pixels x {k} categories",
                planes.len()
            )));
        }
        let mut probs = vec![0f32; n * k];
        for c in 0..k {
            for p in 0..n {
                probs[p * k + c] = planes[c * n + p];
            }
        }
        Self::new(width, height, category_ids, probs)
    }

    /// Category-major copy of the probabilities.
    pub fn to_planes(&self) -> Vec<f32> {
        let n = self.pixels();
        let k = self.category_ids.len();
        let mut planes = vec![0f32; n * k];
        for p in 0..n {
            for c in 0..k {
                planes[c * n + p] = self.probs[p * k + c];
            }
        }
        planes
    }

    /// Confidence 1 on each pixel's label. Labels missing from `category_ids`
    /// (including VOID) are an error.
    pub fn one_hot(labels: &LabelMap, category_ids: Vec<u32>) -> Result<Self> {
        let k = category_ids.len();
        let mut probs = vec![0f32; labels.labels().len() * k];
        for (p, &l) in labels.labels().iter().enumerate() {
            let c = category_ids
                .iter()
                .position(|&id| id == l)
                .ok_or(Error::UnknownCategory(l))?;
            probs[p * k + c] = 1.0;
        }
        Self::new(labels.width(), labels.height(), category_ids, probs)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn category_ids(&self) -> &[u32] {
        &self.category_ids
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Probability vector of one pixel (linear row-major index).
    pub fn pixel(&self, index: usize) -> &[f32] {
        let k = self.category_ids.len();
        &self.probs[index * k..(index + 1) * k]
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }
}

/// Neumaier-compensated sum, accumulated in the given order.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Unweighted mean of the inputs' per-pixel, per-category confidences.
pub fn ensemble_average(maps: &[SemanticConfidenceMap]) -> Result<SemanticConfidenceMap> {
    let first = maps.first().ok_or(Error::NoInputs("ensemble needs at least one map"))?;
    for m in &maps[1..] {
        if (m.width, m.height) != (first.width, first.height) {
            return Err(Error::DimensionMismatch {
                expected: (first.width, first.height),
                found: (m.width, m.height),
            });
        }
        if m.category_ids != first.category_ids {
            return Err(Error::CategoryMismatch);
        }
    }
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let count = maps.len() as f64;
    let row = first.width as usize * first.category_ids.len();
    let mut probs = vec![0f32; first.probs.len()];
    par::for_each_chunk_mut(&mut probs, row * ROWS_PER_TASK, |chunk_idx, out| {
        let offset = chunk_idx * row * ROWS_PER_TASK;
        for (j, slot) in out.iter_mut().enumerate() {
            let i = offset + j;
            let mean = compensated_sum(maps.iter().map(|m| m.probs[i] as f64)) / count;
            *slot = mean as f32;
        }
    });
    SemanticConfidenceMap::new(first.width, first.height, first.category_ids.clone(), probs)
}

/// Per-pixel most confident category; ties go to the lowest category id.
pub fn argmax_labels(map: &SemanticConfidenceMap) -> LabelMap {
    let k = map.category_ids.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| map.category_ids[c]);
    let w = map.width as usize;
    let mut labels = vec![0u32; map.pixels()];
    par::for_each_chunk_mut(&mut labels, w * ROWS_PER_TASK, |chunk_idx, out| {
        let offset = chunk_idx * w * ROWS_PER_TASK;
        for (j, slot) in out.iter_mut().enumerate() {
            let v = map.pixel(offset + j);
            let mut best = order[0];
            for &c in &order[1..] {
                if v[c] > v[best] {
                    best = c;
                }
            }
            *slot = map.category_ids[best];
        }
    });
    LabelMap::new(map.width, map.height, labels).expect("dimensions validated at construction")
}
