use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::coco::CategorySet;
use crate::error::{Error, Result};
use crate::mask::{LabelMap, VOID};
use crate::par;

/// Pixel confusion counts over a fixed label list. GT VOID pixels are never
/// counted; predictions outside the label list (VOID included) land in an
/// extra "other" column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<u32>,
    index: HashMap<u32, usize>,
    /// `counts[gt * (k + 1) + pred]`, column `k` is "other".
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<u32>) -> Self {
        let index = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let k = labels.len();
        Self {
            labels,
            index,
            counts: vec![0; k * (k + 1)],
        }
    }

    /// Stuff ids plus merged-thing, the label set of converted semantic maps.
    pub fn for_categories(categories: &CategorySet) -> Self {
        Self::new(categories.semantic_ids())
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    fn cols(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn get(&self, gt: u32, pred: u32) -> u64 {
        match (self.index.get(&gt), self.index.get(&pred)) {
            (Some(&g), Some(&p)) => self.counts[g * self.cols() + p],
            _ => 0,
        }
    }

    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.dims() != pred.dims() {
            return Err(Error::DimensionMismatch {
                expected: gt.dims(),
                found: pred.dims(),
            });
        }
        let other = self.labels.len();
        let cols = self.cols();
        let mut last = (u32::MAX, u32::MAX);
        let mut cell: Option<usize> = None;
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if (g, p) != last {
                last = (g, p);
                cell = if g == VOID {
                    None
                } else {
                    let gi = *self.index.get(&g).ok_or(Error::UnknownCategory(g))?;
                    let pi = match self.index.get(&p) {
                        Some(&i) => i,
                        None if p == VOID => other,
                        None => return Err(Error::UnknownCategory(p)),
                    };
                    Some(gi * cols + pi)
                };
            }
            if let Some(c) = cell {
                self.counts[c] += 1;
            }
        }
        Ok(())
    }

    /// Add another matrix over the same labels.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.labels, other.labels, "label lists differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Per-label IoU for labels with a nonzero union, and the mean over labels
    /// present in GT.
    pub fn report(&self) -> MiouReport {
        let k = self.labels.len();
        let cols = self.cols();
        let mut per_category = BTreeMap::new();
        let mut sum = 0.0;
        let mut present = 0usize;
        for i in 0..k {
            let tp = self.counts[i * cols + i];
            let row: u64 = self.counts[i * cols..(i + 1) * cols].iter().sum();
            let col: u64 = (0..k).map(|g| self.counts[g * cols + i]).sum();
            let union = row + col - tp;
            if union == 0 {
                continue;
            }
            let iou = tp as f64 / union as f64;
            per_category.insert(self.labels[i], iou);
            if row > 0 {
                sum += iou;
                present += 1;
            }
        }
        MiouReport {
            per_category,
            mean: if present == 0 { 0.0 } else { sum / present as f64 },
            categories: present,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub per_category: BTreeMap<u32, f64>,
    pub mean: f64,
    /// Number of categories present in GT, i.e. averaged into `mean`.
    pub categories: usize,
}

/// mIoU of one image over the converted semantic label set.
pub fn miou(gt: &LabelMap, pred: &LabelMap, categories: &CategorySet) -> Result<MiouReport> {
    let mut cm = ConfusionMatrix::for_categories(categories);
    cm.accumulate(gt, pred)?;
    Ok(cm.report())
}

/// mIoU from the confusion matrix summed over all images. Pairs are
/// `(image id, gt, pred)`; per-image matrices are built in parallel.
pub fn miou_dataset(
    pairs: &[(u64, &LabelMap, &LabelMap)],
    categories: &CategorySet,
) -> Result<MiouReport> {
    let mut total = ConfusionMatrix::for_categories(categories);
    let per_image = par::try_map(pairs, |&(id, gt, pred)| {
        let mut cm = ConfusionMatrix::for_categories(categories);
        cm.accumulate(gt, pred).map_err(|e| e.in_image(id))?;
        Ok::<_, Error>(cm)
    })?;
    for cm in &per_image {
        total.merge(cm);
    }
    Ok(total.report())
}
