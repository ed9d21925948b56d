//! Raster and geometry primitives: run-length-encoded binary masks, boxes,
//! scored instances and dense label maps.
//!
//! Masks are linearized in row-major order: pixel `(x, y)` lives at index
//! `y * width + x`. Runs alternate background/foreground and always start
//! with a background run, which is zero when the first pixel is foreground.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for unassigned pixels, both in label maps and segment rasters.
pub const VOID: u32 = 0;

/// Run-length-encoded binary raster.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

pub(crate) fn pixel_count(width: u32, height: u32) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyRaster { width, height });
    }
    let n = width as u64 * height as u64;
    if n > u32::MAX as u64 {
        return Err(Error::DimensionOverflow {
            width: width as u64,
            height: height as u64,
        });
    }
    Ok(n as usize)
}

/// Encode a row-major boolean raster.
pub fn rle_encode(width: u32, height: u32, pixels: &[bool]) -> Result<BinaryMask> {
    let n = pixel_count(width, height)?;
    if pixels.len() != n {
        return Err(Error::MalformedMask(format!(
            "raster has {} pixels, expected {width}x{height}",
            pixels.len()
        )));
    }
    Ok(BinaryMask::from_linear_fn_unchecked(width, height, n, |i| {
        pixels[i]
    }))
}

/// Decode a mask into a row-major boolean raster.
pub fn rle_decode(mask: &BinaryMask) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for (start, end) in mask.intervals() {
        out[start..end].fill(true);
    }
    out
}

/// Intersection over union of two masks. Two empty masks have IoU 0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Foreground pixel count, read straight from the runs.
pub fn mask_area(mask: &BinaryMask) -> u64 {
    mask.area()
}

impl BinaryMask {
    /// Build from row-major runs, checking the run invariants.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        let n = pixel_count(width, height)?;
        if runs.is_empty() {
            return Err(Error::MalformedMask("no runs".into()));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != n as u64 {
            return Err(Error::MalformedMask(format!(
                "runs sum to {total}, expected {n} for {width}x{height}"
            )));
        }
        if let Some(i) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::MalformedMask(format!(
                "zero-length run at position {}",
                i + 1
            )));
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// Build from a predicate over linear (row-major) pixel indices.
    pub fn from_linear_fn(
        width: u32,
        height: u32,
        f: impl FnMut(usize) -> bool,
    ) -> Result<Self> {
        let n = pixel_count(width, height)?;
        Ok(Self::from_linear_fn_unchecked(width, height, n, f))
    }

    /// Build from a predicate over pixel coordinates.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let w = width as usize;
        Self::from_linear_fn(width, height, |i| f((i % w) as u32, (i / w) as u32))
    }

    /// Filled axis-aligned rectangle clipped to the raster.
    pub fn from_bbox(width: u32, height: u32, rect: BBox) -> Result<Self> {
        Self::from_fn(width, height, |x, y| rect.contains(x, y))
    }

    fn from_linear_fn_unchecked(
        width: u32,
        height: u32,
        n: usize,
        mut f: impl FnMut(usize) -> bool,
    ) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for i in 0..n {
            let v = f(i);
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
        runs.push(len);
        Self {
            width,
            height,
            runs,
        }
    }

    /// Build from COCO-style column-major runs (pixel `(x, y)` at `x * height + y`).
    pub fn from_column_major_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        // Validate as a height x width raster, then transpose.
        let transposed = Self::from_runs(height, width, runs)?;
        let dense = rle_decode(&transposed);
        let h = height as usize;
        Self::from_fn(width, height, |x, y| dense[x as usize * h + y as usize])
    }

    /// COCO-style column-major runs of this mask.
    pub fn to_column_major_runs(&self) -> Vec<u32> {
        let dense = rle_decode(self);
        let w = self.width as usize;
        let h = self.height as usize;
        Self::from_linear_fn_unchecked(self.height, self.width, self.len(), |i| {
            dense[(i % h) * w + i / h]
        })
        .runs
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    /// Total pixel count `width * height`.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// True when the mask has no foreground pixels.
    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    /// Half-open linear ranges `[start, end)` of foreground pixels, in order.
    pub fn intervals(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut pos = 0usize;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as usize;
            (i % 2 == 1 && r > 0).then_some((start, pos))
        })
    }

    /// Linear indices of all foreground pixels.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.intervals().flat_map(|(s, e)| s..e)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let idx = y as usize * self.width as usize + x as usize;
        self.intervals()
            .take_while(|&(s, _)| s <= idx)
            .any(|(s, e)| idx >= s && idx < e)
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        Ok(())
    }

    /// Foreground overlap with `other`, computed by walking both run lists.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        self.check_same_dims(other)?;
        let mut a = self.intervals().peekable();
        let mut b = other.intervals().peekable();
        let mut total = 0u64;
        while let (Some(&(s1, e1)), Some(&(s2, e2))) = (a.peek(), b.peek()) {
            let lo = s1.max(s2);
            let hi = e1.min(e2);
            if hi > lo {
                total += (hi - lo) as u64;
            }
            if e1 <= e2 {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(total)
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let w = self.width as usize;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for (s, e) in self.intervals() {
            any = true;
            let (ys, ye) = (s / w, (e - 1) / w);
            y0 = y0.min(ys);
            y1 = y1.max(ye);
            if ys == ye {
                x0 = x0.min(s % w);
                x1 = x1.max((e - 1) % w);
            } else {
                // Crossing a row boundary touches both the last and first column.
                x0 = 0;
                x1 = w - 1;
            }
        }
        any.then(|| BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        })
    }
}

/// Axis-aligned box in pixel units; covers columns `x..x+w` and rows `y..y+h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x
            && y >= self.y
            && (x - self.x) < self.w
            && (y - self.y) < self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = (self.x as u64 + self.w as u64).min(other.x as u64 + other.w as u64);
        let y1 = (self.y as u64 + self.h as u64).min(other.y as u64 + other.h as u64);
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    /// True when the box lies inside a `width x height` image.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    /// `[x, y, w, h]` as COCO writes it.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x as f64, self.y as f64, self.w as f64, self.h as f64]
    }
}

/// Rectangle IoU. Degenerate (zero-area) boxes yield 0.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One detected object.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredInstance {
    category_id: u32,
    score: f64,
    mask: BinaryMask,
    bbox: BBox,
}

impl ScoredInstance {
    /// Validates the score range and a nonempty mask; the box is derived from the mask.
    pub fn new(category_id: u32, score: f64, mask: BinaryMask) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInstance(format!(
                "score {score} outside [0, 1]"
            )));
        }
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::InvalidInstance("mask has no foreground pixels".into()))?;
        Ok(Self {
            category_id,
            score,
            mask,
            bbox,
        })
    }

    pub fn category_id(&self) -> u32 {
        self.category_id
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn area(&self) -> u64 {
        self.mask.area()
    }

    /// Same instance with a different score.
    pub fn with_score(&self, score: f64) -> Result<Self> {
        Self::new(self.category_id, score, self.mask.clone())
    }

    /// Same instance relabelled.
    pub fn with_category(mut self, category_id: u32) -> Self {
        self.category_id = category_id;
        self
    }
}

/// Dense per-pixel category labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        let n = pixel_count(width, height)?;
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (labels.len() as u32, 1),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    /// A map with every pixel set to `label`.
    pub fn filled(width: u32, height: u32, label: u32) -> Result<Self> {
        let n = pixel_count(width, height)?;
        Ok(Self {
            width,
            height,
            labels: vec![label; n],
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// First label rejected by `known` (VOID is always accepted).
    pub fn find_unknown(&self, known: impl Fn(u32) -> bool) -> Option<u32> {
        self.labels
            .iter()
            .copied()
            .find(|&l| l != VOID && !known(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_bbox(w: u32, h: u32, px: &[bool]) -> Option<BBox> {
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for y in 0..h {
            for x in 0..w {
                if px[(y * w + x) as usize] {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((a, c, d, e)) => (a.min(x), c.min(y), d.max(x), e.max(y)),
                    });
                }
            }
        }
        b.map(|(x0, y0, x1, y1)| BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    #[test]
    fn encode_edge_cases() {
        assert_eq!(rle_encode(2, 2, &[false; 4]).unwrap().runs(), &[4]);
        assert_eq!(rle_encode(2, 2, &[true; 4]).unwrap().runs(), &[0, 4]);
        assert!(matches!(
            rle_encode(0, 3, &[]),
            Err(Error::EmptyRaster { .. })
        ));
        assert!(matches!(
            BinaryMask::from_linear_fn(70_000, 70_000, |_| false),
            Err(Error::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn decode_examples() {
        let m = BinaryMask::from_runs(2, 2, vec![1, 2, 1]).unwrap();
        assert_eq!(rle_decode(&m), vec![false, true, true, false]);
        let m = BinaryMask::from_runs(2, 2, vec![4]).unwrap();
        assert_eq!(rle_decode(&m), vec![false; 4]);
        assert_eq!(mask_area(&m), 0);
        let m = BinaryMask::from_runs(2, 2, vec![0, 4]).unwrap();
        assert_eq!(rle_decode(&m), vec![true; 4]);
        assert_eq!(mask_area(&m), 4);
    }

    #[test]
    fn malformed_runs_rejected() {
        assert!(matches!(
            BinaryMask::from_runs(2, 2, vec![1, 2]),
            Err(Error::MalformedMask(_))
        ));
        assert!(matches!(
            BinaryMask::from_runs(2, 2, vec![2, 0, 2]),
            Err(Error::MalformedMask(_))
        ));
        assert!(BinaryMask::from_runs(2, 2, vec![]).is_err());
    }

    #[test]
    fn shifted_block_iou() {
        // 10x10 block vs the same block shifted two columns: overlap 80, union 120.
        let a = BinaryMask::from_bbox(32, 32, BBox::new(4, 4, 10, 10)).unwrap();
        let b = BinaryMask::from_bbox(32, 32, BBox::new(6, 4, 10, 10)).unwrap();
        let da = rle_decode(&a);
        let db = rle_decode(&b);
        let inter = da.iter().zip(&db).filter(|(x, y)| **x && **y).count();
        let union = da.iter().zip(&db).filter(|(x, y)| **x || **y).count();
        assert_eq!((inter, union), (80, 120));
        let iou = mask_iou(&a, &b).unwrap();
        assert!((iou - 80.0 / 120.0).abs() < 1e-12);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_bbox(32, 32, BBox::new(20, 20, 5, 5)).unwrap();
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn empty_masks_have_zero_iou() {
        let e = BinaryMask::from_linear_fn(4, 4, |_| false).unwrap();
        assert_eq!(mask_iou(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        let a = BinaryMask::from_linear_fn(4, 4, |_| true).unwrap();
        let b = BinaryMask::from_linear_fn(4, 5, |_| true).unwrap();
        assert!(matches!(
            mask_iou(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bbox_iou_examples() {
        let a = BBox::new(0, 0, 10, 10);
        let b = BBox::new(5, 0, 10, 10);
        assert_eq!(bbox_iou(&a, &a), 1.0);
        assert_eq!(bbox_iou(&a, &BBox::new(20, 20, 3, 3)), 0.0);
        // 5x10 overlap over 100 + 100 - 50.
        assert!((bbox_iou(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(bbox_iou(&BBox::new(1, 1, 0, 0), &BBox::new(1, 1, 0, 0)), 0.0);
    }

    #[test]
    fn instance_invariants() {
        let full = BinaryMask::from_runs(2, 2, vec![0, 4]).unwrap();
        let inst = ScoredInstance::new(1, 0.9, full.clone()).unwrap();
        assert_eq!(inst.area(), 4);
        assert_eq!(inst.bbox(), BBox::new(0, 0, 2, 2));
        assert!(ScoredInstance::new(1, 1.5, full.clone()).is_err());
        assert!(ScoredInstance::new(1, f64::NAN, full).is_err());
        let empty = BinaryMask::from_runs(2, 2, vec![4]).unwrap();
        assert!(ScoredInstance::new(1, 0.5, empty).is_err());
    }

    #[test]
    fn column_major_roundtrip() {
        // 3 wide, 2 tall; only (2, 0) set. Column-major index = 2 * 2 + 0 = 4.
        let m = BinaryMask::from_fn(3, 2, |x, y| x == 2 && y == 0).unwrap();
        assert_eq!(m.to_column_major_runs(), vec![4, 1, 1]);
        let back = BinaryMask::from_column_major_runs(3, 2, vec![4, 1, 1]).unwrap();
        assert_eq!(back, m);
    }

    fn raster(max: u32) -> impl Strategy<Value = (u32, u32, Vec<bool>)> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            (
                Just(w),
                Just(h),
                prop::collection::vec(any::<bool>(), (w * h) as usize),
            )
        })
    }

    proptest! {
        #[test]
        fn roundtrip((w, h, px) in raster(16)) {
            let m = rle_encode(w, h, &px).unwrap();
            prop_assert_eq!(rle_decode(&m), px.clone());
            prop_assert_eq!(m.area(), px.iter().filter(|&&b| b).count() as u64);
            prop_assert!(BinaryMask::from_runs(w, h, m.runs().to_vec()).is_ok());
            prop_assert_eq!(m.bbox(), dense_bbox(w, h, &px));
            let cm = BinaryMask::from_column_major_runs(w, h, m.to_column_major_runs()).unwrap();
            prop_assert_eq!(cm, m);
        }

        #[test]
        fn runwise_matches_dense(
            a in prop::collection::vec(any::<bool>(), 32 * 32),
            b in prop::collection::vec(any::<bool>(), 32 * 32),
        ) {
            let ma = rle_encode(32, 32, &a).unwrap();
            let mb = rle_encode(32, 32, &b).unwrap();
            let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as u64;
            let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count() as u64;
            prop_assert_eq!(ma.intersection_area(&mb).unwrap(), inter);
            let iou = mask_iou(&ma, &mb).unwrap();
            let expected = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            prop_assert!((iou - expected).abs() < 1e-15);
            prop_assert_eq!(iou, mask_iou(&mb, &ma).unwrap());
            prop_assert!((0.0..=1.0).contains(&iou));
            prop_assert_eq!(iou == 1.0, a == b && union > 0);
        }

        #[test]
        fn bbox_iou_symmetric(
            a in (0u32..20, 0u32..20, 0u32..20, 0u32..20),
            b in (0u32..20, 0u32..20, 0u32..20, 0u32..20),
        ) {
            let a = BBox::new(a.0, a.1, a.2, a.3);
            let b = BBox::new(b.0, b.1, b.2, b.3);
            let iou = bbox_iou(&a, &b);
            prop_assert_eq!(iou, bbox_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&iou));
        }
    }
}
