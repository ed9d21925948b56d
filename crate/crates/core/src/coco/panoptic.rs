use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::category::{int_bool as int_bool_serde, CategorySet};
use crate::error::{Error, Result};
use crate::mask::{pixel_count, BBox, BinaryMask, LabelMap, VOID};

/// One row of a `segments_info` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub id: u32,
    pub category_id: u32,
    pub area: u64,
    #[serde(with = "xywh")]
    pub bbox: BBox,
    #[serde(with = "int_bool_serde")]
    pub iscrowd: bool,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl SegmentInfo {
    pub fn new(id: u32, category_id: u32, area: u64, bbox: BBox, iscrowd: bool) -> Self {
        Self {
            id,
            category_id,
            area,
            bbox,
            iscrowd,
            extra: Default::default(),
        }
    }
}

/// Per-pixel segment ids (0 = VOID) plus the segment table describing them.
#[derive(Clone, Debug, PartialEq)]
pub struct PanopticImage {
    width: u32,
    height: u32,
    id_map: Vec<u32>,
    segments: Vec<SegmentInfo>,
}

/// Area and tight box of every nonzero id in a raster.
pub(crate) fn raster_stats(width: u32, id_map: &[u32]) -> BTreeMap<u32, (u64, BBox)> {
    let w = width as usize;
    let mut acc: BTreeMap<u32, (u64, u32, u32, u32, u32)> = BTreeMap::new();
    for (i, &id) in id_map.iter().enumerate() {
        if id == VOID {
            continue;
        }
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        acc.entry(id)
            .and_modify(|e| {
                e.0 += 1;
                e.1 = e.1.min(x);
                e.2 = e.2.min(y);
                e.3 = e.3.max(x);
                e.4 = e.4.max(y);
            })
            .or_insert((1, x, y, x, y));
    }
    acc.into_iter()
        .map(|(id, (a, x0, y0, x1, y1))| (id, (a, BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))))
        .collect()
}

impl PanopticImage {
    /// Assemble from parts without checking segment consistency; see
    /// [`validate_panoptic`] for that. Only the raster shape is checked.
    pub fn from_parts(
        width: u32,
        height: u32,
        id_map: Vec<u32>,
        segments: Vec<SegmentInfo>,
    ) -> Result<Self> {
        let n = pixel_count(width, height)?;
        if id_map.len() != n {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (id_map.len() as u32, 1),
            });
        }
        Ok(Self {
            width,
            height,
            id_map,
            segments,
        })
    }

    /// Build a consistent image from a raster and `(id, category, iscrowd)`
    /// labels; area and bbox are measured from the raster. Ids labelled but
    /// absent from the raster are skipped; ids in the raster without a label
    /// are an error.
    pub fn from_id_map(
        width: u32,
        height: u32,
        id_map: Vec<u32>,
        labels: &[(u32, u32, bool)],
    ) -> Result<Self> {
        let n = pixel_count(width, height)?;
        if id_map.len() != n {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (id_map.len() as u32, 1),
            });
        }
        let mut stats = raster_stats(width, &id_map);
        let mut segments = Vec::with_capacity(labels.len());
        for &(id, category_id, iscrowd) in labels {
            if let Some((area, bbox)) = stats.remove(&id) {
                segments.push(SegmentInfo::new(id, category_id, area, bbox, iscrowd));
            }
        }
        if let Some((&id, _)) = stats.iter().next() {
            return Err(Error::InvalidPanoptic(format!(
                "raster id {id} has no segment label"
            )));
        }
        Ok(Self {
            width,
            height,
            id_map,
            segments,
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

    pub fn id_map(&self) -> &[u32] {
        &self.id_map
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn segment(&self, id: u32) -> Option<&SegmentInfo> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn into_parts(self) -> (u32, u32, Vec<u32>, Vec<SegmentInfo>) {
        (self.width, self.height, self.id_map, self.segments)
    }

    /// Binary mask of one segment id.
    pub fn segment_mask(&self, id: u32) -> BinaryMask {
        BinaryMask::from_linear_fn(self.width, self.height, |i| self.id_map[i] == id)
            .expect("dimensions validated at construction")
    }

    /// Fraction of pixels that carry no segment.
    pub fn void_fraction(&self) -> f64 {
        let void = self.id_map.iter().filter(|&&id| id == VOID).count();
        void as f64 / self.id_map.len() as f64
    }
}

/// One broken invariant of a [`PanopticImage`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ZeroSegmentId,
    DuplicateSegmentId { segment: u32 },
    MissingFromRaster { segment: u32 },
    UnlistedRasterId { id: u32 },
    AreaMismatch { segment: u32, listed: u64, actual: u64 },
    BBoxMismatch { segment: u32, listed: BBox, actual: BBox },
    UnknownCategory { segment: u32, category_id: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroSegmentId => write!(f, "segment table lists the VOID id 0"),
            Violation::DuplicateSegmentId { segment } => {
                write!(f, "segment {segment} listed more than once")
            }
            Violation::MissingFromRaster { segment } => {
                write!(f, "segment {segment} is listed but absent from the raster")
            }
            Violation::UnlistedRasterId { id } => {
                write!(f, "raster id {id} has no segment table entry")
            }
            Violation::AreaMismatch {
                segment,
                listed,
                actual,
            } => write!(
                f,
                "segment {segment} lists area {listed}, raster has {actual}"
            ),
            Violation::BBoxMismatch {
                segment,
                listed,
                actual,
            } => write!(
                f,
                "segment {segment} lists bbox {:?}, raster gives {:?}",
                listed.to_xywh(),
                actual.to_xywh()
            ),
            Violation::UnknownCategory {
                segment,
                category_id,
            } => write!(f, "segment {segment} has unknown category {category_id}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of a panoptic image and list what breaks.
pub fn validate_panoptic(pan: &PanopticImage) -> ValidationReport {
    let mut violations = Vec::new();
    let mut stats = raster_stats(pan.width, &pan.id_map);
    let mut seen = BTreeSet::new();
    for seg in &pan.segments {
        if seg.id == VOID {
            violations.push(Violation::ZeroSegmentId);
            continue;
        }
        if !seen.insert(seg.id) {
            violations.push(Violation::DuplicateSegmentId { segment: seg.id });
            continue;
        }
        match stats.remove(&seg.id) {
            None => violations.push(Violation::MissingFromRaster { segment: seg.id }),
            Some((area, bbox)) => {
                if area != seg.area {
                    violations.push(Violation::AreaMismatch {
                        segment: seg.id,
                        listed: seg.area,
                        actual: area,
                    });
                }
                if bbox != seg.bbox {
                    violations.push(Violation::BBoxMismatch {
                        segment: seg.id,
                        listed: seg.bbox,
                        actual: bbox,
                    });
                }
            }
        }
    }
    violations.extend(
        stats
            .into_keys()
            .map(|id| Violation::UnlistedRasterId { id }),
    );
    ValidationReport { violations }
}

/// [`validate_panoptic`] plus a check that every segment category is known.
pub fn validate_panoptic_with(pan: &PanopticImage, categories: &CategorySet) -> ValidationReport {
    let mut report = validate_panoptic(pan);
    report.violations.extend(
        pan.segments
            .iter()
            .filter(|s| !categories.contains(s.category_id))
            .map(|s| Violation::UnknownCategory {
                segment: s.id,
                category_id: s.category_id,
            }),
    );
    report
}

/// Convert a panoptic annotation to a semantic label map: stuff pixels keep
/// their category, every thing pixel becomes the merged-thing id, VOID stays VOID.
pub fn panoptic_to_semantic_gt(pan: &PanopticImage, categories: &CategorySet) -> Result<LabelMap> {
    let merged = categories.merged_thing_id();
    let mut lut: BTreeMap<u32, u32> = BTreeMap::new();
    for seg in &pan.segments {
        let cat = categories
            .get(seg.category_id)
            .ok_or(Error::UnknownCategory(seg.category_id))?;
        lut.insert(seg.id, if cat.is_thing { merged } else { cat.id });
    }
    // Dense lookup is much faster than a map probe per pixel.
    let max_id = pan.id_map.iter().copied().max().unwrap_or(VOID) as usize;
    let mut dense = vec![VOID; max_id + 1];
    for (&id, &label) in &lut {
        if (id as usize) <= max_id {
            dense[id as usize] = label;
        }
    }
    let labels = pan.id_map.iter().map(|&id| dense[id as usize]).collect();
    LabelMap::new(pan.width, pan.height, labels)
}

mod xywh {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::mask::BBox;

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        [b.x, b.y, b.w, b.h].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let v = <[f64; 4]>::deserialize(d)?;
        if v.iter().any(|c| *c < 0.0 || c.fract() != 0.0 || *c > u32::MAX as f64) {
            return Err(serde::de::Error::custom(format!(
                "bbox {v:?} must hold non-negative integer pixel values"
            )));
        }
        Ok(BBox::new(v[0] as u32, v[1] as u32, v[2] as u32, v[3] as u32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::Category;

    fn cats() -> CategorySet {
        CategorySet::new(vec![
            Category::thing(1, "person"),
            Category::stuff(184, "grass"),
        ])
        .unwrap()
    }

    fn person_on_grass() -> PanopticImage {
        // 4x4, person occupies the 2x2 block at (1, 1).
        let ids = (0..16)
            .map(|i| {
                let (x, y) = (i % 4, i / 4);
                if (1..3).contains(&x) && (1..3).contains(&y) {
                    2
                } else {
                    1
                }
            })
            .collect();
        PanopticImage::from_id_map(4, 4, ids, &[(1, 184, false), (2, 1, false)]).unwrap()
    }

    #[test]
    fn consistent_image_validates() {
        let pan = person_on_grass();
        assert!(validate_panoptic(&pan).is_ok());
        assert_eq!(pan.segment(2).unwrap().area, 4);
        assert_eq!(pan.segment(2).unwrap().bbox, BBox::new(1, 1, 2, 2));
    }

    #[test]
    fn listed_but_absent_segment() {
        let (w, h, ids, mut segs) = person_on_grass().into_parts();
        segs.push(SegmentInfo::new(9, 184, 3, BBox::new(0, 0, 1, 3), false));
        let pan = PanopticImage::from_parts(w, h, ids, segs).unwrap();
        assert_eq!(
            validate_panoptic(&pan).violations,
            vec![Violation::MissingFromRaster { segment: 9 }]
        );
    }

    #[test]
    fn area_off_by_one() {
        let (w, h, ids, mut segs) = person_on_grass().into_parts();
        segs[1].area += 1;
        let pan = PanopticImage::from_parts(w, h, ids, segs).unwrap();
        assert_eq!(
            validate_panoptic(&pan).violations,
            vec![Violation::AreaMismatch {
                segment: 2,
                listed: 5,
                actual: 4
            }]
        );
    }

    #[test]
    fn unlisted_and_duplicate_ids() {
        let (w, h, mut ids, mut segs) = person_on_grass().into_parts();
        ids[0] = 7;
        segs.push(segs[1].clone());
        let pan = PanopticImage::from_parts(w, h, ids, segs).unwrap();
        let v = validate_panoptic(&pan).violations;
        assert!(v.contains(&Violation::DuplicateSegmentId { segment: 2 }));
        assert!(v.contains(&Violation::UnlistedRasterId { id: 7 }));
    }

    #[test]
    fn semantic_conversion() {
        let c = cats();
        let sem = panoptic_to_semantic_gt(&person_on_grass(), &c).unwrap();
        assert_eq!(sem.get(0, 0), 184);
        assert_eq!(sem.get(1, 1), c.merged_thing_id());
        assert_eq!(
            sem.labels().iter().filter(|&&l| l == c.merged_thing_id()).count(),
            4
        );

        let grass = PanopticImage::from_id_map(3, 3, vec![5; 9], &[(5, 184, false)]).unwrap();
        let sem = panoptic_to_semantic_gt(&grass, &c).unwrap();
        assert!(sem.labels().iter().all(|&l| l == 184));

        let void = PanopticImage::from_id_map(3, 3, vec![0; 9], &[]).unwrap();
        let sem = panoptic_to_semantic_gt(&void, &c).unwrap();
        assert!(sem.labels().iter().all(|&l| l == VOID));
    }

    #[test]
    fn conversion_rejects_unknown_category() {
        let pan = PanopticImage::from_id_map(2, 2, vec![1; 4], &[(1, 42, false)]).unwrap();
        assert!(matches!(
            panoptic_to_semantic_gt(&pan, &cats()),
            Err(Error::UnknownCategory(42))
        ));
    }

    #[test]
    fn from_id_map_requires_labels() {
        assert!(PanopticImage::from_id_map(2, 1, vec![1, 2], &[(1, 184, false)]).is_err());
    }
}
