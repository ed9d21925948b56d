//! COCO detection-format instance results with uncompressed RLE masks.
//!
//! `segmentation.counts` follows COCO: column-major runs over a
//! `size = [height, width]` raster. Masks are transposed to the row-major
//! [`BinaryMask`] layout on load and back on save.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::category::CategorySet;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ScoredInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RleJson {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image_id: u64,
    pub category_id: u32,
    pub score: f64,
    pub segmentation: RleJson,
    /// Recomputed from the mask on load; written as the tight mask box.
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
}

pub type InstancesByImage = BTreeMap<u64, Vec<ScoredInstance>>;

/// Parse detection results, grouping them by image in input order.
/// `images` maps image id to `(width, height)`.
pub fn read_instance_results(
    json: &str,
    images: &BTreeMap<u64, (u32, u32)>,
    categories: &CategorySet,
) -> Result<InstancesByImage> {
    let records: Vec<InstanceRecord> = serde_json::from_str(json)?;
    let mut out = InstancesByImage::new();
    for (index, rec) in records.into_iter().enumerate() {
        let inst = parse_record(&rec, images, categories).map_err(|e| e.in_record(index))?;
        out.entry(rec.image_id).or_default().push(inst);
    }
    Ok(out)
}

fn parse_record(
    rec: &InstanceRecord,
    images: &BTreeMap<u64, (u32, u32)>,
    categories: &CategorySet,
) -> Result<ScoredInstance> {
    if !categories.contains(rec.category_id) {
        return Err(Error::UnknownCategory(rec.category_id));
    }
    let &(width, height) = images.get(&rec.image_id).ok_or_else(|| {
        Error::InvalidInstance(format!("unknown image id {}", rec.image_id))
    })?;
    let [h, w] = rec.segmentation.size;
    if (w, h) != (width, height) {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            found: (w, h),
        });
    }
    let mask = BinaryMask::from_column_major_runs(w, h, rec.segmentation.counts.clone())?;
    ScoredInstance::new(rec.category_id, rec.score, mask)
}

pub fn to_records(instances: &InstancesByImage) -> Vec<InstanceRecord> {
    instances
        .iter()
        .flat_map(|(&image_id, list)| {
            list.iter().map(move |inst| InstanceRecord {
                image_id,
                category_id: inst.category_id(),
                score: inst.score(),
                segmentation: RleJson {
                    size: [inst.mask().height(), inst.mask().width()],
                    counts: inst.mask().to_column_major_runs(),
                },
                bbox: Some(inst.bbox().to_xywh()),
            })
        })
        .collect()
}

pub fn write_instance_results(instances: &InstancesByImage) -> Result<String> {
    Ok(serde_json::to_string(&to_records(instances))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco::Category;

    fn setup() -> (BTreeMap<u64, (u32, u32)>, CategorySet) {
        let images = BTreeMap::from([(7, (2, 2)), (8, (3, 2))]);
        let cats = CategorySet::new(vec![
            Category::thing(1, "person"),
            Category::stuff(184, "grass"),
        ])
        .unwrap();
        (images, cats)
    }

    #[test]
    fn empty_list() {
        let (images, cats) = setup();
        assert!(read_instance_results("[]", &images, &cats).unwrap().is_empty());
    }

    #[test]
    fn one_full_mask() {
        let (images, cats) = setup();
        let json = r#"[{"image_id":7,"category_id":1,"score":0.9,
            "segmentation":{"size":[2,2],"counts":[0,4]},"bbox":[0,0,2,2]}]"#;
        let out = read_instance_results(json, &images, &cats).unwrap();
        assert_eq!(out[&7].len(), 1);
        assert_eq!(out[&7][0].area(), 4);
        assert_eq!(out[&7][0].score(), 0.9);
    }

    #[test]
    fn bad_records_rejected() {
        let (images, cats) = setup();
        let rec = |img: u64, cat: u32, score: f64, size: [u32; 2], counts: &str| {
            format!(
                r#"[{{"image_id":{img},"category_id":{cat},"score":{score},
                "segmentation":{{"size":[{},{}],"counts":{counts}}}}}]"#,
                size[0], size[1]
            )
        };
        let err = read_instance_results(&rec(7, 1, 1.5, [2, 2], "[0,4]"), &images, &cats);
        assert!(matches!(err, Err(Error::Record { index: 0, .. })));
        let err = read_instance_results(&rec(7, 99, 0.5, [2, 2], "[0,4]"), &images, &cats)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Record { source, .. } if matches!(*source, Error::UnknownCategory(99))
        ));
        let err = read_instance_results(&rec(8, 1, 0.5, [2, 2], "[0,4]"), &images, &cats)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Record { source, .. } if matches!(*source, Error::DimensionMismatch { .. })
        ));
        assert!(read_instance_results(&rec(7, 1, 0.5, [2, 2], "[1,4]"), &images, &cats).is_err());
    }

    #[test]
    fn records_roundtrip() {
        let (images, cats) = setup();
        let mask = BinaryMask::from_fn(3, 2, |x, y| x >= 1 && y == 1).unwrap();
        let inst = ScoredInstance::new(1, 0.25, mask).unwrap();
        let by_image = InstancesByImage::from([(8, vec![inst])]);
        let json = write_instance_results(&by_image).unwrap();
        assert_eq!(read_instance_results(&json, &images, &cats).unwrap(), by_image);
    }
}
