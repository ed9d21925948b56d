//! COCO panoptic data model: categories, segment tables, id-encoded PNGs,
//! detection-format instance results and the panoptic-to-semantic conversion.

mod category;
mod dataset;
mod panoptic;
mod png;
mod results;

pub use category::{Category, CategorySet};
pub use dataset::{
    load_panoptic, png_name, read_label_png, save_panoptic, write_label_png, DatasetManifest,
    ImageInfo, PanopticAnnotation, PanopticDataset,
};
pub use panoptic::{
    panoptic_to_semantic_gt, validate_panoptic, validate_panoptic_with, PanopticImage,
    SegmentInfo, ValidationReport, Violation,
};
pub use png::{id_to_rgb, read_panoptic_png, rgb_to_id, write_panoptic_png, IdRaster, MAX_ID};
pub use results::{
    read_instance_results, to_records, write_instance_results, InstanceRecord, InstancesByImage,
    RleJson,
};
