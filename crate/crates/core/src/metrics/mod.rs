//! Evaluation: panoptic quality, semantic mIoU and COCO-style mAP.

mod map;
mod miou;
mod pq;
mod report;

pub use map::{coco_map, coco_map_with, gt_instances, GtInstance, IouMode, MapParams, MapReport};
pub use miou::{miou, miou_dataset, ConfusionMatrix, MiouReport};
pub use pq::{
    match_segments, pq_dataset, pq_match, pq_summarize, MatchResult, PqAccumulator, PqMean,
    PqScores, PqStats, PqSummary, SegmentMatch, MATCH_IOU,
};
pub use report::MetricReport;
