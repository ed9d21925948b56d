use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MapReport, MiouReport, PqSummary};
use crate::coco::CategorySet;

/// Everything an evaluation run produced. Values are in `[0, 1]`; the text
/// table scales them by 100.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pq: Option<PqSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<MiouReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_bbox: Option<MapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_mask: Option<MapReport>,
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

impl MetricReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Human-readable tables.
    pub fn to_table(&self, categories: &CategorySet) -> String {
        let mut out = String::new();
        if let Some(pq) = &self.pq {
            let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>6} {:>4}", "", "PQ", "SQ", "RQ", "N");
            for (name, m) in [("All", &pq.all), ("Things", &pq.things), ("Stuff", &pq.stuff)] {
                let _ = writeln!(
                    out,
                    "{:<10} {:>6} {:>6} {:>6} {:>4}",
                    name,
                    pct(m.pq),
                    pct(m.sq),
                    pct(m.rq),
                    m.n
                );
            }
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<20} {:>6} {:>6} {:>6} {:>5} {:>5} {:>5}",
                "category", "PQ", "SQ", "RQ", "TP", "FP", "FN"
            );
            for (c, s) in &pq.per_category {
                let _ = writeln!(
                    out,
                    "{:<20} {:>6} {:>6} {:>6} {:>5} {:>5} {:>5}",
                    categories.name(*c),
                    pct(s.pq),
                    pct(s.sq),
                    pct(s.rq),
                    s.tp,
                    s.fp,
                    s.fn_
                );
            }
            let _ = writeln!(out);
        }
        if let Some(m) = &self.miou {
            let _ = writeln!(out, "{:<20} {:>6}", "category", "IoU");
            for (c, iou) in &m.per_category {
                let _ = writeln!(out, "{:<20} {:>6}", categories.name(*c), pct(*iou));
            }
            let _ = writeln!(out, "{:<20} {:>6}", "mIoU", pct(m.mean));
            let _ = writeln!(out);
        }
        if self.map_bbox.is_some() || self.map_mask.is_some() {
            let cell = |r: &Option<MapReport>| r.as_ref().map_or("-".into(), |r| pct(r.map));
            let _ = writeln!(out, "{:>10} {:>10}", "mAP (bbox)", "mAP (mask)");
            let _ = writeln!(out, "{:>10} {:>10}", cell(&self.map_bbox), cell(&self.map_mask));
        }
        out
    }
}
