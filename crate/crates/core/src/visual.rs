//! Deterministic colors for segment ids.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::coco::{CategorySet, PanopticImage};
use crate::mask::VOID;

/// Color for a segment id. Distinct ids below 2^24 always get distinct
/// colors, and only VOID maps to black.
pub fn segment_color(id: u32) -> [u8; 3] {
    // Odd multiplier and xorshift are both bijections on 24-bit values that
    // fix zero, so the composition is too.
    let mut x = id & 0xFF_FFFF;
    x = x.wrapping_mul(0x9E_3779) & 0xFF_FFFF;
    x ^= x >> 11;
    x = x.wrapping_mul(0x5B_D1E9 | 1) & 0xFF_FFFF;
    x ^= x >> 13;
    [(x >> 16) as u8, (x >> 8) as u8, x as u8]
}

/// RGB bytes, row-major, one color per segment id and black for VOID.
pub fn colorize(pan: &PanopticImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(pan.id_map().len() * 3);
    let mut last = (u32::MAX, [0u8; 3]);
    for &id in pan.id_map() {
        if id != last.0 {
            last = (id, if id == VOID { [0; 3] } else { segment_color(id) });
        }
        out.extend_from_slice(&last.1);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LegendEntry {
    pub segment_id: u32,
    pub category_id: u32,
    pub category: String,
    pub color: [u8; 3],
    pub area: u64,
}

/// Legend keyed by segment id.
pub fn legend(pan: &PanopticImage, categories: &CategorySet) -> BTreeMap<u32, LegendEntry> {
    pan.segments()
        .iter()
        .map(|s| {
            (
                s.id,
                LegendEntry {
                    segment_id: s.id,
                    category_id: s.category_id,
                    category: categories.name(s.category_id),
                    color: segment_color(s.id),
                    area: s.area,
                },
            )
        })
        .collect()
}
