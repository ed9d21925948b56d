//! Binary confidence-map container.
//!
//! Little-endian layout:
//!
//! | offset      | size    | field                                  |
//! |-------------|---------|----------------------------------------|
//! | 0           | 4       | magic `PSCM`                           |
//! | 4           | 4       | version (`u32`, currently 1)           |
//! | 8           | 4       | width (`u32`)                          |
//! | 12          | 4       | height (`u32`)                         |
//! | 16          | 4       | category count `K` (`u32`)             |
//! | 20          | 4·K     | category ids (`u32` each)              |
//! | 20 + 4·K    | 4·K·W·H | `K` planes of row-major `f32`, one per category, in id-list order |

use super::SemanticConfidenceMap;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PSCM";
pub const VERSION: u32 = 1;

pub fn write_confidence_map(map: &SemanticConfidenceMap) -> Vec<u8> {
    let ids = map.category_ids();
    let planes = map.to_planes();
    let mut out = Vec::with_capacity(20 + 4 * ids.len() + 4 * planes.len());
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, map.width(), map.height(), ids.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for p in planes {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidConfidenceMap(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_confidence_map(bytes: &[u8]) -> Result<SemanticConfidenceMap> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let width = c.u32()?;
    let height = c.u32()?;
    let k = c.u32()? as usize;
    let ids = (0..k).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let n = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(k))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let raw = c.take(n.checked_mul(4).ok_or_else(|| bad("dimensions overflow"))?)?;
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let planes: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    SemanticConfidenceMap::from_planes(width, height, ids, &planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_layout() {
        let m = SemanticConfidenceMap::new(2, 1, vec![7, 9], vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let bytes = write_confidence_map(&m);
        assert_eq!(&bytes[..4], b"PSCM");
        assert_eq!(bytes.len(), 20 + 8 + 16);
        // First plane value is pixel 0, category 7.
        assert_eq!(f32::from_le_bytes(bytes[28..32].try_into().unwrap()), 0.25);
        assert_eq!(read_confidence_map(&bytes).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs() {
        let m = SemanticConfidenceMap::new(1, 1, vec![1], vec![1.0]).unwrap();
        let bytes = write_confidence_map(&m);
        assert!(read_confidence_map(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_confidence_map(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_confidence_map(&magic).is_err());
        let mut version = bytes;
        version[4] = 2;
        assert!(read_confidence_map(&version).is_err());
    }
}
