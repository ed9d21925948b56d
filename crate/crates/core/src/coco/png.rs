//! Id-encoded PNG rasters: `id = R + 256 * G + 256^2 * B`, 8-bit RGB.

use std::io::Cursor;

use crate::error::{Error, Result};

/// Largest id representable in a 24-bit RGB pixel.
pub const MAX_ID: u32 = (1 << 24) - 1;

/// Decoded id raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdRaster {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
}

pub fn rgb_to_id(rgb: [u8; 3]) -> u32 {
    rgb[0] as u32 + 256 * rgb[1] as u32 + 256 * 256 * rgb[2] as u32
}

pub fn id_to_rgb(id: u32) -> Result<[u8; 3]> {
    if id > MAX_ID {
        return Err(Error::IdOverflow(id));
    }
    Ok([id as u8, (id >> 8) as u8, (id >> 16) as u8])
}

pub fn read_panoptic_png(bytes: &[u8]) -> Result<IdRaster> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngFormat(e.to_string()))?;
    let info = reader.info();
    let (width, height) = (info.width, info.height);
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::PngFormat(format!(
            "expected 8-bit RGB, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::PngFormat("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngFormat(e.to_string()))?;
    let row = frame.line_size;
    let w = width as usize;
    let mut ids = Vec::with_capacity(w * height as usize);
    for line in buf.chunks_exact(row).take(height as usize) {
        ids.extend(
            line[..w * 3]
                .chunks_exact(3)
                .map(|p| rgb_to_id([p[0], p[1], p[2]])),
        );
    }
    Ok(IdRaster { width, height, ids })
}

pub fn write_panoptic_png(width: u32, height: u32, ids: &[u32]) -> Result<Vec<u8>> {
    crate::mask::pixel_count(width, height)?;
    if ids.len() != width as usize * height as usize {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            found: (ids.len() as u32, 1),
        });
    }
    let mut data = Vec::with_capacity(ids.len() * 3);
    for &id in ids {
        data.extend_from_slice(&id_to_rgb(id)?);
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| Error::PngFormat(e.to_string());
        let mut writer = encoder.write_header().map_err(err)?;
        writer.write_image_data(&data).map_err(err)?;
        writer.finish().map_err(err)?;
    }
    Ok(out)
}
