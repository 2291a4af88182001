//! File formats: PLY, `.npy` tensors and PNG previews.

pub mod npy;
pub mod ply;

use std::path::Path;

use crate::error::{Error, Result};

/// Writes an 8-bit PNG from row-major float pixels in `[0, 1]` with 1 or 3
/// channels.
pub fn write_png(path: &Path, width: usize, height: usize, channels: usize, pixels: &[f32]) -> Result<()> {
    assert_eq!(pixels.len(), width * height * channels);
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::invalid("write_png", format!("{channels} channels"))),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads an 8-bit PNG as `(width, height, rgb)` with row-major pixels in
/// `[0, 1]`. Gray is replicated and alpha dropped.
pub fn read_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "image too large"))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::format(path, format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut rgb = Vec::with_capacity(w * h * 3);
    for row in buf[..info.buffer_size()].chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks(channels) {
            let c = if channels < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            };
            rgb.extend(c.iter().map(|&b| b as f32 / 255.0));
        }
    }
    Ok((w, h, rgb))
}
