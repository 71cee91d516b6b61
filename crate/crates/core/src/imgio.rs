//! File ingestion and emission: PGM (P5) and grayscale PNG label masks,
//! JSON label tables, and palette renders for visual inspection.
//!
//! Pixel values are label ids; 8-bit files cover ids up to 255 and 16-bit
//! files up to 65535.

use crate::raster::{LabelMask, LabelTable, RasterError};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("label id {0} exceeds 16-bit pixel range")]
    IdRange(u32),
}

fn format_err(path: &Path, reason: impl Into<String>) -> ImgError {
    ImgError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Read a mask file (`.pgm` or `.png` by extension) against a label table.
pub fn read_mask(path: &Path, table: LabelTable) -> Result<LabelMask, ImgError> {
    let (width, height, ids) = read_ids(path)?;
    Ok(LabelMask::new(width, height, ids, table)?)
}

/// Read raw label ids from a mask file.
pub fn read_ids(path: &Path) -> Result<(u32, u32, Vec<u32>), ImgError> {
    match extension(path) {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        _ => Err(format_err(path, "unsupported extension, expected .pgm or .png")),
    }
}

/// Write label ids to a mask file (`.pgm` or `.png` by extension).
pub fn write_ids(path: &Path, width: u32, height: u32, ids: &[u32]) -> Result<(), ImgError> {
    match extension(path) {
        Some("pgm") => write_pgm(path, width, height, ids),
        Some("png") => write_png(path, width, height, ids),
        _ => Err(format_err(path, "unsupported extension, expected .pgm or .png")),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

/// Parse a binary P5 PGM, 8- or 16-bit (16-bit samples are big-endian).
pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u32>), ImgError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;

    let mut pos = 0usize;
    let magic = take_token(&bytes, &mut pos).ok_or_else(|| format_err(path, "missing magic"))?;
    if magic != b"P5" {
        return Err(format_err(path, "not a P5 PGM"));
    }
    let width = parse_dim(&bytes, &mut pos).ok_or_else(|| format_err(path, "bad width"))?;
    let height = parse_dim(&bytes, &mut pos).ok_or_else(|| format_err(path, "bad height"))?;
    let maxval = parse_dim(&bytes, &mut pos).ok_or_else(|| format_err(path, "bad maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;

    let count = width as usize * height as usize;
    let ids = if maxval < 256 {
        let data = bytes
            .get(pos..pos + count)
            .ok_or_else(|| format_err(path, "truncated pixel data"))?;
        data.iter().map(|&b| b as u32).collect()
    } else {
        let data = bytes
            .get(pos..pos + 2 * count)
            .ok_or_else(|| format_err(path, "truncated pixel data"))?;
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    Ok((width, height, ids))
}

/// Next header token, skipping whitespace and `#` comments.
fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_dim(bytes: &[u8], pos: &mut usize) -> Option<u32> {
    let token = take_token(bytes, pos)?;
    std::str::from_utf8(token).ok()?.parse().ok()
}

/// Write a binary P5 PGM; picks 8- or 16-bit depth from the largest id.
pub fn write_pgm(path: &Path, width: u32, height: u32, ids: &[u32]) -> Result<(), ImgError> {
    let max_id = ids.iter().copied().max().unwrap_or(0);
    if max_id > 65535 {
        return Err(ImgError::IdRange(max_id));
    }
    let maxval: u32 = if max_id < 256 { 255 } else { 65535 };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n{maxval}\n")?;
    if maxval == 255 {
        let data: Vec<u8> = ids.iter().map(|&id| id as u8).collect();
        out.write_all(&data)?;
    } else {
        let mut data = Vec::with_capacity(ids.len() * 2);
        for &id in ids {
            data.extend_from_slice(&(id as u16).to_be_bytes());
        }
        out.write_all(&data)?;
    }
    Ok(())
}

/// Read a grayscale PNG (8- or 16-bit single channel).
pub fn read_png(path: &Path) -> Result<(u32, u32, Vec<u32>), ImgError> {
    let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw().into_iter().map(|v| v as u32).collect()))
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw().into_iter().map(|v| v as u32).collect()))
        }
        _ => Err(format_err(path, "PNG is not single-channel grayscale")),
    }
}

/// Write a grayscale PNG; picks 8- or 16-bit depth from the largest id.
pub fn write_png(path: &Path, width: u32, height: u32, ids: &[u32]) -> Result<(), ImgError> {
    let max_id = ids.iter().copied().max().unwrap_or(0);
    if max_id > 65535 {
        return Err(ImgError::IdRange(max_id));
    }
    if max_id < 256 {
        let data: Vec<u8> = ids.iter().map(|&id| id as u8).collect();
        let buf = image::GrayImage::from_raw(width, height, data)
            .ok_or_else(|| format_err(path, "id buffer does not match dimensions"))?;
        buf.save(path).map_err(|e| format_err(path, e.to_string()))?;
    } else {
        let data: Vec<u16> = ids.iter().map(|&id| id as u16).collect();
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width, height, data)
            .ok_or_else(|| format_err(path, "id buffer does not match dimensions"))?;
        buf.save(path).map_err(|e| format_err(path, e.to_string()))?;
    }
    Ok(())
}

/// Read a label table from JSON: an object mapping id strings to labels,
/// e.g. `{"0": "others", "1": "black dog"}`.
pub fn read_label_table(path: &Path) -> Result<LabelTable, ImgError> {
    let text = std::fs::read_to_string(path)?;
    let raw: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    let mut entries = Vec::with_capacity(raw.len());
    for (key, label) in raw {
        let id: u32 = key
            .parse()
            .map_err(|_| format_err(path, format!("key {key:?} is not a label id")))?;
        entries.push((id, label));
    }
    Ok(LabelTable::from_entries(entries)?)
}

/// Write a label table as JSON with ids in ascending order.
pub fn write_label_table(path: &Path, table: &LabelTable) -> Result<(), ImgError> {
    let map: BTreeMap<u32, &str> = table.iter().collect();
    // BTreeMap<u32, _> keys sort numerically; serialize via string keys in that order
    let mut out = String::from("{");
    for (i, (id, label)) in map.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!(
            "{}: {}",
            serde_json::to_string(&id.to_string()).expect("string"),
            serde_json::to_string(label).expect("string")
        ));
    }
    out.push('}');
    std::fs::write(path, out)?;
    Ok(())
}

/// Deterministic palette color for a label id; id 0 is black.
pub fn palette_color(id: u32) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    // golden-angle hue walk keeps nearby ids visually distinct
    let hue = (id as f64 * 0.618_033_988_749_895) % 1.0;
    hsv_to_rgb(hue, 0.65, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64) % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Render label ids to an RGB PNG through the fixed palette, scaling each
/// cell to a `scale x scale` block.
pub fn write_palette_png(
    path: &Path,
    width: u32,
    height: u32,
    ids: &[u32],
    scale: u32,
) -> Result<(), ImgError> {
    let scale = scale.max(1);
    let (out_w, out_h) = (width * scale, height * scale);
    let mut data = Vec::with_capacity((out_w as usize) * (out_h as usize) * 3);
    for y in 0..out_h {
        for x in 0..out_w {
            let id = ids[((y / scale) as usize) * width as usize + (x / scale) as usize];
            data.extend_from_slice(&palette_color(id));
        }
    }
    let buf = image::RgbImage::from_raw(out_w, out_h, data)
        .ok_or_else(|| format_err(path, "render buffer does not match dimensions"))?;
    buf.save(path).map_err(|e| format_err(path, e.to_string()))?;
    Ok(())
}
