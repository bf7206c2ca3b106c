use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::frame::{DepthMap, Framebuffer, DEPTH_SENTINEL};

use super::{read_json, write_atomic, write_json, FormatError};

/// JSON written next to a raw depth file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub sentinel: f32,
}

/// Encodes the framebuffer as straight-alpha RGBA8 PNG bytes.
pub fn encode_png(frame: &Framebuffer) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &frame.to_rgba8(),
        frame.width as u32,
        frame.height as u32,
        image::ExtendedColorType::Rgba8,
    )
    .map_err(|e| FormatError::CorruptPayload(e.to_string()))?;
    Ok(out)
}

pub fn write_png(frame: &Framebuffer, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode_png(frame)?)
}

/// Premultiplied RGBA as little-endian f32, row-major.
pub fn write_raw_f32(frame: &Framebuffer, path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(frame.pixels.len() * 16);
    for p in &frame.pixels {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

pub fn read_raw_f32(path: &Path, width: usize, height: usize) -> Result<Framebuffer, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.len() != width * height * 16 {
        return Err(FormatError::CorruptPayload(format!(
            "expected {} bytes for {width}x{height} RGBA f32, found {}",
            width * height * 16,
            bytes.len()
        )));
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut fb = Framebuffer::transparent(width, height);
    for (px, c) in fb.pixels.iter_mut().zip(vals.chunks_exact(4)) {
        *px = [c[0], c[1], c[2], c[3]];
    }
    Ok(fb)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Depth as little-endian f32 plus `<path>.json` with size, clip range and
/// the sentinel used for empty pixels.
pub fn write_depth(depth: &DepthMap, path: &Path) -> Result<(), FormatError> {
    let mut out = Vec::with_capacity(depth.depth.len() * 4);
    for d in &depth.depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    write_atomic(path, &out)?;
    write_json(
        &DepthSidecar {
            width: depth.width,
            height: depth.height,
            near: depth.near,
            far: depth.far,
            sentinel: DEPTH_SENTINEL,
        },
        &sidecar_path(path),
    )
}

pub fn read_depth(path: &Path) -> Result<DepthMap, FormatError> {
    let meta: DepthSidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path)?;
    if bytes.len() != meta.width * meta.height * 4 {
        return Err(FormatError::CorruptPayload(format!(
            "expected {} depth bytes, found {}",
            meta.width * meta.height * 4,
            bytes.len()
        )));
    }
    let mut map = DepthMap::empty(meta.width, meta.height, meta.near, meta.far);
    for (d, c) in map.depth.iter_mut().zip(bytes.chunks_exact(4)) {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        *d = if v == meta.sentinel { DEPTH_SENTINEL } else { v };
    }
    Ok(map)
}
