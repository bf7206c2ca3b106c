//! On-disk artifacts.
//!
//! Binary files start with a four-byte magic and a little-endian `u32`
//! version. Readers validate sizes by arithmetic before touching the payload
//! so truncation is reported as [`FormatError::CorruptPayload`] rather than
//! as a short read. Writers go through a temporary file in the destination
//! directory followed by a rename.
//!
//! | magic  | payload                                                        |
//! |--------|----------------------------------------------------------------|
//! | `MNLV` | `u32 h, w, l`, `f32 origin[3]`, `f32 voxel_size`, `h·w·l × f32 r,g,b,σ` |
//! | `MNLB` | `u32 h, w, l`, `ceil(h·w·l / 8)` bytes, LSB-first                |

mod binary;
mod image_io;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use binary::{decode_grid, decode_mask, encode_grid, encode_mask, GRID_MAGIC, MASK_MAGIC};
pub use image_io::{encode_png, 
    read_depth, read_raw_f32, write_depth, write_png, write_raw_f32, DepthSidecar,
};

use crate::bench::Trajectory;
use crate::edit::EditLog;
use crate::field::{OccupancyBitfield, RadianceFieldGrid, SceneSpec};
use crate::fusion::FusionTransform;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("{magic} version {version} is not supported (expected {FORMAT_VERSION})")]
    VersionUnsupported { magic: String, version: u32 },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("{path}: {msg}")]
    Json { path: String, msg: String },
    #[error("unrecognized artifact: {0}")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything [`read_any`] can return.
#[derive(Debug)]
pub enum Artifact {
    Grid(RadianceFieldGrid),
    Mask(OccupancyBitfield),
    Trajectory(Trajectory),
    Transform(FusionTransform),
    EditLog(EditLog),
    SceneSpec(SceneSpec),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Grid(_) => "grid",
            Artifact::Mask(_) => "mask",
            Artifact::Trajectory(_) => "trajectory",
            Artifact::Transform(_) => "transform",
            Artifact::EditLog(_) => "edit_log",
            Artifact::SceneSpec(_) => "scene_spec",
        }
    }
}

/// Loads an artifact, trusting magic bytes over the file extension. Text
/// artifacts are told apart by their JSON shape.
pub fn read_any(path: &Path) -> Result<Artifact, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 {
        match &bytes[..4] {
            m if m == GRID_MAGIC => return Ok(Artifact::Grid(decode_grid(&bytes)?)),
            m if m == MASK_MAGIC => return Ok(Artifact::Mask(decode_mask(&bytes)?)),
            _ => {}
        }
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| FormatError::BadMagic {
        found: bytes.iter().take(4).copied().collect(),
    })?;
    let trimmed = text.trim_start();
    let first_line = trimmed.lines().next().unwrap_or("");
    let single_doc = serde_json::from_str::<serde_json::Value>(trimmed).ok();
    match single_doc {
        Some(serde_json::Value::Array(_)) => Ok(Artifact::Trajectory(parse_json(text, path)?)),
        Some(serde_json::Value::Object(map)) => {
            if map.contains_key("rotation_quat") {
                Ok(Artifact::Transform(parse_json(text, path)?))
            } else if map.contains_key("samples") {
                Ok(Artifact::Trajectory(parse_json(text, path)?))
            } else if map.contains_key("dims") && map.contains_key("voxel_size") {
                Ok(Artifact::SceneSpec(parse_json(text, path)?))
            } else {
                Ok(Artifact::EditLog(EditLog::parse(text)?))
            }
        }
        _ if first_line.starts_with('{') => Ok(Artifact::EditLog(EditLog::parse(text)?)),
        _ => Err(FormatError::BadMagic {
            found: bytes.iter().take(4).copied().collect(),
        }),
    }
}

pub fn read_grid(path: &Path) -> Result<RadianceFieldGrid, FormatError> {
    match read_any(path)? {
        Artifact::Grid(g) => Ok(g),
        other => Err(FormatError::Unknown(format!(
            "{}: expected a grid, found a {}",
            path.display(),
            other.kind()
        ))),
    }
}

pub fn read_mask(path: &Path) -> Result<OccupancyBitfield, FormatError> {
    match read_any(path)? {
        Artifact::Mask(m) => Ok(m),
        other => Err(FormatError::Unknown(format!(
            "{}: expected a mask, found a {}",
            path.display(),
            other.kind()
        ))),
    }
}

pub fn write_grid(grid: &RadianceFieldGrid, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode_grid(grid))
}

pub fn write_mask(mask: &OccupancyBitfield, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &encode_mask(mask))
}

/// Hex SHA-256 of the grid's `MNLV` encoding.
pub fn grid_hash(grid: &RadianceFieldGrid) -> String {
    hex::encode(Sha256::digest(encode_grid(grid)))
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path)?;
    parse_json(&text, path)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), FormatError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| FormatError::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    text.push(b'\n');
    write_atomic(path, &text)
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| FormatError::Io(e.error))?;
    Ok(())
}
