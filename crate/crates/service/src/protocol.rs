//! Wire protocol for `/stream`.
//!
//! Text frames carry JSON objects tagged by `"type"`. Every client message
//! carries a `seq` and is answered with `{"type":"ack","seq":n}` or
//! `{"type":"err","seq":n,"reason":"..."}`. Rendered frames go out as binary
//! packets (an 18-byte header followed by a PNG), each followed by a
//! `{"type":"stats",...}` text message.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nerflens::edit::EditMode;
use nerflens::fusion::FusionMode;
use nerflens::raymarch::FrameStats;

pub const FRAME_MAGIC: &[u8; 4] = b"MNLF";
pub const FRAME_HEADER_LEN: usize = 18;
/// Payload is a PNG holding straight-alpha RGBA8.
pub const FORMAT_PNG_RGBA8: u8 = 0;
/// Reserved for uncompressed RGBA8 payloads.
pub const FORMAT_RAW_RGBA8: u8 = 1;
/// Set when the frame was composited with raster context.
pub const FLAG_FUSED: u8 = 1;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseMsg {
    pub pos: [f64; 3],
    /// `[x, y, z, w]`, camera to world.
    pub quat: [f64; 4],
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensMsg {
    pub fov_deg: f64,
    pub ppd: f64,
    #[serde(default)]
    pub plane_w: Option<f64>,
    #[serde(default)]
    pub far_len: Option<f64>,
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionMsg {
    #[serde(default)]
    pub mode: Option<FusionMode>,
    #[serde(default)]
    pub lens_radius_frac: Option<f64>,
    #[serde(default)]
    pub feather_deg: Option<f64>,
    #[serde(default)]
    pub merge_alpha: Option<f64>,
    #[serde(default)]
    pub context_fov_deg: Option<f64>,
    /// `"solid"` or `"wireframe"`.
    #[serde(default)]
    pub style: Option<String>,
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignMsg {
    pub translation: [f64; 3],
    pub rotation_quat: [f64; 4],
    pub scale: f64,
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditMsg {
    pub mode: EditMode,
    pub center: [f64; 3],
    pub radius: f64,
    #[serde(default)]
    pub hard: bool,
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathMsg {
    pub path: String,
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameAckMsg {
    pub frame_id: u32,
    #[serde(default)]
    pub seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmptyMsg {
    #[serde(default)]
    pub seq: Option<u64>,
}

/// A validated control message.
#[derive(Clone, Debug, PartialEq)]
pub enum ClientMessage {
    Pose(PoseMsg),
    Lens(LensMsg),
    Fusion(FusionMsg),
    Align(AlignMsg),
    Edit(EditMsg),
    SaveMask(PathMsg),
    LoadMask(PathMsg),
    SaveTransform(PathMsg),
    LoadTransform(PathMsg),
    LoadScene(PathMsg),
    LoadMesh(PathMsg),
    RequestFrame(EmptyMsg),
    FrameAck(FrameAckMsg),
}

pub const MESSAGE_TYPES: [&str; 13] = [
    "pose",
    "lens",
    "fusion",
    "align",
    "edit",
    "save_mask",
    "load_mask",
    "save_transform",
    "load_transform",
    "load_scene",
    "load_mesh",
    "request_frame",
    "frame_ack",
];

/// Why a message was rejected, with the `seq` to answer under if one could
/// be read.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub seq: Option<u64>,
    pub reason: String,
}

fn typed<T: DeserializeOwned>(value: &Value, seq: Option<u64>) -> Result<T, Rejection> {
    let mut obj = value.clone();
    if let Some(map) = obj.as_object_mut() {
        map.remove("type");
    }
    serde_path_to_error::deserialize(obj).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Rejection {
            seq,
            reason: if path == "." {
                format!("schema: {inner}")
            } else {
                format!("schema: {path}: {inner}")
            },
        }
    })
}

/// Parses one text frame.
pub fn parse_message(text: &str) -> Result<(Option<u64>, ClientMessage), Rejection> {
    let value: Value = serde_json::from_str(text).map_err(|e| Rejection {
        seq: None,
        reason: format!("invalid json: {e}"),
    })?;
    let Some(obj) = value.as_object() else {
        return Err(Rejection {
            seq: None,
            reason: "message must be a JSON object".into(),
        });
    };
    let seq = obj.get("seq").and_then(Value::as_u64);
    let Some(kind) = obj.get("type").and_then(Value::as_str) else {
        return Err(Rejection {
            seq,
            reason: "schema: type: missing field `type`".into(),
        });
    };
    let msg = match kind {
        "pose" => ClientMessage::Pose(typed(&value, seq)?),
        "lens" => ClientMessage::Lens(typed(&value, seq)?),
        "fusion" => ClientMessage::Fusion(typed(&value, seq)?),
        "align" => ClientMessage::Align(typed(&value, seq)?),
        "edit" => ClientMessage::Edit(typed(&value, seq)?),
        "save_mask" => ClientMessage::SaveMask(typed(&value, seq)?),
        "load_mask" => ClientMessage::LoadMask(typed(&value, seq)?),
        "save_transform" => ClientMessage::SaveTransform(typed(&value, seq)?),
        "load_transform" => ClientMessage::LoadTransform(typed(&value, seq)?),
        "load_scene" => ClientMessage::LoadScene(typed(&value, seq)?),
        "load_mesh" => ClientMessage::LoadMesh(typed(&value, seq)?),
        "request_frame" => ClientMessage::RequestFrame(typed(&value, seq)?),
        "frame_ack" => ClientMessage::FrameAck(typed(&value, seq)?),
        _ => {
            return Err(Rejection {
                seq,
                reason: "unknown_type".into(),
            })
        }
    };
    Ok((seq, msg))
}

/// Server-to-client text messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack {
        seq: Option<u64>,
    },
    Err {
        seq: Option<u64>,
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frame_id: Option<u32>,
    },
    Stats {
        frame_id: u32,
        rays_total: u64,
        rays_active: u64,
        samples_total: u64,
        wall_time_ms: f64,
        skipped_voxel_spans: u64,
        width: u32,
        height: u32,
    },
}

impl ServerMessage {
    pub fn stats(frame_id: u32, s: &FrameStats, width: u32, height: u32) -> Self {
        ServerMessage::Stats {
            frame_id,
            rays_total: s.rays_total,
            rays_active: s.rays_active,
            samples_total: s.samples_total,
            wall_time_ms: s.wall_time_ms,
            skipped_voxel_spans: s.skipped_voxel_spans,
            width,
            height,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub width: u16,
    pub height: u16,
    pub format: u8,
    pub flags: u8,
    pub frame_id: u32,
    pub payload_len: u32,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("packet shorter than the {FRAME_HEADER_LEN}-byte header ({0} bytes)")]
    Truncated(usize),
    #[error("bad frame magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("payload length {declared} does not match {actual} bytes present")]
    LengthMismatch { declared: u32, actual: usize },
    #[error("unknown frame format {0}")]
    UnknownFormat(u8),
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut b = [0u8; FRAME_HEADER_LEN];
        b[0..4].copy_from_slice(FRAME_MAGIC);
        b[4..6].copy_from_slice(&self.width.to_le_bytes());
        b[6..8].copy_from_slice(&self.height.to_le_bytes());
        b[8] = self.format;
        b[9] = self.flags;
        b[10..14].copy_from_slice(&self.frame_id.to_le_bytes());
        b[14..18].copy_from_slice(&self.payload_len.to_le_bytes());
        b
    }
}

pub fn encode_packet(header: FrameHeader, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(payload);
    out
}

/// Splits a packet into its header and payload, validating both.
pub fn decode_packet(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), PacketError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(PacketError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != FRAME_MAGIC {
        return Err(PacketError::BadMagic(magic));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let header = FrameHeader {
        width: u16_at(4),
        height: u16_at(6),
        format: bytes[8],
        flags: bytes[9],
        frame_id: u32_at(10),
        payload_len: u32_at(14),
    };
    if header.format > FORMAT_RAW_RGBA8 {
        return Err(PacketError::UnknownFormat(header.format));
    }
    let payload = &bytes[FRAME_HEADER_LEN..];
    if payload.len() != header.payload_len as usize {
        return Err(PacketError::LengthMismatch {
            declared: header.payload_len,
            actual: payload.len(),
        });
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = FrameHeader {
            width: 0x0102,
            height: 0x0304,
            format: FORMAT_PNG_RGBA8,
            flags: FLAG_FUSED,
            frame_id: 0x0a0b0c0d,
            payload_len: 3,
        };
        let p = encode_packet(h, &[7, 8, 9]);
        assert_eq!(
            p,
            [b'M', b'N', b'L', b'F', 2, 1, 4, 3, 0, 1, 0x0d, 0x0c, 0x0b, 0x0a, 3, 0, 0, 0, 7, 8, 9]
        );
        assert_eq!(decode_packet(&p).unwrap(), (h, &[7u8, 8, 9][..]));
    }

    #[test]
    fn malformed_packets() {
        assert_eq!(decode_packet(b"MNLF"), Err(PacketError::Truncated(4)));
        let mut p = encode_packet(
            FrameHeader { width: 1, height: 1, format: 0, flags: 0, frame_id: 1, payload_len: 2 },
            &[1, 2],
        );
        assert!(matches!(decode_packet(&p[..19]), Err(PacketError::LengthMismatch { .. })));
        p[8] = 9;
        assert_eq!(decode_packet(&p), Err(PacketError::UnknownFormat(9)));
        p[0] = b'X';
        assert!(matches!(decode_packet(&p), Err(PacketError::BadMagic(_))));
    }

    #[test]
    fn pose_parses() {
        let (seq, m) = parse_message(r#"{"type":"pose","pos":[0,0,0],"quat":[0,0,0,1],"seq":1}"#).unwrap();
        assert_eq!(seq, Some(1));
        assert!(matches!(m, ClientMessage::Pose(_)));
    }

    #[test]
    fn unknown_type() {
        let e = parse_message(r#"{"type":"teleport","seq":4}"#).unwrap_err();
        assert_eq!(e, Rejection { seq: Some(4), reason: "unknown_type".into() });
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let e = parse_message(r#"{"type":"pose","pos":[0,"x",0],"quat":[0,0,0,1],"seq":2}"#).unwrap_err();
        assert_eq!(e.seq, Some(2));
        assert!(e.reason.contains("pos[1]"), "{}", e.reason);
        let e = parse_message(r#"{"type":"edit","mode":"smudge","center":[0,0,0],"radius":1,"seq":3}"#).unwrap_err();
        assert!(e.reason.contains("mode"), "{}", e.reason);
        let e = parse_message(r#"{"type":"lens","ppd":3,"seq":5}"#).unwrap_err();
        assert!(e.reason.contains("fov_deg"), "{}", e.reason);
    }

    #[test]
    fn stats_message_shape() {
        let s = FrameStats { rays_total: 4, rays_active: 3, samples_total: 9, wall_time_ms: 1.5, skipped_voxel_spans: 2 };
        let v: Value = serde_json::from_str(&ServerMessage::stats(7, &s, 2, 2).to_json()).unwrap();
        assert_eq!(v["type"], "stats");
        assert_eq!(v["frame_id"], 7);
        assert_eq!(v["samples_total"], 9);
    }
}
