//! Session state and the operations the render worker performs on it.

use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};

use nerflens::edit::{apply_edit, load_mask, save_mask, EditCommand};
use nerflens::field::{rebuild_bitfield, DEFAULT_DENSITY_THRESHOLD};
use nerflens::formats::{encode_png, read_grid, read_json, write_json};
use nerflens::fusion::{CompositeSettings, FusedScene, FusionMode, FusionTransform, TunnelConfig};
use nerflens::geom::{quat_from_xyzw, Trs};
use nerflens::lens::{Camera, LensConfig};
use nerflens::raster::load_obj;
use nerflens::raster::RasterStyle;
use nerflens::raymarch::FrameStats;

use crate::protocol::{
    encode_packet, ClientMessage, FrameHeader, ServerMessage, FLAG_FUSED, FORMAT_PNG_RGBA8,
};

pub const CAMERA_NEAR: f64 = 0.05;
pub const CAMERA_FAR: f64 = 100.0;
pub const DEFAULT_CONTEXT_FOV: f64 = 90.0;

/// Files to load at startup.
#[derive(Clone, Debug, Default)]
pub struct SessionFiles {
    pub scene: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

/// A rendered frame ready to send.
#[derive(Clone, Debug)]
pub struct RenderedFrame {
    pub frame_id: u32,
    pub packet: Vec<u8>,
    pub stats: FrameStats,
    pub stats_message: ServerMessage,
}

pub struct Session {
    scene: Option<FusedScene>,
    pub camera: Camera,
    pub lens: LensConfig,
    pub tunnel: TunnelConfig,
    pub mode: FusionMode,
    pub style: RasterStyle,
    pub context_fov_deg: f64,
    pending_edits: Vec<EditCommand>,
    frame_id: u32,
    /// State changed since the last rendered frame.
    pub dirty: bool,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Session {
    pub fn new(lens: LensConfig) -> Self {
        let camera = Camera::new(Point3::new(0.0, 0.0, -1.0), Default::default(), CAMERA_NEAR, CAMERA_FAR)
            .expect("default camera is valid");
        Session {
            scene: None,
            camera,
            lens,
            tunnel: TunnelConfig::default(),
            mode: FusionMode::Tunnel,
            style: RasterStyle::Solid,
            context_fov_deg: DEFAULT_CONTEXT_FOV,
            pending_edits: Vec::new(),
            frame_id: 0,
            dirty: true,
        }
    }

    /// A session with the given files loaded and the camera framing the
    /// scene.
    pub fn open(files: &SessionFiles, lens: LensConfig) -> Result<Self, String> {
        let mut s = Session::new(lens);
        if let Some(p) = &files.scene {
            s.load_scene(p)?;
            s.frame_scene();
        }
        if let Some(p) = &files.mesh {
            s.load_mesh(p)?;
        }
        if let Some(p) = &files.mask {
            s.load_mask(p)?;
        }
        lens.validate(&s.camera).map_err(err)?;
        Ok(s)
    }

    pub fn scene(&self) -> Option<&FusedScene> {
        self.scene.as_ref()
    }

    pub fn frame_id(&self) -> u32 {
        self.frame_id
    }

    /// Places the camera in front of the scene, looking at its center
    /// along +z.
    pub fn frame_scene(&mut self) {
        let Some(scene) = &self.scene else { return };
        let aabb = scene.grid.geometry().aabb();
        let c = scene.get_alignment().trs.apply_point(&aabb.center());
        let back = aabb.extent().norm() * scene.get_alignment().trs.scale * 0.6;
        if let Ok(cam) = Camera::look_at(c - Vector3::z() * back, c, Vector3::y(), CAMERA_NEAR, CAMERA_FAR) {
            self.camera = cam;
        }
    }

    fn scene_mut(&mut self) -> Result<&mut FusedScene, String> {
        self.scene.as_mut().ok_or_else(|| "no scene loaded".to_string())
    }

    fn load_scene(&mut self, path: &Path) -> Result<(), String> {
        let grid = read_grid(path).map_err(err)?;
        let bits = rebuild_bitfield(&grid, DEFAULT_DENSITY_THRESHOLD).0;
        let mesh = self.scene.take().and_then(|s| s.mesh);
        self.scene = Some(FusedScene::new(grid, bits, mesh).map_err(err)?);
        self.pending_edits.clear();
        Ok(())
    }

    fn load_mesh(&mut self, path: &Path) -> Result<(), String> {
        let mesh = load_obj(path).map_err(err)?;
        self.scene_mut()?.mesh = Some(mesh);
        Ok(())
    }

    fn load_mask(&mut self, path: &Path) -> Result<(), String> {
        let scene = self.scene_mut()?;
        scene.bits = load_mask(path, &scene.grid, DEFAULT_DENSITY_THRESHOLD).map_err(err)?;
        self.pending_edits.clear();
        Ok(())
    }

    /// Applies queued edits. Called at frame boundaries and before the
    /// mask is saved.
    pub fn flush_edits(&mut self) -> Result<(), String> {
        let edits = std::mem::take(&mut self.pending_edits);
        let Some(scene) = self.scene.as_mut() else {
            return Ok(());
        };
        let placement = scene.get_alignment().trs;
        for cmd in &edits {
            apply_edit(&mut scene.grid, &mut scene.bits, cmd, &placement, DEFAULT_DENSITY_THRESHOLD)
                .map_err(err)?;
        }
        Ok(())
    }

    /// Applies one control message. `frame_ack` is the worker's business and
    /// is accepted here as a no-op.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<(), String> {
        match msg {
            ClientMessage::Pose(m) => {
                let q = quat_from_xyzw(m.quat).map_err(err)?;
                let cam = Camera::new(Point3::from(m.pos), q, CAMERA_NEAR, CAMERA_FAR).map_err(err)?;
                self.lens.validate(&cam).map_err(err)?;
                self.camera = cam;
            }
            ClientMessage::Lens(m) => {
                let lens = LensConfig {
                    fov_deg: m.fov_deg,
                    ppd: m.ppd,
                    plane_w: m.plane_w.unwrap_or(self.lens.plane_w),
                    far_len: m.far_len.unwrap_or(self.lens.far_len),
                    ..self.lens
                };
                lens.validate(&self.camera).map_err(err)?;
                if lens.output_side() > u16::MAX as usize {
                    return Err(format!("frame side {} exceeds {}", lens.output_side(), u16::MAX));
                }
                self.lens = lens;
            }
            ClientMessage::Fusion(m) => {
                let tunnel = TunnelConfig {
                    lens_radius_frac: m.lens_radius_frac.unwrap_or(self.tunnel.lens_radius_frac),
                    feather_deg: m.feather_deg.unwrap_or(self.tunnel.feather_deg),
                    merge_alpha: m.merge_alpha.unwrap_or(self.tunnel.merge_alpha),
                };
                tunnel.validate().map_err(err)?;
                let style = match &m.style {
                    Some(s) => s.parse().map_err(err)?,
                    None => self.style,
                };
                let ctx = m.context_fov_deg.unwrap_or(self.context_fov_deg);
                if !(ctx > 0.0 && ctx < 180.0) {
                    return Err(format!("context_fov_deg out of range (0, 180): {ctx}"));
                }
                self.tunnel = tunnel;
                self.style = style;
                self.context_fov_deg = ctx;
                self.mode = m.mode.unwrap_or(self.mode);
            }
            ClientMessage::Align(m) => {
                let q = quat_from_xyzw(m.rotation_quat).map_err(err)?;
                let t = FusionTransform::new(Trs::new(Vector3::from(m.translation), q, m.scale).map_err(err)?)
                    .map_err(err)?;
                self.flush_edits()?;
                self.scene_mut()?.set_alignment(t).map_err(err)?;
            }
            ClientMessage::Edit(m) => {
                let cmd = EditCommand {
                    mode: m.mode,
                    center: m.center,
                    radius: m.radius,
                    hard: m.hard,
                };
                cmd.validate().map_err(err)?;
                self.scene_mut()?;
                self.pending_edits.push(cmd);
            }
            ClientMessage::SaveMask(m) => {
                self.flush_edits()?;
                let scene = self.scene_mut()?;
                save_mask(&scene.bits, Path::new(&m.path)).map_err(err)?;
                return Ok(());
            }
            ClientMessage::LoadMask(m) => self.load_mask(Path::new(&m.path))?,
            ClientMessage::SaveTransform(m) => {
                let t = self.scene_mut()?.get_alignment();
                write_json(&t, Path::new(&m.path)).map_err(err)?;
                return Ok(());
            }
            ClientMessage::LoadTransform(m) => {
                let t: FusionTransform = read_json(Path::new(&m.path)).map_err(err)?;
                self.flush_edits()?;
                self.scene_mut()?.set_alignment(t).map_err(err)?;
            }
            ClientMessage::LoadScene(m) => {
                self.load_scene(Path::new(&m.path))?;
                self.frame_scene();
            }
            ClientMessage::LoadMesh(m) => self.load_mesh(Path::new(&m.path))?,
            ClientMessage::RequestFrame(_) => {}
            ClientMessage::FrameAck(_) => return Ok(()),
        }
        self.dirty = true;
        Ok(())
    }

    /// Renders the current state. Frame ids increase by one per call, also
    /// when rendering fails; the error carries the id it would have used.
    pub fn render(&mut self) -> Result<RenderedFrame, (u32, String)> {
        self.frame_id += 1;
        let id = self.frame_id;
        self.dirty = false;
        self.flush_edits().map_err(|e| (id, e))?;
        let Some(scene) = self.scene.as_ref() else {
            return Err((id, "no scene loaded".into()));
        };
        let mode = if scene.mesh.is_some() { self.mode } else { FusionMode::None };
        let march = scene.march_defaults();
        let settings = CompositeSettings {
            lens: self.lens,
            march,
            mode,
            tunnel: self.tunnel,
            style: self.style,
            context_fov_deg: self.context_fov_deg.max(self.lens.fov_deg),
        };
        let out = scene.render(&self.camera, &settings).map_err(|e| (id, e.to_string()))?;
        let frame = out.frame.flatten(march.background);
        let png = encode_png(&frame).map_err(|e| (id, e.to_string()))?;
        let (w, h) = (frame.width as u16, frame.height as u16);
        let header = FrameHeader {
            width: w,
            height: h,
            format: FORMAT_PNG_RGBA8,
            flags: if mode == FusionMode::None { 0 } else { FLAG_FUSED },
            frame_id: id,
            payload_len: png.len() as u32,
        };
        Ok(RenderedFrame {
            frame_id: id,
            packet: encode_packet(header, &png),
            stats: out.stats,
            stats_message: ServerMessage::stats(id, &out.stats, w as u32, h as u32),
        })
    }
}
