//! Combining the volume lens with rasterized CAD context.
//!
//! All frames are premultiplied RGBA. Three composites are provided:
//!
//! * tunnel: the lens image fills a circle around the view axis and the
//!   raster frame fills the periphery, blended across an angular feather;
//! * merge: the lens image laid translucently over the raster frame, for
//!   checking alignment;
//! * occlude: a per-pixel depth test, nearer layer in front.
//!
//! The alignment transform places the field's model space in CAD world
//! space; rendering samples the field at `inverse(T)·p`.

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::field::{CropBox, OccupancyBitfield, RadianceFieldGrid};
use crate::frame::{DepthMap, Framebuffer, View};
use crate::geom::{quat_from_xyzw, quat_to_xyzw, Trs};
use crate::lens::{Camera, Intrinsics, LensConfig};
use crate::raster::{rasterize, Mesh, RasterOutput, RasterStyle};
use crate::raymarch::{render_frame, render_frame_occluded, FrameStats, MarchConfig, VolumeScene};
use crate::{Error, Result};

/// Pose agreement required before two frames are combined.
pub const POSE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelConfig {
    /// Lens circle radius as a fraction of half the lens field of view.
    pub lens_radius_frac: f64,
    pub feather_deg: f64,
    pub merge_alpha: f64,
}

impl Default for TunnelConfig {
    fn default() -> Self {
        TunnelConfig {
            lens_radius_frac: 1.0,
            feather_deg: 2.0,
            merge_alpha: 1.0,
        }
    }
}

impl TunnelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feather_deg >= 0.0 && self.feather_deg.is_finite()) {
            return Err(Error::invalid(format!(
                "feather_deg must be >= 0, got {}",
                self.feather_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.merge_alpha) {
            return Err(Error::invalid(format!(
                "merge_alpha must lie in [0, 1], got {}",
                self.merge_alpha
            )));
        }
        if !(self.lens_radius_frac > 0.0 && self.lens_radius_frac.is_finite()) {
            return Err(Error::invalid(format!(
                "lens_radius_frac must be > 0, got {}",
                self.lens_radius_frac
            )));
        }
        Ok(())
    }

    /// Lens weight at eccentricity `theta_deg`: 1 inside `r − feather`,
    /// 0 from `r` outward, smoothstep in between.
    pub fn weight(&self, theta_deg: f64, lens_fov_deg: f64) -> f64 {
        let r = self.lens_radius_frac * lens_fov_deg * 0.5;
        let e0 = r - self.feather_deg;
        if theta_deg >= r {
            0.0
        } else if theta_deg <= e0 {
            1.0
        } else {
            let t = (theta_deg - e0) / (r - e0);
            1.0 - t * t * (3.0 - 2.0 * t)
        }
    }
}

/// `w · (m·N + (1 − m·α_N)·R) + (1 − w) · R` on premultiplied pixels.
pub fn blend_pixel(nerf: [f32; 4], raster: [f32; 4], w: f64, merge_alpha: f64) -> [f32; 4] {
    let a = merge_alpha * nerf[3] as f64;
    let mut out = [0.0f32; 4];
    for c in 0..4 {
        let r = raster[c] as f64;
        let over = merge_alpha * nerf[c] as f64 + (1.0 - a) * r;
        out[c] = (w * over + (1.0 - w) * r) as f32;
    }
    out
}

fn require_same_view(a: &Framebuffer, b: &Framebuffer) -> Result<(View, View)> {
    let (Some(va), Some(vb)) = (a.view, b.view) else {
        return Err(Error::PoseMismatch("frame carries no view".into()));
    };
    if !va.same_pose(&vb, POSE_TOL) {
        return Err(Error::PoseMismatch(format!(
            "positions {:?} vs {:?}",
            va.position.coords.as_slice(),
            vb.position.coords.as_slice()
        )));
    }
    Ok((va, vb))
}

/// Tunnel composite over the raster frame's pixel grid. The lens image is
/// looked up nearest-pixel along each raster pixel's view direction.
pub fn composite_tunnel(nerf: &Framebuffer, raster: &Framebuffer, cfg: &TunnelConfig) -> Result<Framebuffer> {
    cfg.validate()?;
    let (vn, vr) = require_same_view(nerf, raster)?;
    if vn.fov_deg > vr.fov_deg + 1e-12 {
        return Err(Error::invalid(format!(
            "lens fov {} exceeds context fov {}",
            vn.fov_deg, vr.fov_deg
        )));
    }
    let ri = Intrinsics::new(vr.fov_deg, raster.width);
    let ni = Intrinsics::new(vn.fov_deg, nerf.width);
    let mut out = raster.clone();
    for py in 0..raster.height {
        for px in 0..raster.width {
            let d = ri.pixel_center_direction(px, py);
            let theta = d.z.clamp(-1.0, 1.0).acos().to_degrees();
            let w = cfg.weight(theta, vn.fov_deg);
            if w == 0.0 {
                continue;
            }
            let n = sample_nearest(nerf, &ni, &d);
            out.set(px, py, blend_pixel(n, raster.get(px, py), w, cfg.merge_alpha));
        }
    }
    Ok(out)
}

fn sample_nearest(frame: &Framebuffer, intr: &Intrinsics, d_cam: &Vector3<f64>) -> [f32; 4] {
    match intr.project(&nalgebra::Point3::from(*d_cam)) {
        Some((u, v)) if u >= 0.0 && v >= 0.0 => {
            let (x, y) = (u.floor() as usize, v.floor() as usize);
            if x < frame.width && y < frame.height {
                frame.get(x, y)
            } else {
                [0.0; 4]
            }
        }
        _ => [0.0; 4],
    }
}

/// Translucent overlay of two frames with identical views and sizes.
pub fn composite_merge(nerf: &Framebuffer, raster: &Framebuffer, merge_alpha: f64) -> Result<Framebuffer> {
    require_same_view(nerf, raster)?;
    same_size(nerf.width, nerf.height, raster.width, raster.height)?;
    let mut out = raster.clone();
    for (o, (n, r)) in out.pixels.iter_mut().zip(nerf.pixels.iter().zip(&raster.pixels)) {
        *o = blend_pixel(*n, *r, 1.0, merge_alpha);
    }
    Ok(out)
}

fn same_size(w0: usize, h0: usize, w1: usize, h1: usize) -> Result<()> {
    if (w0, h0) != (w1, h1) {
        return Err(Error::ShapeMismatch {
            expected: format!("{w0}x{h0}"),
            found: format!("{w1}x{h1}"),
        });
    }
    Ok(())
}

/// Per-pixel depth test. The nearer layer is composited over the other;
/// equal depths go to the raster layer.
pub fn depth_occlude(
    nerf: &Framebuffer,
    nerf_depth: &DepthMap,
    raster: &RasterOutput,
) -> Result<Framebuffer> {
    require_same_view(nerf, &raster.color)?;
    same_size(nerf.width, nerf.height, raster.color.width, raster.color.height)?;
    same_size(nerf.width, nerf.height, nerf_depth.width, nerf_depth.height)?;
    let mut out = nerf.clone();
    for i in 0..out.pixels.len() {
        let n = nerf.pixels[i];
        let r = raster.color.pixels[i];
        let rd = raster.depth.depth[i];
        let nd = nerf_depth.depth[i];
        let (front, back) = if DepthMap::is_sentinel(rd) || nd < rd { (n, r) } else { (r, n) };
        let a = front[3];
        out.pixels[i] = [
            front[0] + (1.0 - a) * back[0],
            front[1] + (1.0 - a) * back[1],
            front[2] + (1.0 - a) * back[2],
            front[3] + (1.0 - a) * back[3],
        ];
    }
    Ok(out)
}

/// Placement of the field's model space in CAD world space.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FusionTransform {
    pub trs: Trs,
}

#[derive(Serialize, Deserialize)]
struct FusionTransformJson {
    translation: [f64; 3],
    rotation_quat: [f64; 4],
    scale: f64,
    matrix: [f64; 16],
}

impl FusionTransform {
    pub fn new(trs: Trs) -> Result<Self> {
        Trs::new(trs.translation, trs.rotation, trs.scale)?;
        Ok(FusionTransform { trs })
    }

    pub fn identity() -> Self {
        FusionTransform { trs: Trs::identity() }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        self.trs.matrix()
    }
}

impl Serialize for FusionTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FusionTransformJson {
            translation: self.trs.translation.into(),
            rotation_quat: quat_to_xyzw(&self.trs.rotation),
            scale: self.trs.scale,
            matrix: self.trs.matrix_row_major(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FusionTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = FusionTransformJson::deserialize(d)?;
        let rot = quat_from_xyzw(raw.rotation_quat).map_err(D::Error::custom)?;
        let trs = Trs::new(Vector3::from(raw.translation), rot, raw.scale).map_err(D::Error::custom)?;
        let m = trs.matrix_row_major();
        if let Some(i) = (0..16).find(|&i| (m[i] - raw.matrix[i]).abs() > 1e-5) {
            return Err(D::Error::custom(format!(
                "matrix[{i}] = {} disagrees with the decomposition ({})",
                raw.matrix[i], m[i]
            )));
        }
        Ok(FusionTransform { trs })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Lens image only.
    None,
    Tunnel,
    Merge,
    Occlude,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "tunnel" => Ok(FusionMode::Tunnel),
            "merge" => Ok(FusionMode::Merge),
            "occlude" => Ok(FusionMode::Occlude),
            other => Err(Error::invalid(format!(
                "fusion mode must be none, tunnel, merge or occlude, got {other:?}"
            ))),
        }
    }
}

/// Everything one composite render needs besides the scene and camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompositeSettings {
    pub lens: LensConfig,
    pub march: MarchConfig,
    pub mode: FusionMode,
    pub tunnel: TunnelConfig,
    pub style: RasterStyle,
    /// Field of view of the peripheral raster frame in tunnel mode.
    pub context_fov_deg: f64,
}

#[derive(Clone, Debug)]
pub struct CompositeOutput {
    /// Premultiplied composite; flatten over the march background to show.
    pub frame: Framebuffer,
    /// Depth of the lens image.
    pub depth: DepthMap,
    pub stats: FrameStats,
}

/// A field with its mask, optional CAD mesh and the alignment between them.
#[derive(Clone, Debug)]
pub struct FusedScene {
    pub grid: RadianceFieldGrid,
    pub bits: OccupancyBitfield,
    pub mesh: Option<Mesh>,
    alignment: FusionTransform,
}

impl FusedScene {
    pub fn new(grid: RadianceFieldGrid, bits: OccupancyBitfield, mesh: Option<Mesh>) -> Result<Self> {
        bits.check_matches(&grid)?;
        Ok(FusedScene {
            grid,
            bits,
            mesh,
            alignment: FusionTransform::identity(),
        })
    }

    pub fn set_alignment(&mut self, t: FusionTransform) -> Result<()> {
        self.alignment = FusionTransform::new(t.trs)?;
        Ok(())
    }

    pub fn get_alignment(&self) -> FusionTransform {
        self.alignment
    }

    pub fn crop(&self) -> CropBox {
        CropBox::around_grid(self.grid.geometry(), self.alignment.trs)
    }

    /// Default march settings for this scene: half-voxel world step.
    pub fn march_defaults(&self) -> MarchConfig {
        MarchConfig::for_scene(&self.grid, &self.crop())
    }

    pub fn render(&self, cam: &Camera, s: &CompositeSettings) -> Result<CompositeOutput> {
        let crop = self.crop();
        let scene = VolumeScene::new(&self.grid, &self.bits, &crop)?;
        let mesh = match (&self.mesh, s.mode) {
            (_, FusionMode::None) | (None, _) => {
                let out = render_frame(&scene, cam, &s.lens, &s.march)?;
                return Ok(CompositeOutput {
                    frame: out.frame,
                    depth: out.depth,
                    stats: out.stats,
                });
            }
            (Some(m), _) => m,
        };
        let side = s.lens.output_side();
        let lens_intr = Intrinsics::new(s.lens.fov_deg, side);
        match s.mode {
            FusionMode::Tunnel => {
                let out = render_frame(&scene, cam, &s.lens, &s.march)?;
                let ctx_side = (s.context_fov_deg * s.lens.ppd).round() as usize;
                let ctx = rasterize(mesh, cam, &Intrinsics::new(s.context_fov_deg, ctx_side), s.style)?;
                let frame = composite_tunnel(&out.frame, &ctx.color, &s.tunnel)?;
                Ok(CompositeOutput {
                    frame,
                    depth: out.depth,
                    stats: out.stats,
                })
            }
            FusionMode::Merge => {
                let out = render_frame(&scene, cam, &s.lens, &s.march)?;
                let ctx = rasterize(mesh, cam, &lens_intr, s.style)?;
                let frame = composite_merge(&out.frame, &ctx.color, s.tunnel.merge_alpha)?;
                Ok(CompositeOutput {
                    frame,
                    depth: out.depth,
                    stats: out.stats,
                })
            }
            FusionMode::Occlude => {
                let ctx = rasterize(mesh, cam, &lens_intr, s.style)?;
                let out = render_frame_occluded(&scene, cam, &s.lens, &s.march, &ctx.depth)?;
                let frame = depth_occlude(&out.frame, &out.depth, &ctx)?;
                Ok(CompositeOutput {
                    frame,
                    depth: out.depth,
                    stats: out.stats,
                })
            }
            FusionMode::None => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, UnitQuaternion};

    fn view(fov: f64) -> View {
        let cam = Camera::new(Point3::origin(), UnitQuaternion::identity(), 0.1, 10.0).unwrap();
        View::new(&cam, fov)
    }

    fn filled(side: usize, px: [f32; 4], fov: f64) -> Framebuffer {
        let mut f = Framebuffer::transparent(side, side).with_view(view(fov));
        f.pixels.iter_mut().for_each(|p| *p = px);
        f
    }

    #[test]
    fn weight_profile() {
        let c = TunnelConfig::default();
        assert_eq!(c.weight(0.0, 30.0), 1.0);
        assert_eq!(c.weight(13.0, 30.0), 1.0);
        assert_eq!(c.weight(15.0, 30.0), 0.0);
        assert_eq!(c.weight(14.0, 30.0), 0.5);
        let hard = TunnelConfig { feather_deg: 0.0, ..c };
        assert_eq!(hard.weight(14.999, 30.0), 1.0);
        assert_eq!(hard.weight(15.0, 30.0), 0.0);
    }

    #[test]
    fn mid_feather_is_even_mix() {
        let p = blend_pixel([1.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0], 0.5, 1.0);
        assert_eq!(p, [0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn outside_lens_is_raster_and_inside_is_nerf() {
        let nerf = filled(20, [1.0, 0.0, 0.0, 1.0], 20.0);
        let raster = filled(60, [0.0, 0.3, 0.6, 1.0], 60.0);
        let out = composite_tunnel(&nerf, &raster, &TunnelConfig::default()).unwrap();
        assert_eq!(out.get(0, 0), raster.get(0, 0));
        assert_eq!(out.get(30, 30), [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_merge_alpha_is_raster() {
        let nerf = filled(20, [0.9, 0.1, 0.0, 1.0], 20.0);
        let raster = filled(40, [0.0, 0.3, 0.6, 1.0], 40.0);
        let cfg = TunnelConfig { merge_alpha: 0.0, ..Default::default() };
        assert_eq!(composite_tunnel(&nerf, &raster, &cfg).unwrap(), raster);
    }

    #[test]
    fn pose_mismatch_refused() {
        let nerf = filled(10, [1.0; 4], 20.0);
        let mut raster = filled(20, [1.0; 4], 40.0);
        raster.view.as_mut().unwrap().position.x += 0.01;
        assert!(matches!(
            composite_tunnel(&nerf, &raster, &TunnelConfig::default()),
            Err(Error::PoseMismatch(_))
        ));
        let bare = Framebuffer::transparent(10, 10);
        assert!(composite_tunnel(&bare, &raster, &TunnelConfig::default()).is_err());
    }

    fn layer(side: usize, px: [f32; 4], d: f32) -> RasterOutput {
        let mut depth = DepthMap::empty(side, side, 0.1, 10.0);
        depth.depth.iter_mut().for_each(|x| *x = d);
        RasterOutput {
            color: filled(side, px, 30.0),
            depth,
        }
    }

    #[test]
    fn occlusion_cases() {
        let red = [1.0, 0.0, 0.0, 1.0];
        let blue = [0.0, 0.0, 1.0, 1.0];
        let near_raster = layer(4, blue, 0.5);
        let nerf = layer(4, red, 1.0);
        let out = depth_occlude(&nerf.color, &nerf.depth, &near_raster).unwrap();
        assert_eq!(out.get(1, 1), blue);
        let tie = layer(4, blue, 1.0);
        assert_eq!(depth_occlude(&nerf.color, &nerf.depth, &tie).unwrap().get(0, 0), blue);
        let empty = RasterOutput {
            color: Framebuffer::transparent(4, 4).with_view(view(30.0)),
            depth: DepthMap::empty(4, 4, 0.1, 10.0),
        };
        assert_eq!(depth_occlude(&nerf.color, &nerf.depth, &empty).unwrap(), nerf.color);
        // swapping opaque roles swaps the winner
        let far_raster = layer(4, blue, 2.0);
        assert_eq!(depth_occlude(&nerf.color, &nerf.depth, &far_raster).unwrap().get(0, 0), red);
    }

    #[test]
    fn transform_json_round_trip() {
        let t = FusionTransform::new(
            Trs::new(
                Vector3::new(1.0, -2.0, 0.5),
                UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
                1.7,
            )
            .unwrap(),
        )
        .unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: FusionTransform = serde_json::from_str(&s).unwrap();
        assert!((back.trs.translation - t.trs.translation).norm() < 1e-6);
        assert!(back.trs.rotation.angle_to(&t.trs.rotation) < 1e-6);
        assert!((back.trs.scale - t.trs.scale).abs() < 1e-6);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["matrix"][3] = serde_json::json!(99.0);
        assert!(serde_json::from_value::<FusionTransform>(v).is_err());
        let zero = r#"{"translation":[0,0,0],"rotation_quat":[0,0,0,1],"scale":0,"matrix":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,1]}"#;
        assert!(serde_json::from_str::<FusionTransform>(zero).is_err());
    }
}
