//! Emission–absorption volume integration with empty-space skipping.
//!
//! Along each active ray, the interval `[t_enter, t_exit]` is cut into a
//! fixed lattice of segments of length `step` anchored at `t_enter`. A
//! segment is evaluated at its midpoint when that midpoint lies inside an
//! occupied span; skipped segments are exactly those a dense march would
//! evaluate in unoccupied voxels. For evaluated segment `i` with density
//! `σ_i` and model-space length `δ_i`:
//!
//! ```text
//! α_i = 1 − exp(−σ_i δ_i)      T_i = Π_{j<i} (1 − α_j)
//! C   = Σ_i T_i α_i c_i        depth = Σ_i T_i α_i t_i + T_final · t_far
//! ```
//!
//! Marching stops once `T` drops below `term_eps`; the residual transmittance
//! bounds what the truncated tail could still have contributed.

mod dda;

use std::time::Instant;

use rayon::prelude::*;

pub use dda::{dda_spans, traverse, traverse_with, Spans};

use crate::field::{CropBox, OccupancyBitfield, RadianceField};
use crate::frame::{DepthMap, Framebuffer, View};
use crate::lens::{Camera, LensConfig, Ray, RayGenerator};
use crate::{Error, Result};

pub const DEFAULT_TERM_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchConfig {
    /// Sample spacing along the ray, world units.
    pub step: f64,
    /// Early-termination threshold on transmittance.
    pub term_eps: f64,
    pub background: [f64; 3],
}

impl MarchConfig {
    pub fn new(step: f64, term_eps: f64, background: [f64; 3]) -> Result<Self> {
        let cfg = MarchConfig {
            step,
            term_eps,
            background,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Half a voxel in world units for a grid placed by `crop`.
    pub fn for_scene<F: RadianceField>(field: &F, crop: &CropBox) -> Self {
        MarchConfig {
            step: field.geometry().voxel_size * crop.model_transform.scale * 0.5,
            term_eps: DEFAULT_TERM_EPS,
            background: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be > 0, got {}", self.step)));
        }
        if !(0.0..1.0).contains(&self.term_eps) {
            return Err(Error::invalid(format!(
                "term_eps must lie in [0, 1), got {}",
                self.term_eps
            )));
        }
        Ok(())
    }

    /// Upper bound on field queries for one ray between `near` and `far`.
    pub fn max_samples_per_ray(&self, near: f64, far: f64) -> u64 {
        ((far - near) / self.step).ceil() as u64 + 1
    }
}

/// A field, its occupancy mask and its placement/crop in the world.
#[derive(Clone, Copy, Debug)]
pub struct VolumeScene<'a, F: RadianceField> {
    pub field: &'a F,
    pub bitfield: &'a OccupancyBitfield,
    pub crop: &'a CropBox,
}

impl<'a, F: RadianceField> VolumeScene<'a, F> {
    pub fn new(field: &'a F, bitfield: &'a OccupancyBitfield, crop: &'a CropBox) -> Result<Self> {
        if bitfield.dims() != field.geometry().dims {
            return Err(Error::ShapeMismatch {
                expected: format!("bitfield {:?}", field.geometry().dims),
                found: format!("bitfield {:?}", bitfield.dims()),
            });
        }
        Ok(VolumeScene {
            field,
            bitfield,
            crop,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelResult {
    /// Color composited over the configured background.
    pub color: [f64; 3],
    /// Premultiplied accumulated radiance, without background.
    pub radiance: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
    pub samples: u64,
    pub skipped_spans: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameStats {
    pub rays_total: u64,
    pub rays_active: u64,
    pub samples_total: u64,
    pub wall_time_ms: f64,
    pub skipped_voxel_spans: u64,
}

impl FrameStats {
    pub fn merge(&self, other: &FrameStats) -> FrameStats {
        FrameStats {
            rays_total: self.rays_total + other.rays_total,
            rays_active: self.rays_active + other.rays_active,
            samples_total: self.samples_total + other.samples_total,
            wall_time_ms: self.wall_time_ms + other.wall_time_ms,
            skipped_voxel_spans: self.skipped_voxel_spans + other.skipped_voxel_spans,
        }
    }
}

/// Integrates one ray. `t_far` is the background depth used by the depth
/// estimate for the transmittance left at the end of the ray.
pub fn integrate_ray<F: RadianceField>(
    scene: &VolumeScene<'_, F>,
    ray: &Ray,
    cfg: &MarchConfig,
    t_far: f64,
) -> PixelResult {
    let bg = cfg.background;
    if !ray.active {
        return PixelResult {
            color: bg,
            radiance: [0.0; 3],
            alpha: 0.0,
            depth: t_far,
            samples: 0,
            skipped_spans: 0,
        };
    }
    let placement = &scene.crop.model_transform;
    let o_model = placement.inverse_apply_point(&ray.origin);
    let d_model = placement.inverse_apply_vector(&ray.dir);
    let inv_scale = 1.0 / placement.scale;
    let (t0, t1, step) = (ray.t_enter, ray.t_exit, cfg.step);

    let mut trans = 1.0f64;
    let mut rad = [0.0f64; 3];
    let mut depth_acc = 0.0f64;
    let mut samples = 0u64;
    let mut next_k = 0u64;
    // Spans arrive in order while the traversal walks the grid, so an
    // early termination also ends the walk.
    let skipped = traverse_with(
        scene.field.geometry(),
        scene.bitfield,
        &o_model,
        &d_model,
        t0,
        t1,
        |a, b| {
            let first = ((a - t0) / step).floor().max(0.0) as u64;
            let mut k = first.max(next_k);
            loop {
                let lo = t0 + k as f64 * step;
                if lo >= t1 || lo > b {
                    return true;
                }
                let hi = (lo + step).min(t1);
                let mid = 0.5 * (lo + hi);
                if mid > b {
                    return true;
                }
                k += 1;
                if mid < a {
                    continue;
                }
                next_k = k;
                let p = o_model + d_model * mid;
                let s = scene.field.sample(&p, &ray.dir);
                samples += 1;
                let alpha = 1.0 - (-s.density * (hi - lo) * inv_scale).exp();
                let w = trans * alpha;
                for c in 0..3 {
                    rad[c] += w * s.color[c];
                }
                depth_acc += w * mid;
                trans *= 1.0 - alpha;
                if trans < cfg.term_eps {
                    return false;
                }
            }
        },
    );
    PixelResult {
        color: [
            rad[0] + trans * bg[0],
            rad[1] + trans * bg[1],
            rad[2] + trans * bg[2],
        ],
        radiance: rad,
        alpha: 1.0 - trans,
        depth: depth_acc + trans * t_far,
        samples,
        skipped_spans: skipped as u64,
    }
}

/// A rendered lens image: premultiplied color (no background), depth and
/// statistics.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub frame: Framebuffer,
    pub depth: DepthMap,
    pub stats: FrameStats,
}

impl RenderOutput {
    /// Color composited over the march background.
    pub fn flattened(&self, cfg: &MarchConfig) -> Framebuffer {
        self.frame.flatten(cfg.background)
    }
}

/// Renders the `R × R` ray grid and box-filters it down by the lens
/// supersampling factor.
pub fn render_frame<F: RadianceField>(
    scene: &VolumeScene<'_, F>,
    cam: &Camera,
    lens: &LensConfig,
    cfg: &MarchConfig,
) -> Result<RenderOutput> {
    render_impl(scene, cam, lens, cfg, None)
}

/// Like [`render_frame`], but each ray stops at the depth found in `limit`
/// (sampled nearest-pixel), so the result can be layered over the surface
/// that produced `limit`.
pub fn render_frame_occluded<F: RadianceField>(
    scene: &VolumeScene<'_, F>,
    cam: &Camera,
    lens: &LensConfig,
    cfg: &MarchConfig,
    limit: &DepthMap,
) -> Result<RenderOutput> {
    render_impl(scene, cam, lens, cfg, Some(limit))
}

fn render_impl<F: RadianceField>(
    scene: &VolumeScene<'_, F>,
    cam: &Camera,
    lens: &LensConfig,
    cfg: &MarchConfig,
    limit: Option<&DepthMap>,
) -> Result<RenderOutput> {
    let started = Instant::now();
    cfg.validate()?;
    let gen = RayGenerator::new(cam, lens, scene.crop)?;
    let s = lens.samples_per_axis()? as usize;
    let side = gen.side();
    let out_side = side.div_ceil(s);
    let view = View::new(cam, lens.fov_deg);
    if side == 0 {
        return Ok(RenderOutput {
            frame: Framebuffer::transparent(0, 0).with_view(view),
            depth: DepthMap::empty(0, 0, cam.near, cam.far),
            stats: FrameStats::default(),
        });
    }

    let rows: Vec<(Vec<[f32; 4]>, Vec<f32>, FrameStats)> = (0..out_side)
        .into_par_iter()
        .map(|oy| {
            let mut colors = vec![[0.0f64; 4]; out_side];
            let mut depths = vec![0.0f64; out_side];
            let mut counts = vec![0u32; out_side];
            let mut stats = FrameStats::default();
            for py in oy * s..((oy + 1) * s).min(side) {
                for px in 0..side {
                    let mut ray = gen.ray(px, py);
                    let mut t_far = cam.far;
                    if let Some(map) = limit {
                        let lx = (px * map.width / side).min(map.width.saturating_sub(1));
                        let ly = (py * map.height / side).min(map.height.saturating_sub(1));
                        if map.width > 0 && map.height > 0 {
                            let d = map.get(lx, ly);
                            if !DepthMap::is_sentinel(d) {
                                t_far = t_far.min(d as f64);
                                ray.t_exit = ray.t_exit.min(t_far);
                                ray.active &= ray.t_enter < ray.t_exit;
                            }
                        }
                    }
                    let r = integrate_ray(scene, &ray, cfg, t_far);
                    stats.rays_total += 1;
                    stats.rays_active += ray.active as u64;
                    stats.samples_total += r.samples;
                    stats.skipped_voxel_spans += r.skipped_spans;
                    let ox = px / s;
                    let acc = &mut colors[ox];
                    acc[0] += r.radiance[0];
                    acc[1] += r.radiance[1];
                    acc[2] += r.radiance[2];
                    acc[3] += r.alpha;
                    depths[ox] += r.depth;
                    counts[ox] += 1;
                }
            }
            let row_px = colors
                .iter()
                .zip(&counts)
                .map(|(c, &n)| {
                    let inv = 1.0 / n as f64;
                    [
                        (c[0] * inv) as f32,
                        (c[1] * inv) as f32,
                        (c[2] * inv) as f32,
                        (c[3] * inv) as f32,
                    ]
                })
                .collect();
            let row_depth = depths
                .iter()
                .zip(&counts)
                .map(|(d, &n)| (d / n as f64) as f32)
                .collect();
            (row_px, row_depth, stats)
        })
        .collect();

    let mut frame = Framebuffer::transparent(out_side, out_side).with_view(view);
    let mut depth = DepthMap::empty(out_side, out_side, cam.near, cam.far);
    let mut stats = FrameStats::default();
    for (oy, (px, dp, st)) in rows.into_iter().enumerate() {
        frame.pixels[oy * out_side..(oy + 1) * out_side].copy_from_slice(&px);
        depth.depth[oy * out_side..(oy + 1) * out_side].copy_from_slice(&dp);
        stats = stats.merge(&st);
    }
    stats.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(RenderOutput {
        frame,
        depth,
        stats,
    })
}
