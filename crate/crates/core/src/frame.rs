//! Image outputs shared by the volume and raster paths.
//!
//! Colors are stored premultiplied by alpha: a pixel `[r, g, b, a]` over a
//! background `bg` shows as `rgb + (1 − a)·bg`.

use nalgebra::{Point3, UnitQuaternion};

use crate::lens::{Camera, Intrinsics};
use crate::{Error, Result};

/// Depth written where nothing was hit.
pub const DEPTH_SENTINEL: f32 = f32::MAX;

/// The view a frame was rendered from; fusion refuses to combine frames
/// whose views disagree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct View {
    pub position: Point3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub near: f64,
    pub far: f64,
    pub fov_deg: f64,
}

impl View {
    pub fn new(cam: &Camera, fov_deg: f64) -> Self {
        View {
            position: cam.position,
            orientation: cam.orientation,
            near: cam.near,
            far: cam.far,
            fov_deg,
        }
    }

    pub fn camera(&self) -> Camera {
        Camera {
            position: self.position,
            orientation: self.orientation,
            near: self.near,
            far: self.far,
        }
    }

    /// Same pose (position and orientation) within `tol`.
    pub fn same_pose(&self, other: &View, tol: f64) -> bool {
        (self.position - other.position).norm() <= tol
            && self.orientation.angle_to(&other.orientation) <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Framebuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 4]>,
    pub view: Option<View>,
}

impl Framebuffer {
    pub fn transparent(width: usize, height: usize) -> Self {
        Framebuffer {
            width,
            height,
            pixels: vec![[0.0; 4]; width * height],
            view: None,
        }
    }

    pub fn with_view(mut self, view: View) -> Self {
        self.view = Some(view);
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 4] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f32; 4]) {
        self.pixels[y * self.width + x] = px;
    }

    pub fn intrinsics(&self) -> Option<Intrinsics> {
        self.view.map(|v| Intrinsics::new(v.fov_deg, self.width))
    }

    /// Composite over an opaque background; every output alpha is 1.
    pub fn flatten(&self, background: [f64; 3]) -> Framebuffer {
        let pixels = self
            .pixels
            .iter()
            .map(|p| {
                let t = 1.0 - p[3];
                [
                    p[0] + t * background[0] as f32,
                    p[1] + t * background[1] as f32,
                    p[2] + t * background[2] as f32,
                    1.0,
                ]
            })
            .collect();
        Framebuffer {
            width: self.width,
            height: self.height,
            pixels,
            view: self.view,
        }
    }

    /// Largest per-channel absolute difference.
    pub fn max_abs_diff(&self, other: &Framebuffer) -> Result<f32> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.width, self.height),
                found: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..4).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f32::max))
    }

    /// Straight-alpha 8-bit RGBA, row-major.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = Vec::with_capacity(self.pixels.len() * 4);
        for p in &self.pixels {
            let a = p[3];
            let un = |c: f32| if a > 0.0 { c / a } else { 0.0 };
            out.extend_from_slice(&[q(un(p[0])), q(un(p[1])), q(un(p[2])), q(a)]);
        }
        out
    }
}

/// Per-pixel distance along the view ray (not z-depth).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub near: f64,
    pub far: f64,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize, near: f64, far: f64) -> Self {
        DepthMap {
            width,
            height,
            depth: vec![DEPTH_SENTINEL; width * height],
            near,
            far,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f32) {
        self.depth[y * self.width + x] = d;
    }

    pub fn is_sentinel(d: f32) -> bool {
        d >= DEPTH_SENTINEL
    }
}
