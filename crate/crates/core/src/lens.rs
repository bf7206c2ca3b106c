//! Camera model and lens-restricted ray generation.
//!
//! Camera frame convention: +x right, +y down, +z forward (view axis). The
//! camera orientation rotates camera-frame vectors into the world. Pixel
//! `(u, v)` continuous coordinates run from `(0, 0)` at the top-left image
//! corner to `(side, side)` at the bottom-right; pixel `(px, py)` has its
//! center at `(px + ½, py + ½)`.
//!
//! The lens restricts rendering twice: a reduced square field of view, and a
//! box-shaped clipping volume that follows the camera (cross-section
//! `plane_w × plane_w`, from the near plane out to depth `far_len`). Rays
//! are ordinary pinhole rays; the box only clips their active interval.

use nalgebra::{Point3, UnitQuaternion, Vector3};

use crate::field::CropBox;
use crate::geom::{Aabb, Trs};
use crate::{Error, Result};

/// Pixels per side of the square lens image: `round(fov × ppd × 2)`, the
/// factor 2 being the 2×-per-axis supersampling.
pub fn lens_resolution(fov_deg: f64, ppd: f64) -> u32 {
    (fov_deg.max(0.0) * ppd.max(0.0) * 2.0).round() as u32
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Point3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        position: Point3<f64>,
        orientation: UnitQuaternion<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(Error::invalid(format!(
                "camera needs 0 < near < far, got near={near} far={far}"
            )));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("camera position must be finite"));
        }
        Ok(Camera {
            position,
            orientation,
            near,
            far,
        })
    }

    /// Camera at `position` whose view axis points at `target`, with world
    /// `up` mapped as close as possible to camera −y.
    pub fn look_at(
        position: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let fwd = target - position;
        if fwd.norm() == 0.0 {
            return Err(Error::invalid("look_at target equals position"));
        }
        let z = fwd.normalize();
        let mut x = (-up).cross(&z);
        if x.norm() < 1e-12 {
            x = Vector3::x().cross(&z).cross(&z);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
        Camera::new(position, UnitQuaternion::from_rotation_matrix(&rot), near, far)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn right(&self) -> Vector3<f64> {
        self.orientation * Vector3::x()
    }

    /// Camera-to-world transform.
    pub fn pose(&self) -> Trs {
        Trs {
            translation: self.position.coords,
            rotation: self.orientation,
            scale: 1.0,
        }
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.orientation.inverse() * (p - self.position))
    }

    /// The same camera shifted sideways by `offset` along its own x axis.
    pub fn eye(&self, offset: f64) -> Camera {
        Camera {
            position: self.position + self.right() * offset,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LensConfig {
    pub fov_deg: f64,
    pub ppd: f64,
    /// Image-plane width `W` of the lens box, world units.
    pub plane_w: f64,
    /// Depth `L` of the far face of the lens box, world units.
    pub far_len: f64,
    /// Supersampling factor `C`; must be a perfect square (4 = 2× per axis).
    pub supersample_c: u32,
}

impl Default for LensConfig {
    fn default() -> Self {
        LensConfig {
            fov_deg: 30.0,
            ppd: 20.0,
            plane_w: 1.0,
            far_len: 2.0,
            supersample_c: 4,
        }
    }
}

impl LensConfig {
    pub fn validate(&self, cam: &Camera) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg <= 120.0) {
            return Err(Error::invalid(format!(
                "fov_deg out of range (0, 120]: {}",
                self.fov_deg
            )));
        }
        if !(self.ppd > 0.0 && self.ppd.is_finite()) {
            return Err(Error::invalid(format!("ppd must be > 0, got {}", self.ppd)));
        }
        if !(self.plane_w > 0.0 && self.plane_w.is_finite()) {
            return Err(Error::invalid(format!(
                "plane_w must be > 0, got {}",
                self.plane_w
            )));
        }
        if !(self.far_len > cam.near && self.far_len.is_finite()) {
            return Err(Error::invalid(format!(
                "far_len {} must exceed camera near {}",
                self.far_len, cam.near
            )));
        }
        self.samples_per_axis()?;
        Ok(())
    }

    pub fn samples_per_axis(&self) -> Result<u32> {
        let s = (self.supersample_c as f64).sqrt().round() as u32;
        if self.supersample_c == 0 || s * s != self.supersample_c {
            return Err(Error::invalid(format!(
                "supersample_c must be a positive perfect square, got {}",
                self.supersample_c
            )));
        }
        Ok(s)
    }

    /// Rays per side: `round(fov × ppd × √C)`; with C = 4 this is
    /// [`lens_resolution`].
    pub fn ray_side(&self) -> usize {
        let s = self.samples_per_axis().unwrap_or(2) as f64;
        if self.supersample_c == 4 {
            lens_resolution(self.fov_deg, self.ppd) as usize
        } else {
            (self.fov_deg * self.ppd * s).round() as usize
        }
    }

    /// Displayed pixels per side after the box-filter downsample.
    pub fn output_side(&self) -> usize {
        let s = self.samples_per_axis().unwrap_or(2) as usize;
        self.ray_side().div_ceil(s)
    }
}

/// Square pinhole intrinsics shared by ray generation and rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fov_deg: f64,
    pub side: usize,
}

impl Intrinsics {
    pub fn new(fov_deg: f64, side: usize) -> Self {
        Intrinsics { fov_deg, side }
    }

    pub fn tan_half(&self) -> f64 {
        (self.fov_deg.to_radians() * 0.5).tan()
    }

    /// Unnormalized camera-frame direction `(x, y, 1)` through continuous
    /// pixel coordinates.
    pub fn direction_unnormalized(&self, u: f64, v: f64) -> Vector3<f64> {
        let t = self.tan_half();
        let s = self.side as f64;
        Vector3::new((u / s * 2.0 - 1.0) * t, (v / s * 2.0 - 1.0) * t, 1.0)
    }

    pub fn direction(&self, u: f64, v: f64) -> Vector3<f64> {
        self.direction_unnormalized(u, v).normalize()
    }

    pub fn pixel_center_direction(&self, px: usize, py: usize) -> Vector3<f64> {
        self.direction(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Continuous pixel coordinates of a camera-frame point, if in front.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let t = self.tan_half();
        let s = self.side as f64;
        Some((
            (p.x / p.z / t + 1.0) * 0.5 * s,
            (p.y / p.z / t + 1.0) * 0.5 * s,
        ))
    }
}

/// The view-following render box, expressed in the camera frame.
pub fn lens_box(cam: &Camera, lens: &LensConfig) -> CropBox {
    let hw = lens.plane_w * 0.5;
    CropBox {
        aabb: Aabb {
            min: Point3::new(-hw, -hw, cam.near),
            max: Point3::new(hw, hw, lens.far_len),
        },
        model_transform: cam.pose(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
    pub t_enter: f64,
    pub t_exit: f64,
    pub active: bool,
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }

    /// An active ray with an explicit interval.
    pub fn segment(origin: Point3<f64>, dir: Vector3<f64>, t_enter: f64, t_exit: f64) -> Ray {
        let dir = dir.normalize();
        Ray {
            origin,
            dir,
            t_enter,
            t_exit,
            active: t_enter < t_exit,
        }
    }
}

/// Per-pixel ray construction for one frame; rays are produced on demand so
/// large frames never materialize the whole bundle.
#[derive(Clone, Debug)]
pub struct RayGenerator {
    pub camera: Camera,
    pub intrinsics: Intrinsics,
    lens_box: Aabb,
    scene_box: CropBox,
}

impl RayGenerator {
    pub fn new(cam: &Camera, lens: &LensConfig, scene_box: &CropBox) -> Result<Self> {
        lens.validate(cam)?;
        Ok(RayGenerator {
            camera: *cam,
            intrinsics: Intrinsics::new(lens.fov_deg, lens.ray_side()),
            lens_box: lens_box(cam, lens).aabb,
            scene_box: *scene_box,
        })
    }

    pub fn side(&self) -> usize {
        self.intrinsics.side
    }

    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let d_cam = self.intrinsics.pixel_center_direction(px, py);
        let dir = self.camera.orientation * d_cam;
        let origin = self.camera.position;
        let mut t0 = self.camera.near;
        let mut t1 = self.camera.far;
        let mut active = true;
        match self.lens_box.ray_interval(&Point3::origin(), &d_cam) {
            Some((a, b)) => {
                t0 = t0.max(a);
                t1 = t1.min(b);
            }
            None => active = false,
        }
        if active {
            match self.scene_box.ray_interval(&origin, &dir) {
                Some((a, b)) => {
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                None => active = false,
            }
        }
        active &= t0 < t1;
        if !active {
            t0 = self.camera.near;
            t1 = self.camera.near;
        }
        Ray {
            origin,
            dir,
            t_enter: t0,
            t_exit: t1,
            active,
        }
    }
}

/// All rays of the `R × R` lens image in row-major pixel order.
#[derive(Clone, Debug)]
pub struct RayBundle {
    pub side: usize,
    pub rays: Vec<Ray>,
}

impl RayBundle {
    pub fn pixel(&self, px: usize, py: usize) -> &Ray {
        &self.rays[py * self.side + px]
    }

    pub fn active_count(&self) -> usize {
        self.rays.iter().filter(|r| r.active).count()
    }
}

pub fn generate_rays(cam: &Camera, lens: &LensConfig, scene_box: &CropBox) -> Result<RayBundle> {
    let gen = RayGenerator::new(cam, lens, scene_box)?;
    let side = gen.side();
    let rays = (0..side * side)
        .map(|i| gen.ray(i % side, i / side))
        .collect();
    Ok(RayBundle { side, rays })
}
