//! Focus+context volume rendering.
//!
//! A voxel radiance field is ray-marched inside a view-following lens box,
//! with an occupancy bitfield skipping empty space. The lens image can be
//! fused with a rasterized CAD mesh, edited with a sphere brush, and
//! benchmarked across field-of-view and pixel-density budgets.
//!
//! ```
//! use nerflens::field::{make_procedural_grid, rebuild_bitfield, CropBox, Primitive, SceneSpec};
//! use nerflens::geom::Trs;
//! use nerflens::lens::{Camera, LensConfig};
//! use nerflens::raymarch::{render_frame, MarchConfig, VolumeScene};
//! use nalgebra::{Point3, Vector3};
//!
//! let mut spec = SceneSpec::empty([16, 16, 16], 1.0 / 16.0);
//! spec.primitives.push(Primitive::Sphere {
//!     center: [0.5, 0.5, 0.5],
//!     radius: 0.3,
//!     color: [0.9, 0.2, 0.1],
//!     density: 25.0,
//! });
//! let grid = make_procedural_grid(&spec)?;
//! let (bits, _) = rebuild_bitfield(&grid, 0.01);
//! let crop = CropBox::around_grid(grid.geometry(), Trs::identity());
//! let cam = Camera::look_at(
//!     Point3::new(0.5, 0.5, -1.0),
//!     Point3::new(0.5, 0.5, 0.5),
//!     Vector3::y(),
//!     0.05,
//!     10.0,
//! )?;
//! let lens = LensConfig { fov_deg: 20.0, ppd: 2.0, plane_w: 2.0, far_len: 4.0, supersample_c: 4 };
//! let scene = VolumeScene::new(&grid, &bits, &crop)?;
//! let out = render_frame(&scene, &cam, &lens, &MarchConfig::for_scene(&grid, &crop))?;
//! assert_eq!(out.frame.width, 40);
//! assert!(out.stats.samples_total > 0);
//! # Ok::<(), nerflens::Error>(())
//! ```

pub mod bench;
pub mod edit;
mod error;
pub mod field;
pub mod formats;
pub mod frame;
pub mod fusion;
pub mod geom;
pub mod lens;
pub mod perf;
pub mod raster;
pub mod raymarch;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/lens.md")]
    mod lens {}
    #[doc = include_str!("../../../book/src/raymarching.md")]
    mod raymarching {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/editing.md")]
    mod editing {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/streaming.md")]
    mod streaming {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
