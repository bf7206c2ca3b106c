//! Radiance fields: the sampling abstraction, its dense voxel-grid
//! realization, the occupancy bitfield that gates sampling, and the crop box
//! that places a model in the world.
//!
//! Grid layout: `dims = (h, w, l)` voxels along model x, y, z. Voxel
//! `(i, j, k)` has its center at `origin + (i + ½, j + ½, k + ½) · voxel_size`
//! and is stored at flat index `(i·w + j)·l + k` (z fastest).

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Trs};
use crate::{Error, Result};

/// Default occupancy threshold on density, per world unit.
pub const DEFAULT_DENSITY_THRESHOLD: f64 = 0.01;

/// Emission color and volume density at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldSample {
    pub color: [f64; 3],
    pub density: f64,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample {
        color: [0.0; 3],
        density: 0.0,
    };

    pub fn new(color: [f64; 3], density: f64) -> Result<Self> {
        let s = FieldSample { color, density };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(Error::invalid(format!(
                "density must be finite and >= 0, got {}",
                self.density
            )));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!(
                "color channels must lie in [0, 1], got {:?}",
                self.color
            )));
        }
        Ok(())
    }
}

/// A volumetric scene function: position (and nominally direction) to
/// emission and density.
pub trait RadianceField: Sync {
    fn geometry(&self) -> &GridGeometry;
    fn sample(&self, p: &Point3<f64>, dir: &Vector3<f64>) -> FieldSample;
}

/// Placement of a voxel lattice in model space.
///
/// `origin` and `voxel_size` are kept at `f32` precision so that a grid
/// survives a round trip through the on-disk format unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub origin: Point3<f64>,
    pub voxel_size: f64,
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::invalid(format!("grid dims too large: {dims:?}")));
        }
        let voxel_size = voxel_size as f32 as f64;
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel_size must be > 0, got {voxel_size}"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        let origin = Point3::new(
            origin[0] as f32 as f64,
            origin[1] as f32 as f64,
            origin[2] as f32 as f64,
        );
        Ok(GridGeometry {
            dims,
            origin,
            voxel_size,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    pub fn aabb(&self) -> Aabb {
        let max = Point3::new(
            self.origin.x + self.dims[0] as f64 * self.voxel_size,
            self.origin.y + self.dims[1] as f64 * self.voxel_size,
            self.origin.z + self.dims[2] as f64 * self.voxel_size,
        );
        Aabb {
            min: self.origin,
            max,
        }
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        Point3::new(
            self.origin.x + (i as f64 + 0.5) * self.voxel_size,
            self.origin.y + (j as f64 + 0.5) * self.voxel_size,
            self.origin.z + (k as f64 + 0.5) * self.voxel_size,
        )
    }

    /// Voxel index range `[lo, hi)` per axis whose centers can fall inside
    /// the given model-space box.
    pub fn voxel_range(&self, lo: &Point3<f64>, hi: &Point3<f64>) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let u0 = ((lo[a] - self.origin[a]) / self.voxel_size - 0.5).floor();
            let u1 = ((hi[a] - self.origin[a]) / self.voxel_size - 0.5).ceil() + 1.0;
            let n = self.dims[a] as f64;
            out[a] = (u0.clamp(0.0, n) as usize, u1.clamp(0.0, n) as usize);
        }
        out
    }
}

/// Dense voxel realization of a radiance field. Each voxel stores
/// `(r, g, b, σ)` as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceFieldGrid {
    geometry: GridGeometry,
    voxels: Vec<[f32; 4]>,
}

impl RadianceFieldGrid {
    /// An all-empty grid (black, zero density).
    pub fn new(geometry: GridGeometry) -> Self {
        RadianceFieldGrid {
            voxels: vec![[0.0; 4]; geometry.voxel_count()],
            geometry,
        }
    }

    pub fn from_voxels(geometry: GridGeometry, voxels: Vec<[f32; 4]>) -> Result<Self> {
        if voxels.len() != geometry.voxel_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} voxels", geometry.voxel_count()),
                found: format!("{} voxels", voxels.len()),
            });
        }
        for (n, v) in voxels.iter().enumerate() {
            FieldSample::new([v[0] as f64, v[1] as f64, v[2] as f64], v[3] as f64).map_err(
                |e| Error::invalid(format!("voxel {:?}: {e}", geometry.coords(n))),
            )?;
        }
        Ok(RadianceFieldGrid { geometry, voxels })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn voxels(&self) -> &[[f32; 4]] {
        &self.voxels
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> FieldSample {
        let v = self.voxels[self.geometry.index(i, j, k)];
        FieldSample {
            color: [v[0] as f64, v[1] as f64, v[2] as f64],
            density: v[3] as f64,
        }
    }

    #[inline]
    pub fn density_at(&self, index: usize) -> f32 {
        self.voxels[index][3]
    }

    pub fn set_voxel(&mut self, i: usize, j: usize, k: usize, s: FieldSample) -> Result<()> {
        s.validate()?;
        let idx = self.geometry.index(i, j, k);
        self.voxels[idx] = [
            s.color[0] as f32,
            s.color[1] as f32,
            s.color[2] as f32,
            s.density as f32,
        ];
        Ok(())
    }

    pub(crate) fn zero_density(&mut self, index: usize) {
        self.voxels[index][3] = 0.0;
    }

    /// Trilinear interpolation between voxel centers; zero outside the grid
    /// box, clamped to the edge value in the outer half-voxel shell.
    pub fn sample_field(&self, p: &Point3<f64>) -> FieldSample {
        let g = &self.geometry;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let rel = (p[a] - g.origin[a]) / g.voxel_size;
            let n = g.dims[a];
            if !(rel >= 0.0 && rel <= n as f64) {
                return FieldSample::EMPTY;
            }
            let u = (rel - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 1);
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n - 1);
            frac[a] = u - i0 as f64;
        }
        let [_, w, l] = g.dims;
        let base = (lo[0] * w + lo[1]) * l + lo[2];
        let off = [(hi[0] - lo[0]) * w * l, (hi[1] - lo[1]) * l, hi[2] - lo[2]];
        let wt = [
            [1.0 - frac[0], frac[0]],
            [1.0 - frac[1], frac[1]],
            [1.0 - frac[2], frac[2]],
        ];
        let mut acc = [0.0f64; 4];
        // Corner bit a selects the upper neighbour along axis a.
        for corner in 0..8usize {
            let (bx, by, bz) = (corner & 1, corner >> 1 & 1, corner >> 2 & 1);
            let wgt = wt[0][bx] * wt[1][by] * wt[2][bz];
            if wgt == 0.0 {
                continue;
            }
            let v = &self.voxels[base + bx * off[0] + by * off[1] + bz * off[2]];
            for c in 0..4 {
                acc[c] += wgt * v[c] as f64;
            }
        }
        FieldSample {
            color: [acc[0], acc[1], acc[2]],
            density: acc[3].max(0.0),
        }
    }
}

impl RadianceField for RadianceFieldGrid {
    fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// View direction is accepted and ignored: the grid is Lambertian.
    fn sample(&self, p: &Point3<f64>, _dir: &Vector3<f64>) -> FieldSample {
        self.sample_field(p)
    }
}

/// One bit per voxel; a set bit marks the voxel as eligible for sampling.
/// Bits are packed LSB-first within each byte in flat voxel order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OccupancyBitfield {
    dims: [usize; 3],
    bytes: Vec<u8>,
}

impl OccupancyBitfield {
    pub fn empty(dims: [usize; 3]) -> Self {
        let n = dims.iter().product::<usize>();
        OccupancyBitfield {
            dims,
            bytes: vec![0; n.div_ceil(8)],
        }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        let mut b = Self::empty(dims);
        for i in 0..b.len() {
            b.set(i, true);
        }
        b
    }

    pub fn from_bytes(dims: [usize; 3], bytes: Vec<u8>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bytes", n.div_ceil(8)),
                found: format!("{} bytes", bytes.len()),
            });
        }
        let mut b = OccupancyBitfield { dims, bytes };
        // padding bits past the last voxel are kept clear
        if n % 8 != 0 {
            let last = b.bytes.len() - 1;
            b.bytes[last] &= (1u8 << (n % 8)) - 1;
        }
        Ok(b)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.bytes[index >> 3] >> (index & 7) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, index: usize, on: bool) {
        let mask = 1u8 << (index & 7);
        if on {
            self.bytes[index >> 3] |= mask;
        } else {
            self.bytes[index >> 3] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Logical AND with another bitfield of the same shape.
    pub fn and(&self, other: &OccupancyBitfield) -> Result<OccupancyBitfield> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.dims),
                found: format!("{:?}", other.dims),
            });
        }
        Ok(OccupancyBitfield {
            dims: self.dims,
            bytes: self
                .bytes
                .iter()
                .zip(&other.bytes)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    pub fn check_matches(&self, grid: &RadianceFieldGrid) -> Result<()> {
        if self.dims != grid.dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("grid {:?}", grid.dims()),
                found: format!("bitfield {:?}", self.dims),
            });
        }
        Ok(())
    }
}

/// Sets `bit[v] = density[v] >= threshold` and returns the bitfield with its
/// population count.
pub fn rebuild_bitfield(grid: &RadianceFieldGrid, threshold: f64) -> (OccupancyBitfield, usize) {
    let mut bits = OccupancyBitfield::empty(grid.dims());
    let mut count = 0;
    for (i, v) in grid.voxels().iter().enumerate() {
        if v[3] as f64 >= threshold {
            bits.set(i, true);
            count += 1;
        }
    }
    (bits, count)
}

/// Conservative occupancy for the interpolated field: a voxel's bit is set
/// when any voxel in its 3×3×3 neighbourhood has non-zero density, i.e.
/// exactly the cells where [`RadianceFieldGrid::sample_field`] can return a
/// non-zero density. Rendering with this mask skips nothing that a dense
/// march would see.
pub fn support_bitfield(grid: &RadianceFieldGrid) -> OccupancyBitfield {
    let g = grid.geometry();
    let [h, w, l] = g.dims;
    let mut bits = OccupancyBitfield::empty(g.dims);
    for i in 0..h {
        for j in 0..w {
            for k in 0..l {
                if grid.density_at(g.index(i, j, k)) <= 0.0 {
                    continue;
                }
                for ii in i.saturating_sub(1)..(i + 2).min(h) {
                    for jj in j.saturating_sub(1)..(j + 2).min(w) {
                        for kk in k.saturating_sub(1)..(k + 2).min(l) {
                            bits.set(g.index(ii, jj, kk), true);
                        }
                    }
                }
            }
        }
    }
    bits
}

/// The render volume: an axis-aligned box in model space plus the transform
/// placing model space in the world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub aabb: Aabb,
    pub model_transform: Trs,
}

impl CropBox {
    pub fn new(aabb: Aabb, model_transform: Trs) -> Result<Self> {
        Trs::new(
            model_transform.translation,
            model_transform.rotation,
            model_transform.scale,
        )?;
        let q = model_transform.rotation.quaternion().norm();
        if (q - 1.0).abs() > crate::geom::QUAT_NORM_TOL {
            return Err(Error::invalid("crop box rotation is not normalized"));
        }
        Ok(CropBox {
            aabb,
            model_transform,
        })
    }

    /// The grid's own bounds, placed with `transform`.
    pub fn around_grid(geometry: &GridGeometry, transform: Trs) -> Self {
        CropBox {
            aabb: geometry.aabb(),
            model_transform: transform,
        }
    }

    pub fn apply_model_transform(&self, p: &Point3<f64>) -> Point3<f64> {
        self.model_transform.apply_point(p)
    }

    /// World-space ray parameter interval inside the box.
    pub fn ray_interval(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let o = self.model_transform.inverse_apply_point(origin);
        let d = self.model_transform.inverse_apply_vector(dir);
        self.aabb.ray_interval(&o, &d)
    }
}

/// Maps a model-space point to world space: scale, then rotate, then
/// translate.
pub fn apply_model_transform(crop: &CropBox, p: &Point3<f64>) -> Point3<f64> {
    crop.apply_model_transform(p)
}

/// Shapes that can be voxelized into a procedural test scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Box {
        min: [f64; 3],
        max: [f64; 3],
        color: [f64; 3],
        density: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: [f64; 3],
        density: f64,
    },
    /// Homogeneous slab between two planes perpendicular to `axis` (0, 1, 2).
    FogSlab {
        axis: usize,
        from: f64,
        to: f64,
        color: [f64; 3],
        density: f64,
    },
}

impl Primitive {
    fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Primitive::Box { min, max, .. } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Primitive::Sphere { center, radius, .. } => {
                (p - Point3::from(*center)).norm_squared() <= radius * radius
            }
            Primitive::FogSlab { axis, from, to, .. } => p[*axis] >= *from && p[*axis] <= *to,
        }
    }

    fn sample(&self) -> FieldSample {
        match *self {
            Primitive::Box { color, density, .. }
            | Primitive::Sphere { color, density, .. }
            | Primitive::FogSlab { color, density, .. } => FieldSample { color, density },
        }
    }

    fn validate(&self) -> Result<()> {
        self.sample().validate()?;
        match self {
            Primitive::Sphere { radius, .. } if !(*radius > 0.0) => {
                Err(Error::invalid("sphere radius must be > 0"))
            }
            Primitive::FogSlab { axis, .. } if *axis > 2 => {
                Err(Error::invalid("fog slab axis must be 0, 1 or 2"))
            }
            _ => Ok(()),
        }
    }
}

/// Seeded scatter of spherical fog blobs, used to imitate the floaters a
/// reconstructed field tends to carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBlobs {
    pub count: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub density: f64,
    pub seed: u64,
}

/// Scene descriptor for [`make_procedural_grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub dims: [usize; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub voxel_size: f64,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_blobs: Option<RandomBlobs>,
}

impl SceneSpec {
    pub fn empty(dims: [usize; 3], voxel_size: f64) -> Self {
        SceneSpec {
            dims,
            origin: [0.0; 3],
            voxel_size,
            primitives: Vec::new(),
            random_blobs: None,
        }
    }

    /// Primitive list with the random blobs expanded into spheres.
    pub fn expanded_primitives(&self) -> Vec<Primitive> {
        let mut prims = self.primitives.clone();
        if let Some(rb) = &self.random_blobs {
            let g = GridGeometry::new(self.dims, self.origin, self.voxel_size);
            if let Ok(g) = g {
                let bounds = g.aabb();
                let mut rng = ChaCha8Rng::seed_from_u64(rb.seed);
                for _ in 0..rb.count {
                    let center = [
                        rng.random_range(bounds.min.x..bounds.max.x),
                        rng.random_range(bounds.min.y..bounds.max.y),
                        rng.random_range(bounds.min.z..bounds.max.z),
                    ];
                    let radius = if rb.max_radius > rb.min_radius {
                        rng.random_range(rb.min_radius..rb.max_radius)
                    } else {
                        rb.min_radius
                    };
                    let grey = rng.random_range(0.55..0.9);
                    prims.push(Primitive::Sphere {
                        center,
                        radius,
                        color: [grey, grey, grey],
                        density: rb.density,
                    });
                }
            }
        }
        prims
    }
}

/// Voxelizes a scene descriptor. Each voxel takes the densest primitive
/// containing its center; equal densities resolve to the brighter color so
/// the result never depends on primitive order.
pub fn make_procedural_grid(spec: &SceneSpec) -> Result<RadianceFieldGrid> {
    let geometry = GridGeometry::new(spec.dims, spec.origin, spec.voxel_size)?;
    let prims = spec.expanded_primitives();
    for p in &prims {
        p.validate()?;
    }
    if let Some(rb) = &spec.random_blobs {
        if !(rb.min_radius > 0.0 && rb.max_radius >= rb.min_radius) {
            return Err(Error::invalid("random blob radii must satisfy 0 < min <= max"));
        }
    }
    let mut grid = RadianceFieldGrid::new(geometry);
    let [h, w, l] = geometry.dims;
    for i in 0..h {
        for j in 0..w {
            for k in 0..l {
                let c = geometry.voxel_center(i, j, k);
                let mut best: Option<FieldSample> = None;
                for p in prims.iter().filter(|p| p.contains(&c)) {
                    let s = p.sample();
                    best = Some(match best {
                        None => s,
                        Some(b) if denser(&s, &b) => s,
                        Some(b) => b,
                    });
                }
                if let Some(s) = best {
                    grid.set_voxel(i, j, k, s)?;
                }
            }
        }
    }
    Ok(grid)
}

fn denser(a: &FieldSample, b: &FieldSample) -> bool {
    match a.density.total_cmp(&b.density) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            let key = |s: &FieldSample| s.color;
            key(a)
                .iter()
                .zip(key(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                == Some(std::cmp::Ordering::Greater)
        }
    }
}
