//! Software rasterizer for the CAD context layer.
//!
//! Triangles go through a world→view→clip matrix pipeline, are clipped
//! against the near plane, and are scan-converted with edge functions at
//! pixel centers. Depth is interpolated perspective-correctly and stored as
//! distance along the pixel ray, the same quantity the volume renderer
//! writes. The z-buffer keeps the nearest fragment and breaks exact depth
//! ties by color, so the image does not depend on submission order.

pub mod obj;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{Matrix4, Point3, Vector3, Vector4};
use rayon::prelude::*;

pub use obj::{load_obj, parse_obj, ColorSidecar};

use crate::frame::{DepthMap, Framebuffer, View};
use crate::lens::{Camera, Intrinsics};
use crate::{Error, Result};

/// Triangles whose area is at or below this are ignored by edge extraction.
pub const DEGENERATE_AREA: f64 = 1e-12;
/// Dihedral angle above which a shared edge is drawn in wireframe mode.
pub const FEATURE_ANGLE_DEG: f64 = 15.0;

const AMBIENT: f64 = 0.3;
const DIFFUSE: f64 = 0.7;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub face_colors: Vec<[f64; 3]>,
    /// Explicit wireframe edges; feature edges are derived when absent.
    pub edges: Option<Vec<[u32; 2]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterStyle {
    Solid,
    Wireframe,
}

impl std::str::FromStr for RasterStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solid" => Ok(RasterStyle::Solid),
            "wireframe" => Ok(RasterStyle::Wireframe),
            other => Err(Error::invalid(format!(
                "style must be solid or wireframe, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterOutput {
    pub color: Framebuffer,
    pub depth: DepthMap,
}

impl Mesh {
    pub fn new(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        face_colors: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let m = Mesh {
            vertices,
            triangles,
            face_colors,
            edges: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.face_colors.len() != self.triangles.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} face colors", self.triangles.len()),
                found: format!("{}", self.face_colors.len()),
            });
        }
        let n = self.vertices.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        if let Some(edges) = &self.edges {
            if let Some(e) = edges.iter().find(|e| e.iter().any(|&i| i >= n)) {
                return Err(Error::invalid(format!("edge {e:?} indexes past {n} vertices")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty() && self.edges.as_ref().is_none_or(|e| e.is_empty())
    }

    /// Axis-aligned box as 12 outward-facing triangles.
    pub fn cuboid(min: [f64; 3], max: [f64; 3], color: [f64; 3]) -> Mesh {
        let v = |x: usize, y: usize, z: usize| {
            Point3::new(
                if x == 0 { min[0] } else { max[0] },
                if y == 0 { min[1] } else { max[1] },
                if z == 0 { min[2] } else { max[2] },
            )
        };
        let vertices = vec![
            v(0, 0, 0),
            v(1, 0, 0),
            v(1, 1, 0),
            v(0, 1, 0),
            v(0, 0, 1),
            v(1, 0, 1),
            v(1, 1, 1),
            v(0, 1, 1),
        ];
        let quads = [
            [0, 3, 2, 1],
            [4, 5, 6, 7],
            [0, 1, 5, 4],
            [3, 7, 6, 2],
            [0, 4, 7, 3],
            [1, 2, 6, 5],
        ];
        let mut triangles = Vec::with_capacity(12);
        for q in quads {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        }
        Mesh {
            vertices,
            face_colors: vec![color; 12],
            triangles,
            edges: None,
        }
    }

    /// Planar quad `a, b, c, d` (in order) as two triangles.
    pub fn quad(corners: [[f64; 3]; 4], color: [f64; 3]) -> Mesh {
        Mesh {
            vertices: corners.iter().map(|c| Point3::from(*c)).collect(),
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            face_colors: vec![color; 2],
            edges: None,
        }
    }

    /// Concatenates meshes, dropping explicit edge lists.
    pub fn merge(parts: &[Mesh]) -> Mesh {
        let mut out = Mesh::default();
        for m in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.triangles
                .extend(m.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
            out.face_colors.extend_from_slice(&m.face_colors);
        }
        out
    }

    pub fn transformed(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            ..self.clone()
        }
    }

    fn triangle_normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    /// Edges on the boundary, shared by more than two faces, or whose two
    /// faces meet at more than [`FEATURE_ANGLE_DEG`]. Each comes with the
    /// color of its lowest-numbered face.
    pub fn feature_edges(&self) -> Vec<([u32; 2], [f64; 3])> {
        let mut adj: BTreeMap<[u32; 2], Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if self.triangle_normal(t).norm() * 0.5 <= DEGENERATE_AREA {
                continue;
            }
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                adj.entry([a.min(b), a.max(b)]).or_default().push(t);
            }
        }
        let cos_limit = FEATURE_ANGLE_DEG.to_radians().cos();
        adj.into_iter()
            .filter(|(_, faces)| match faces.as_slice() {
                [_, ] => true,
                [f, g] => {
                    let n1 = self.triangle_normal(*f).normalize();
                    let n2 = self.triangle_normal(*g).normalize();
                    n1.dot(&n2) < cos_limit
                }
                _ => true,
            })
            .map(|(e, faces)| (e, self.face_colors[faces[0]]))
            .collect()
    }

    fn wire_edges(&self) -> Vec<([u32; 2], [f64; 3])> {
        match &self.edges {
            Some(list) => list
                .iter()
                .map(|&[a, b]| {
                    let color = self
                        .triangles
                        .iter()
                        .position(|t| t.contains(&a) && t.contains(&b))
                        .map(|f| self.face_colors[f])
                        .unwrap_or([1.0; 3]);
                    ([a, b], color)
                })
                .collect(),
            None => self.feature_edges(),
        }
    }
}

/// World→camera matrix for the lens camera convention (+x right, +y down,
/// +z forward).
pub fn view_matrix(cam: &Camera) -> Matrix4<f64> {
    let r = cam.orientation.inverse().to_homogeneous();
    r * Matrix4::new_translation(&(-cam.position.coords))
}

/// Square perspective projection to clip space with `w = z_cam`, mapping
/// `z_cam ∈ [near, far]` to NDC depth `[-1, 1]`.
pub fn projection_matrix(fov_deg: f64, near: f64, far: f64) -> Matrix4<f64> {
    let f = 1.0 / (fov_deg.to_radians() * 0.5).tan();
    Matrix4::new(
        f, 0.0, 0.0, 0.0,
        0.0, f, 0.0, 0.0,
        0.0, 0.0, (far + near) / (far - near), -2.0 * far * near / (far - near),
        0.0, 0.0, 1.0, 0.0,
    )
}

/// Continuous pixel coordinates and camera-frame z of a world point, or
/// `None` behind the near plane.
pub fn project_point(cam: &Camera, intr: &Intrinsics, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
    let clip = projection_matrix(intr.fov_deg, cam.near, cam.far)
        * view_matrix(cam)
        * Vector4::new(p.x, p.y, p.z, 1.0);
    if clip.w < cam.near {
        return None;
    }
    let s = intr.side as f64;
    Some((
        (clip.x / clip.w + 1.0) * 0.5 * s,
        (clip.y / clip.w + 1.0) * 0.5 * s,
        clip.w,
    ))
}

/// A fragment candidate; smaller keys win.
#[derive(Clone, Copy)]
struct Frag {
    depth: f32,
    color: [f32; 3],
}

impl Frag {
    fn beats(&self, other: &Frag) -> bool {
        match self.depth.total_cmp(&other.depth) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => {
                let key = |c: &[f32; 3]| (c[0].to_bits(), c[1].to_bits(), c[2].to_bits());
                key(&self.color) > key(&other.color)
            }
        }
    }
}

/// Screen-space triangle: pixel coords, 1/z per vertex, flat color.
struct ScreenTri {
    p: [(f64, f64, f64); 3],
    color: [f32; 3],
    y0: usize,
    y1: usize,
}

/// Screen-space segment for wireframe.
struct ScreenLine {
    a: (f64, f64, f64),
    b: (f64, f64, f64),
    color: [f32; 3],
}

pub fn rasterize(mesh: &Mesh, cam: &Camera, intr: &Intrinsics, style: RasterStyle) -> Result<RasterOutput> {
    mesh.validate()?;
    let side = intr.side;
    let view = View::new(cam, intr.fov_deg);
    let mut color = Framebuffer::transparent(side, side).with_view(view);
    let mut depth = DepthMap::empty(side, side, cam.near, cam.far);
    if side == 0 || mesh.is_empty() {
        return Ok(RasterOutput { color, depth });
    }
    let vm = view_matrix(cam);
    let cam_pts: Vec<Point3<f64>> = mesh
        .vertices
        .iter()
        .map(|p| Point3::from_homogeneous(vm * p.to_homogeneous()).unwrap())
        .collect();
    let proj = projection_matrix(intr.fov_deg, cam.near, cam.far);
    let s = side as f64;
    let to_screen = |p: &Point3<f64>| {
        let c = proj * p.to_homogeneous();
        (
            (c.x / c.w + 1.0) * 0.5 * s,
            (c.y / c.w + 1.0) * 0.5 * s,
            1.0 / c.w,
        )
    };

    let band = 16usize;
    let rows: Vec<Vec<Option<Frag>>> = match style {
        RasterStyle::Solid => {
            let mut tris = Vec::new();
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let world = tri.map(|i| mesh.vertices[i as usize]);
                let n = (world[1] - world[0]).cross(&(world[2] - world[0]));
                if n.norm() == 0.0 {
                    continue;
                }
                let centroid = Point3::from((world[0].coords + world[1].coords + world[2].coords) / 3.0);
                let l = (centroid - cam.position).normalize();
                let shade = AMBIENT + DIFFUSE * n.normalize().dot(&l).abs();
                let fc = mesh.face_colors[t];
                let c = [
                    (fc[0] * shade).min(1.0) as f32,
                    (fc[1] * shade).min(1.0) as f32,
                    (fc[2] * shade).min(1.0) as f32,
                ];
                let poly = clip_near(&tri.map(|i| cam_pts[i as usize]), cam.near);
                for k in 1..poly.len().saturating_sub(1) {
                    let p = [to_screen(&poly[0]), to_screen(&poly[k]), to_screen(&poly[k + 1])];
                    let ymin = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
                    let ymax = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
                    if ymax < 0.0 || ymin > s {
                        continue;
                    }
                    let y0 = (ymin - 0.5).ceil().max(0.0) as usize;
                    let y1 = ((ymax - 0.5).floor() + 1.0).clamp(0.0, s) as usize;
                    if y0 < y1 {
                        tris.push(ScreenTri { p, color: c, y0, y1 });
                    }
                }
            }
            (0..side.div_ceil(band))
                .into_par_iter()
                .map(|b| {
                    let (r0, r1) = (b * band, ((b + 1) * band).min(side));
                    let mut buf = vec![None; (r1 - r0) * side];
                    for t in tris.iter().filter(|t| t.y0 < r1 && t.y1 > r0) {
                        fill_triangle(t, r0.max(t.y0), r1.min(t.y1), r0, side, intr, cam.far, &mut buf);
                    }
                    buf
                })
                .collect()
        }
        RasterStyle::Wireframe => {
            let mut lines = Vec::new();
            for ([a, b], c) in mesh.wire_edges() {
                let (pa, pb) = (cam_pts[a as usize], cam_pts[b as usize]);
                let Some((pa, pb)) = clip_segment_near(pa, pb, cam.near) else {
                    continue;
                };
                lines.push(ScreenLine {
                    a: to_screen(&pa),
                    b: to_screen(&pb),
                    color: [c[0] as f32, c[1] as f32, c[2] as f32],
                });
            }
            (0..side.div_ceil(band))
                .into_par_iter()
                .map(|b| {
                    let (r0, r1) = (b * band, ((b + 1) * band).min(side));
                    let mut buf = vec![None; (r1 - r0) * side];
                    for l in &lines {
                        draw_line(l, r0, r1, side, intr, cam.far, &mut buf);
                    }
                    buf
                })
                .collect()
        }
    };

    for (b, buf) in rows.into_iter().enumerate() {
        let base = b * band * side;
        for (i, f) in buf.into_iter().enumerate() {
            if let Some(f) = f {
                color.pixels[base + i] = [f.color[0], f.color[1], f.color[2], 1.0];
                depth.depth[base + i] = f.depth;
            }
        }
    }
    Ok(RasterOutput { color, depth })
}

fn write_frag(buf: &mut [Option<Frag>], idx: usize, f: Frag) {
    match &buf[idx] {
        Some(cur) if !f.beats(cur) => {}
        _ => buf[idx] = Some(f),
    }
}

/// Distance along the pixel-center ray for camera-frame depth `z`.
fn ray_distance(intr: &Intrinsics, px: usize, py: usize, z: f64) -> f64 {
    z * intr
        .direction_unnormalized(px as f64 + 0.5, py as f64 + 0.5)
        .norm()
}

#[allow(clippy::too_many_arguments)]
fn fill_triangle(
    t: &ScreenTri,
    y0: usize,
    y1: usize,
    row_base: usize,
    side: usize,
    intr: &Intrinsics,
    far: f64,
    buf: &mut [Option<Frag>],
) {
    let [a, b, c] = t.p;
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let xmin = a.0.min(b.0).min(c.0);
    let xmax = a.0.max(b.0).max(c.0);
    let x0 = (xmin - 0.5).ceil().max(0.0) as usize;
    let x1 = ((xmax - 0.5).floor() + 1.0).clamp(0.0, side as f64) as usize;
    let edge = |p: (f64, f64, f64), q: (f64, f64, f64), x: f64, y: f64| {
        (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)
    };
    for py in y0..y1 {
        let y = py as f64 + 0.5;
        for px in x0..x1 {
            let x = px as f64 + 0.5;
            let w0 = edge(b, c, x, y) / area;
            let w1 = edge(c, a, x, y) / area;
            let w2 = edge(a, b, x, y) / area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let inv_z = w0 * a.2 + w1 * b.2 + w2 * c.2;
            if inv_z <= 0.0 {
                continue;
            }
            let d = ray_distance(intr, px, py, 1.0 / inv_z);
            if d > far {
                continue;
            }
            write_frag(
                buf,
                (py - row_base) * side + px,
                Frag {
                    depth: d as f32,
                    color: t.color,
                },
            );
        }
    }
}

/// Bresenham between the pixels containing the endpoints, keeping only the
/// rows in `[r0, r1)`.
fn draw_line(
    l: &ScreenLine,
    r0: usize,
    r1: usize,
    side: usize,
    intr: &Intrinsics,
    far: f64,
    buf: &mut [Option<Frag>],
) {
    let (ax, ay) = (l.a.0.floor(), l.a.1.floor());
    let (bx, by) = (l.b.0.floor(), l.b.1.floor());
    let lim = 4.0 * side as f64 + 4.0;
    if [ax, ay, bx, by].iter().any(|v| !v.is_finite() || v.abs() > lim * 16.0) {
        return;
    }
    if (ay < r0 as f64 && by < r0 as f64) || (ay >= r1 as f64 && by >= r1 as f64) {
        return;
    }
    let (mut x, mut y) = (ax as i64, ay as i64);
    let (x1, y1) = (bx as i64, by as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let steps = dx.max(-dy).max(1) as f64;
    let mut err = dx + dy;
    let mut i = 0.0f64;
    loop {
        if x >= 0 && (x as usize) < side && y >= r0 as i64 && y < r1 as i64 {
            let s = (i / steps).min(1.0);
            let inv_z = l.a.2 + (l.b.2 - l.a.2) * s;
            if inv_z > 0.0 {
                let (px, py) = (x as usize, y as usize);
                let d = ray_distance(intr, px, py, 1.0 / inv_z);
                if d <= far {
                    write_frag(
                        buf,
                        (py - r0) * side + px,
                        Frag {
                            depth: d as f32,
                            color: l.color,
                        },
                    );
                }
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        i += 1.0;
    }
}

/// Sutherland–Hodgman against `z >= near` in camera space.
fn clip_near(tri: &[Point3<f64>; 3], near: f64) -> Vec<Point3<f64>> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let p = tri[i];
        let q = tri[(i + 1) % 3];
        let p_in = p.z >= near;
        let q_in = q.z >= near;
        if p_in {
            out.push(p);
        }
        if p_in != q_in {
            let t = (near - p.z) / (q.z - p.z);
            out.push(p + (q - p) * t);
        }
    }
    out
}

fn clip_segment_near(a: Point3<f64>, b: Point3<f64>, near: f64) -> Option<(Point3<f64>, Point3<f64>)> {
    match (a.z >= near, b.z >= near) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let t = (near - a.z) / (b.z - a.z);
            let m = a + (b - a) * t;
            if a_in {
                Some((a, m))
            } else {
                Some((m, b))
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::DEPTH_SENTINEL;
    use nalgebra::UnitQuaternion;

    fn cam() -> Camera {
        Camera::new(Point3::origin(), UnitQuaternion::identity(), 0.1, 100.0).unwrap()
    }

    #[test]
    fn full_screen_quad_depth() {
        let q = Mesh::quad(
            [[-10.0, -10.0, 3.0], [10.0, -10.0, 3.0], [10.0, 10.0, 3.0], [-10.0, 10.0, 3.0]],
            [0.2, 0.4, 0.6],
        );
        let intr = Intrinsics::new(30.0, 41);
        let out = rasterize(&q, &cam(), &intr, RasterStyle::Solid).unwrap();
        assert!(out.color.pixels.iter().all(|p| p[3] == 1.0));
        assert!((out.depth.get(20, 20) as f64 - 3.0).abs() < 1e-4);
        // corner depth is distance along the ray, not z
        let expect = 3.0 * intr.direction_unnormalized(0.5, 0.5).norm();
        assert!((out.depth.get(0, 0) as f64 - expect).abs() < 1e-4);
    }

    #[test]
    fn nearer_triangle_wins() {
        let front = Mesh::quad([[-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]], [1.0, 0.0, 0.0]);
        let back = Mesh::quad([[-5.0, -5.0, 2.0], [5.0, -5.0, 2.0], [5.0, 5.0, 2.0], [-5.0, 5.0, 2.0]], [0.0, 0.0, 1.0]);
        let intr = Intrinsics::new(40.0, 32);
        let a = rasterize(&Mesh::merge(&[front.clone(), back.clone()]), &cam(), &intr, RasterStyle::Solid).unwrap();
        let b = rasterize(&Mesh::merge(&[back, front]), &cam(), &intr, RasterStyle::Solid).unwrap();
        assert_eq!(a, b);
        let c = a.color.get(16, 16);
        assert!(c[0] > 0.0 && c[2] == 0.0);
    }

    #[test]
    fn empty_mesh_is_transparent() {
        let out = rasterize(&Mesh::default(), &cam(), &Intrinsics::new(30.0, 8), RasterStyle::Solid).unwrap();
        assert!(out.color.pixels.iter().all(|p| *p == [0.0; 4]));
        assert!(out.depth.depth.iter().all(|d| *d == DEPTH_SENTINEL));
    }

    #[test]
    fn near_clipping_keeps_visible_part() {
        // a floor running from behind the camera to far in front
        let floor = Mesh::quad([[-5.0, 1.0, -5.0], [5.0, 1.0, -5.0], [5.0, 1.0, 50.0], [-5.0, 1.0, 50.0]], [0.5; 3]);
        let out = rasterize(&floor, &cam(), &Intrinsics::new(60.0, 32), RasterStyle::Solid).unwrap();
        // bottom rows see the floor, top rows do not
        assert_eq!(out.color.get(16, 31)[3], 1.0);
        assert_eq!(out.color.get(16, 0)[3], 0.0);
    }

    #[test]
    fn cube_feature_edges() {
        let c = Mesh::cuboid([0.0; 3], [1.0; 3], [1.0; 3]);
        // the 12 box edges; face diagonals are coplanar
        assert_eq!(c.feature_edges().len(), 12);
        let q = Mesh::quad([[0.0; 3], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]], [1.0; 3]);
        assert_eq!(q.feature_edges().len(), 4);
    }

    #[test]
    fn degenerate_triangles_ignored_by_edges() {
        let m = Mesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
            vec![[1.0; 3]],
        )
        .unwrap();
        assert!(m.feature_edges().is_empty());
    }

    #[test]
    fn wireframe_draws_outline_with_depth() {
        let c = Mesh::cuboid([-0.5, -0.5, 2.0], [0.5, 0.5, 3.0], [0.0, 1.0, 0.0]);
        let intr = Intrinsics::new(60.0, 64);
        let out = rasterize(&c, &cam(), &intr, RasterStyle::Wireframe).unwrap();
        let drawn = out.color.pixels.iter().filter(|p| p[3] > 0.0).count();
        assert!(drawn > 50 && drawn < 64 * 64 / 4, "{drawn}");
        // interior of the front face stays empty
        assert_eq!(out.color.get(32, 32)[3], 0.0);
        for (i, p) in out.color.pixels.iter().enumerate() {
            if p[3] > 0.0 {
                assert!(out.depth.depth[i] >= 2.0 && out.depth.depth[i] < 4.0);
            }
        }
    }

    #[test]
    fn projection_matches_intrinsics() {
        let c = Camera::look_at(Point3::new(1.0, 2.0, -3.0), Point3::new(0.0, 0.0, 1.0), Vector3::y(), 0.1, 50.0).unwrap();
        let intr = Intrinsics::new(45.0, 100);
        let p = Point3::new(0.3, -0.2, 1.5);
        let (u, v, _) = project_point(&c, &intr, &p).unwrap();
        let (u2, v2) = intr.project(&c.to_camera(&p)).unwrap();
        assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
    }

    #[test]
    fn mesh_validation() {
        assert!(Mesh::new(vec![Point3::origin()], vec![[0, 0, 1]], vec![[1.0; 3]]).is_err());
        assert!(Mesh::new(vec![Point3::origin()], vec![], vec![[1.0; 3]]).is_err());
    }
}
