//! Voxel traversal over the occupancy grid (Amanatides & Woo), collapsing
//! runs of occupied voxels into ray-parameter spans.

use nalgebra::{Point3, Vector3};

use crate::field::{GridGeometry, OccupancyBitfield};
use crate::geom::{Aabb, Trs};
use crate::lens::Ray;

/// Occupied parameter intervals along a ray, sorted and disjoint, plus the
/// number of unoccupied voxel runs the traversal stepped over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Spans {
    pub spans: Vec<(f64, f64)>,
    pub skipped: usize,
}

/// Spans of `ray` (world space, interval `[t_enter, t_exit]`) that pass
/// through set bits of `bits`, with the grid placed in the world by
/// `placement`. Parameters are world-ray parameters.
pub fn dda_spans(
    geometry: &GridGeometry,
    bits: &OccupancyBitfield,
    ray: &Ray,
    placement: &Trs,
) -> Spans {
    if !ray.active {
        return Spans::default();
    }
    let o = placement.inverse_apply_point(&ray.origin);
    let d = placement.inverse_apply_vector(&ray.dir);
    traverse(geometry, bits, &o, &d, ray.t_enter, ray.t_exit)
}

/// Traversal of the model-space line `o + t·d` over `[t0, t1]`.
pub fn traverse(
    geometry: &GridGeometry,
    bits: &OccupancyBitfield,
    o: &Point3<f64>,
    d: &Vector3<f64>,
    t0: f64,
    t1: f64,
) -> Spans {
    let mut spans = Vec::new();
    let skipped = traverse_with(geometry, bits, o, d, t0, t1, |a, b| {
        spans.push((a, b));
        true
    });
    Spans { spans, skipped }
}

/// Streaming form of [`traverse`]: `visit` receives each span as soon as it
/// closes and returns `false` to stop the walk. Returns the number of
/// skipped runs seen so far.
pub fn traverse_with(
    geometry: &GridGeometry,
    bits: &OccupancyBitfield,
    o: &Point3<f64>,
    d: &Vector3<f64>,
    t0: f64,
    t1: f64,
    mut visit: impl FnMut(f64, f64) -> bool,
) -> usize {
    let mut skipped = 0usize;
    let vs = geometry.voxel_size;
    let qo = Point3::from((o - geometry.origin) / vs);
    let qd = d / vs;
    let n = [
        geometry.dims[0] as f64,
        geometry.dims[1] as f64,
        geometry.dims[2] as f64,
    ];
    let lattice = Aabb {
        min: Point3::origin(),
        max: Point3::new(n[0], n[1], n[2]),
    };
    let Some((lo, hi)) = lattice.ray_interval(&qo, &qd) else {
        return skipped;
    };
    let lo = lo.max(t0);
    let hi = hi.min(t1);
    if !(lo < hi) {
        return skipped;
    }

    let start = qo + qd * lo;
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let last = geometry.dims[a] as i64 - 1;
        idx[a] = (start[a].floor() as i64).clamp(0, last);
        if qd[a] > 0.0 {
            step[a] = 1;
            t_max[a] = (idx[a] as f64 + 1.0 - qo[a]) / qd[a];
            t_delta[a] = 1.0 / qd[a];
        } else if qd[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (idx[a] as f64 - qo[a]) / qd[a];
            t_delta[a] = -1.0 / qd[a];
        }
    }

    let dims = geometry.dims;
    let stride = [(dims[1] * dims[2]) as i64, dims[2] as i64, 1i64];
    let mut flat = idx[0] * stride[0] + idx[1] * stride[1] + idx[2];
    let mut t = lo;
    let mut open: Option<(f64, f64)> = None;
    let mut in_gap = false;
    let max_iter = dims.iter().sum::<usize>() + 4;
    for _ in 0..max_iter {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis].min(hi);
        if t_next > t {
            if bits.get(flat as usize) {
                match open.as_mut() {
                    Some(span) => span.1 = t_next,
                    None => open = Some((t, t_next)),
                }
                in_gap = false;
            } else {
                if let Some((a, b)) = open.take() {
                    if !visit(a, b) {
                        return skipped;
                    }
                }
                if !in_gap {
                    skipped += 1;
                    in_gap = true;
                }
            }
            t = t_next;
        }
        if t_next >= hi {
            break;
        }
        idx[axis] += step[axis];
        if idx[axis] < 0 || idx[axis] >= dims[axis] as i64 {
            break;
        }
        flat += step[axis] * stride[axis];
        t_max[axis] += t_delta[axis];
    }
    if let Some((a, b)) = open {
        visit(a, b);
    }
    skipped
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> GridGeometry {
        GridGeometry::new([n; 3], [0.0; 3], 1.0 / n as f64).unwrap()
    }

    fn ray(o: [f64; 3], d: [f64; 3], t0: f64, t1: f64) -> Ray {
        Ray::segment(Point3::from(o), Vector3::from(d), t0, t1)
    }

    #[test]
    fn empty_bitfield_gives_no_spans() {
        let g = unit_grid(4);
        let b = OccupancyBitfield::empty(g.dims);
        let s = dda_spans(&g, &b, &ray([-1.0, 0.5, 0.5], [1.0, 0.0, 0.0], 0.0, 10.0), &Trs::identity());
        assert!(s.spans.is_empty());
    }

    #[test]
    fn single_voxel_span_is_its_bounds() {
        let g = unit_grid(4);
        let mut b = OccupancyBitfield::empty(g.dims);
        b.set(g.index(2, 2, 2), true);
        let s = dda_spans(&g, &b, &ray([0.0, 0.625, 0.625], [1.0, 0.0, 0.0], 0.0, 5.0), &Trs::identity());
        assert_eq!(s.spans.len(), 1);
        let (a, e) = s.spans[0];
        assert!((a - 0.5).abs() < 1e-9 && (e - 0.75).abs() < 1e-9, "{a} {e}");
    }

    #[test]
    fn full_bitfield_gives_slab_interval() {
        let g = unit_grid(4);
        let b = OccupancyBitfield::full(g.dims);
        let r = ray([-0.3, 0.2, -0.4], [1.0, 0.3, 0.9], 0.1, 10.0);
        let s = dda_spans(&g, &b, &r, &Trs::identity());
        let (a, e) = g.aabb().ray_interval(&r.origin, &r.dir).unwrap();
        let (a, e) = (a.max(r.t_enter), e.min(r.t_exit));
        assert_eq!(s.spans.len(), 1);
        assert!((s.spans[0].0 - a).abs() < 1e-9 && (s.spans[0].1 - e).abs() < 1e-9);
    }

    #[test]
    fn adjacent_voxels_merge_and_gaps_split() {
        let g = unit_grid(8);
        let mut b = OccupancyBitfield::empty(g.dims);
        for i in [1, 2, 3, 6] {
            b.set(g.index(i, 4, 4), true);
        }
        let s = dda_spans(&g, &b, &ray([-1.0, 0.5625, 0.5625], [1.0, 0.0, 0.0], 0.0, 5.0), &Trs::identity());
        assert_eq!(s.spans.len(), 2);
        assert!((s.spans[0].0 - 1.125).abs() < 1e-12 && (s.spans[0].1 - 1.5).abs() < 1e-12);
        assert!((s.spans[1].0 - 1.75).abs() < 1e-12 && (s.spans[1].1 - 1.875).abs() < 1e-12);
        // runs before, between and after the occupied runs
        assert_eq!(s.skipped, 3);
    }

    #[test]
    fn negative_direction_and_placement() {
        let g = unit_grid(4);
        let mut b = OccupancyBitfield::empty(g.dims);
        b.set(g.index(1, 1, 1), true);
        // grid scaled by 2 and shifted: voxel (1,1,1) spans [10.5, 11.0] in world x
        let place = Trs::new(Vector3::new(10.0, 0.0, 0.0), nalgebra::UnitQuaternion::identity(), 2.0).unwrap();
        let r = ray([20.0, 0.75, 0.75], [-1.0, 0.0, 0.0], 0.0, 100.0);
        let s = dda_spans(&g, &b, &r, &place);
        assert_eq!(s.spans.len(), 1);
        assert!((s.spans[0].0 - 9.0).abs() < 1e-9 && (s.spans[0].1 - 9.5).abs() < 1e-9);
    }

    /// Brute-force oracle: dense parameter sampling, marking which samples
    /// fall in occupied voxels.
    fn occupied_at(g: &GridGeometry, b: &OccupancyBitfield, p: &Point3<f64>) -> bool {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] - g.origin[a]) / g.voxel_size;
            if u < 0.0 || u >= g.dims[a] as f64 {
                return false;
            }
            ijk[a] = u as usize;
        }
        b.get(g.index(ijk[0], ijk[1], ijk[2]))
    }

    proptest! {
        #[test]
        fn spans_agree_with_point_sampling(
            bits in prop::collection::vec(any::<bool>(), 216),
            ox in -0.5f64..1.5, oy in -0.5f64..1.5, oz in -0.5f64..1.5,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0,
        ) {
            prop_assume!(dx.abs() + dy.abs() + dz.abs() > 0.1);
            let g = unit_grid(6);
            let mut b = OccupancyBitfield::empty(g.dims);
            for (i, on) in bits.iter().enumerate() { b.set(i, *on); }
            let r = ray([ox, oy, oz], [dx, dy, dz], 0.0, 3.0);
            let s = dda_spans(&g, &b, &r, &Trs::identity());
            for w in s.spans.windows(2) {
                prop_assert!(w[0].1 < w[1].0, "spans must be disjoint and separated");
            }
            for &(a, e) in &s.spans {
                prop_assert!(a < e && a >= r.t_enter && e <= r.t_exit);
            }
            let n = 4000;
            for k in 0..n {
                let t = r.t_enter + (r.t_exit - r.t_enter) * (k as f64 + 0.5) / n as f64;
                let p = r.at(t);
                let in_span = s.spans.iter().any(|&(a, e)| t >= a && t <= e);
                let near_edge = s.spans.iter().any(|&(a, e)| (t - a).abs() < 1e-6 || (t - e).abs() < 1e-6);
                if !near_edge {
                    prop_assert_eq!(in_span, occupied_at(&g, &b, &p), "t = {}", t);
                }
            }
        }
    }
}
