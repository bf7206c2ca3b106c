//! Small geometric vocabulary shared by every module: axis-aligned boxes,
//! slab tests and the translation/rotation/uniform-scale transform.

use nalgebra::{Matrix4, Point3, Quaternion, UnitQuaternion, Vector3};

use crate::Error;

/// Tolerance on the norm of a raw quaternion before it is accepted.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// Axis-aligned bounding box, `min < max` componentwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self, Error> {
        if (0..3).all(|i| min[i] < max[i] && min[i].is_finite() && max[i].is_finite()) {
            Ok(Aabb { min, max })
        } else {
            Err(Error::invalid(format!(
                "box min {:?} must be strictly below max {:?}",
                min.coords.as_slice(),
                max.coords.as_slice()
            )))
        }
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test for the line `origin + t * dir` (dir need not be unit).
    /// Returns the parameter interval inside the box, unclipped.
    pub fn ray_interval(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }
}

/// Builds a unit quaternion from `[x, y, z, w]`, rejecting inputs whose norm
/// is off by more than [`QUAT_NORM_TOL`].
pub fn quat_from_xyzw(q: [f64; 4]) -> Result<UnitQuaternion<f64>, Error> {
    let raw = Quaternion::new(q[3], q[0], q[1], q[2]);
    let n = raw.norm();
    if !n.is_finite() || (n - 1.0).abs() > QUAT_NORM_TOL {
        return Err(Error::invalid(format!(
            "quaternion {q:?} is not normalized (norm {n})"
        )));
    }
    Ok(UnitQuaternion::from_quaternion(raw))
}

pub fn quat_to_xyzw(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let c = q.coords;
    [c.x, c.y, c.z, c.w]
}

/// Translation, rotation and uniform scale. Points map as
/// `translate(rotate(scale(p)))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trs {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: f64,
}

impl Default for Trs {
    fn default() -> Self {
        Self::identity()
    }
}

impl Trs {
    pub fn identity() -> Self {
        Trs {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            scale: 1.0,
        }
    }

    pub fn new(
        translation: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: f64,
    ) -> Result<Self, Error> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Trs {
            translation,
            rotation,
            scale,
        })
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * (p.coords * self.scale) + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (v * self.scale)
    }

    pub fn inverse_apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.inverse() * (p.coords - self.translation) / self.scale)
    }

    pub fn inverse_apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * v / self.scale
    }

    pub fn inverse(&self) -> Trs {
        let rinv = self.rotation.inverse();
        Trs {
            translation: -(rinv * self.translation) / self.scale,
            rotation: rinv,
            scale: 1.0 / self.scale,
        }
    }

    /// Composed homogeneous matrix `T * R * S`.
    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::new_translation(&self.translation)
            * self.rotation.to_homogeneous()
            * Matrix4::new_scaling(self.scale)
    }

    /// Row-major flattening of [`Trs::matrix`].
    pub fn matrix_row_major(&self) -> [f64; 16] {
        let m = self.matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn slab_test_axis_ray() {
        let b = Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)).unwrap();
        let (t0, t1) = b
            .ray_interval(&Point3::new(-1.0, 0.5, 0.5), &Vector3::new(1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!((t0, t1), (1.0, 2.0));
        assert!(b
            .ray_interval(&Point3::new(-1.0, 1.5, 0.5), &Vector3::new(1.0, 0.0, 0.0))
            .is_none());
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(Aabb::new(Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn quaternion_norm_is_checked() {
        assert!(quat_from_xyzw([0.0, 0.0, 0.0, 1.0]).is_ok());
        assert!(quat_from_xyzw([0.0, 0.0, 0.0, 1.0 + 5e-7]).is_ok());
        assert!(quat_from_xyzw([0.0, 0.0, 0.0, 1.1]).is_err());
    }

    #[test]
    fn trs_inverse_round_trip() {
        let t = Trs::new(
            Vector3::new(1.0, -2.0, 0.5),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
            2.5,
        )
        .unwrap();
        let p = Point3::new(0.3, 0.7, -1.1);
        let q = t.inverse_apply_point(&t.apply_point(&p));
        assert_relative_eq!(p, q, epsilon = 1e-12);
        let q2 = t.inverse().apply_point(&t.apply_point(&p));
        assert_relative_eq!(p, q2, epsilon = 1e-12);
        let m = t.matrix();
        let hp = m * p.to_homogeneous();
        assert_relative_eq!(Point3::from_homogeneous(hp).unwrap(), t.apply_point(&p), epsilon = 1e-12);
    }

    #[test]
    fn zero_scale_rejected() {
        assert!(Trs::new(Vector3::zeros(), UnitQuaternion::identity(), 0.0).is_err());
    }
}
