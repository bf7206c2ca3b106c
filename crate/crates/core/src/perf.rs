//! Analytic render cost.
//!
//! For an `r_h × r_w` image with `n` field queries per ray at cost `f̄` each:
//!
//! ```text
//! P(h, w) = r_h · r_w · n · f̄
//! P_hmd   = FoV_h · FoV_v · PPD² · C · n · f̄
//! ```
//!
//! With `C = 4` the second is the first evaluated at `r = 2 · FoV · PPD`.
//! `f̄` is calibrated in nanoseconds per query from measured frames.

use crate::raymarch::FrameStats;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfModel {
    /// Cost of one field query (ns when calibrated).
    pub f_bar: f64,
    /// Supersampling factor `C`.
    pub c_factor: f64,
    /// Expected field queries per ray.
    pub n_per_ray: f64,
}

impl PerfModel {
    pub fn new(f_bar: f64, c_factor: f64, n_per_ray: f64) -> Result<Self> {
        for (name, v) in [("f_bar", f_bar), ("c_factor", c_factor), ("n_per_ray", n_per_ray)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(PerfModel {
            f_bar,
            c_factor,
            n_per_ray,
        })
    }

    /// Fits `f̄ = wall_time / samples` and `n = samples / rays` to a
    /// measured frame.
    pub fn calibrate(stats: &FrameStats, c_factor: f64) -> Result<Self> {
        if stats.samples_total == 0 || stats.rays_total == 0 {
            return Err(Error::invalid("cannot calibrate from a frame without samples"));
        }
        let f_bar = stats.wall_time_ms * 1e6 / stats.samples_total as f64;
        let n = stats.samples_total as f64 / stats.rays_total as f64;
        PerfModel::new(f_bar.max(f64::MIN_POSITIVE), c_factor, n)
    }

    pub fn predict_cost(&self, r_h: f64, r_w: f64) -> f64 {
        r_h * r_w * self.n_per_ray * self.f_bar
    }

    pub fn predict_cost_hmd(&self, fov_h: f64, fov_v: f64, ppd: f64) -> f64 {
        fov_h * fov_v * ppd * ppd * self.c_factor * self.n_per_ray * self.f_bar
    }

    /// Predicted wall time in ms for a frame with the given sample count.
    pub fn predict_ms_for_samples(&self, samples: u64) -> f64 {
        samples as f64 * self.f_bar * 1e-6
    }
}

pub fn predict_cost(model: &PerfModel, r_h: f64, r_w: f64) -> f64 {
    model.predict_cost(r_h, r_w)
}

pub fn predict_cost_hmd(model: &PerfModel, fov_h: f64, fov_v: f64, ppd: f64) -> f64 {
    model.predict_cost_hmd(fov_h, fov_v, ppd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: f64) -> PerfModel {
        PerfModel::new(1.0, 4.0, n).unwrap()
    }

    #[test]
    fn direct_product() {
        assert_eq!(unit(32.0).predict_cost(1200.0, 1200.0), 46_080_000.0);
        assert_eq!(unit(32.0).predict_cost(0.0, 977.0), 0.0);
        assert_eq!(unit(32.0).predict_cost_hmd(30.0, 30.0, 20.0), 46_080_000.0);
    }

    #[test]
    fn scaling_laws() {
        let m = unit(7.0);
        assert_eq!(m.predict_cost_hmd(30.0, 30.0, 30.0), 4.0 * m.predict_cost_hmd(30.0, 30.0, 15.0));
        let ratio = m.predict_cost_hmd(50.0, 50.0, 15.0) / m.predict_cost_hmd(30.0, 30.0, 15.0);
        assert!((ratio - 25.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn calibration() {
        let s = FrameStats {
            rays_total: 100,
            rays_active: 80,
            samples_total: 4000,
            wall_time_ms: 2.0,
            skipped_voxel_spans: 0,
        };
        let m = PerfModel::calibrate(&s, 4.0).unwrap();
        assert!((m.f_bar - 500.0).abs() < 1e-9);
        assert_eq!(m.n_per_ray, 40.0);
        assert!((m.predict_ms_for_samples(4000) - 2.0).abs() < 1e-12);
        assert!(PerfModel::calibrate(&FrameStats::default(), 4.0).is_err());
    }

    #[test]
    fn rejects_non_positive() {
        assert!(PerfModel::new(0.0, 4.0, 1.0).is_err());
        assert!(PerfModel::new(1.0, -4.0, 1.0).is_err());
    }
}
