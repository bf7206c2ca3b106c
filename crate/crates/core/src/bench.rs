//! Trajectory replay and FoV × PPD sweeps.
//!
//! Sample counts are deterministic and are what tests assert on; frame
//! times are measured and reported only.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::edit::{apply_edit, EditCommand};
use crate::field::{
    make_procedural_grid, rebuild_bitfield, CropBox, OccupancyBitfield, Primitive, RadianceField,
    RadianceFieldGrid, RandomBlobs, SceneSpec, DEFAULT_DENSITY_THRESHOLD,
};
use crate::geom::{quat_from_xyzw, quat_to_xyzw, Trs};
use crate::lens::{lens_resolution, Camera, LensConfig};
use crate::raymarch::{render_frame, FrameStats, MarchConfig, VolumeScene};
use crate::{Error, Result};

pub const CSV_HEADER: &str =
    "fov_deg,ppd,resolution,masked,mean_ft_ms,p95_ft_ms,mean_samples,mean_active_rays";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_ms: f64,
    pub position: [f64; 3],
    /// `[x, y, z, w]`, camera to world.
    pub quaternion: [f64; 4],
}

/// Recorded camera path. JSON is either a bare array of samples or
/// `{"samples": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bare(Vec<TrajectorySample>),
            Wrapped { samples: Vec<TrajectorySample> },
        }
        let samples = match Raw::deserialize(d)? {
            Raw::Bare(s) | Raw::Wrapped { samples: s } => s,
        };
        let t = Trajectory { samples };
        t.validate().map_err(serde::de::Error::custom)?;
        Ok(t)
    }
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        let t = Trajectory { samples };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if !(w[1].t_ms > w[0].t_ms) {
                return Err(Error::invalid(format!(
                    "t_ms must increase strictly ({} then {})",
                    w[0].t_ms, w[1].t_ms
                )));
            }
        }
        for s in &self.samples {
            quat_from_xyzw(s.quaternion)?;
        }
        Ok(())
    }

    pub fn from_cameras(cams: &[Camera], dt_ms: f64) -> Self {
        Trajectory {
            samples: cams
                .iter()
                .enumerate()
                .map(|(i, c)| TrajectorySample {
                    t_ms: i as f64 * dt_ms,
                    position: c.position.into(),
                    quaternion: quat_to_xyzw(&c.orientation),
                })
                .collect(),
        }
    }

    pub fn cameras(&self, near: f64, far: f64) -> Result<Vec<Camera>> {
        self.samples
            .iter()
            .map(|s| Camera::new(Point3::from(s.position), quat_from_xyzw(s.quaternion)?, near, far))
            .collect()
    }

    /// `n` poses on a horizontal circle around `center`, all looking at it.
    pub fn orbit(center: [f64; 3], radius: f64, height: f64, n: usize, dt_ms: f64) -> Result<Self> {
        let c = Point3::from(center);
        let cams = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                let p = c + Vector3::new(radius * a.cos(), height, radius * a.sin());
                Camera::look_at(p, c, Vector3::y(), 0.05, 100.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory::from_cameras(&cams, dt_ms))
    }
}

/// Camera clip range used when replaying trajectories.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipRange {
    pub near: f64,
    pub far: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        ClipRange { near: 0.05, far: 20.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub frames: usize,
    pub mean_ft_ms: f64,
    pub median_ft_ms: f64,
    pub p95_ft_ms: f64,
    pub mean_samples: f64,
    pub mean_active_rays: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayResult {
    /// One entry per pose; stereo frames count both eyes.
    pub frames: Vec<FrameStats>,
    pub summary: ReplaySummary,
}

/// Nearest-rank percentile of an unsorted slice, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn summarize(frames: &[FrameStats]) -> ReplaySummary {
    if frames.is_empty() {
        return ReplaySummary::default();
    }
    let n = frames.len() as f64;
    let times: Vec<f64> = frames.iter().map(|f| f.wall_time_ms).collect();
    ReplaySummary {
        frames: frames.len(),
        mean_ft_ms: times.iter().sum::<f64>() / n,
        median_ft_ms: percentile(&times, 0.5),
        p95_ft_ms: percentile(&times, 0.95),
        mean_samples: frames.iter().map(|f| f.samples_total as f64).sum::<f64>() / n,
        mean_active_rays: frames.iter().map(|f| f.rays_active as f64).sum::<f64>() / n,
    }
}

/// Renders every pose of `traj` in order. With `stereo`, each frame is
/// charged as two eyes: the eyes are independent and, a few centimetres
/// apart, see almost the same scene, so the monoscopic render is counted
/// twice. Render them separately with [`Camera::eye`] when per-eye images
/// are needed.
pub fn replay<F: RadianceField>(
    traj: &Trajectory,
    scene: &VolumeScene<'_, F>,
    lens: &LensConfig,
    march: &MarchConfig,
    clip: ClipRange,
    stereo: bool,
) -> Result<ReplayResult> {
    if traj.samples.is_empty() {
        return Err(Error::invalid("trajectory is empty"));
    }
    let mut frames = Vec::with_capacity(traj.samples.len());
    for cam in traj.cameras(clip.near, clip.far)? {
        let stats = if stereo {
            let s = render_frame(scene, &cam, lens, march)?.stats;
            s.merge(&s)
        } else {
            render_frame(scene, &cam, lens, march)?.stats
        };
        frames.push(stats);
    }
    let summary = summarize(&frames);
    Ok(ReplayResult { frames, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub fov_list: Vec<f64>,
    pub ppd_list: Vec<f64>,
    /// Lens template; `fov_deg` and `ppd` are overridden per row.
    pub lens: LensConfig,
    /// March settings; `None` uses the scene's half-voxel default.
    pub march: Option<MarchConfig>,
    pub clip: ClipRange,
    pub repeat: usize,
    pub stereo: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fov_list: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            ppd_list: vec![15.0, 20.0, 25.0],
            lens: LensConfig::default(),
            march: None,
            clip: ClipRange::default(),
            repeat: 1,
            stereo: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fov_list.is_empty() || self.ppd_list.is_empty() {
            return Err(Error::invalid("fov and ppd lists must be non-empty"));
        }
        if self.repeat == 0 {
            return Err(Error::invalid("repeat must be >= 1"));
        }
        let cam = Camera::new(Point3::origin(), UnitQuaternion::identity(), self.clip.near, self.clip.far)?;
        for &fov in &self.fov_list {
            for &ppd in &self.ppd_list {
                LensConfig { fov_deg: fov, ppd, ..self.lens }.validate(&cam)?;
            }
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fov_deg: f64,
    pub ppd: f64,
    pub resolution: u32,
    pub masked: bool,
    pub mean_ft_ms: f64,
    pub p95_ft_ms: f64,
    pub mean_samples: f64,
    pub mean_active_rays: f64,
}

/// Runs every (ppd, fov) configuration, first unmasked and then, if `mask`
/// is given, with the mask applied. Rows are ordered by (ppd, fov, masked).
pub fn sweep(
    traj: &Trajectory,
    grid: &RadianceFieldGrid,
    bits: &OccupancyBitfield,
    crop: &CropBox,
    mask: Option<&OccupancyBitfield>,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    bits.check_matches(grid)?;
    let masked_bits = match mask {
        Some(m) => Some(crate::edit::apply_mask(m, grid, DEFAULT_DENSITY_THRESHOLD)?.and(bits)?),
        None => None,
    };
    let march = cfg.march.unwrap_or_else(|| MarchConfig::for_scene(grid, crop));
    let mut rows = Vec::new();
    for &ppd in &cfg.ppd_list {
        for &fov in &cfg.fov_list {
            let lens = LensConfig { fov_deg: fov, ppd, ..cfg.lens };
            let variants: Vec<(bool, &OccupancyBitfield)> = match &masked_bits {
                Some(m) => vec![(false, bits), (true, m)],
                None => vec![(false, bits)],
            };
            for (masked, b) in variants {
                let scene = VolumeScene::new(grid, b, crop)?;
                let mut frames = Vec::new();
                for _ in 0..cfg.repeat {
                    let r = replay(traj, &scene, &lens, &march, cfg.clip, cfg.stereo).map_err(|e| {
                        Error::invalid(format!("config fov={fov} ppd={ppd} masked={masked}: {e}"))
                    })?;
                    frames.extend(r.frames);
                }
                let s = summarize(&frames);
                rows.push(SweepRow {
                    fov_deg: fov,
                    ppd,
                    resolution: lens_resolution(fov, ppd),
                    masked,
                    mean_ft_ms: s.mean_ft_ms,
                    p95_ft_ms: s.p95_ft_ms,
                    mean_samples: s.mean_samples,
                    mean_active_rays: s.mean_active_rays,
                });
            }
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    if rows.is_empty() {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::invalid(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::invalid(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::invalid(e.to_string())))
        .collect()
}

/// A procedural stand-in for a reconstructed plant room: floor, walls,
/// pipe runs, three inspection targets and seeded fog floaters.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkScene {
    pub spec: SceneSpec,
    /// Target centers and enclosing radii.
    pub targets: Vec<([f64; 3], f64)>,
}

impl BenchmarkScene {
    /// Room of 2.2 × 1.47 × 2.08 world units with `longest` voxels along x.
    pub fn new(longest: usize, seed: u64) -> Result<Self> {
        if longest < 8 {
            return Err(Error::invalid("benchmark scene needs at least 8 voxels per side"));
        }
        let size = [2.2, 1.47, 2.08];
        let vs = size[0] / longest as f64;
        let dims = [
            longest,
            (size[1] / vs).round() as usize,
            (size[2] / vs).round() as usize,
        ];
        let mut spec = SceneSpec::empty(dims, vs);
        let t = 0.06;
        let concrete = [0.55, 0.55, 0.52];
        let wall = [0.72, 0.7, 0.66];
        spec.primitives.extend([
            Primitive::Box { min: [0.0, 0.0, 0.0], max: [size[0], t, size[2]], color: concrete, density: 60.0 },
            Primitive::Box { min: [0.0, 0.0, size[2] - t], max: [size[0], size[1], size[2]], color: wall, density: 60.0 },
            Primitive::Box { min: [0.0, 0.0, 0.0], max: [t, size[1], size[2]], color: wall, density: 60.0 },
        ]);
        let pipe = [0.35, 0.45, 0.6];
        for (k, y) in [0.95, 1.15, 1.3].into_iter().enumerate() {
            let z = 1.7 - 0.18 * k as f64;
            spec.primitives.push(Primitive::Box {
                min: [0.1, y, z],
                max: [2.1, y + 0.07, z + 0.07],
                color: pipe,
                density: 40.0,
            });
        }
        let targets = vec![
            ([0.55, 0.35, 0.8], 0.22),
            ([1.2, 0.45, 1.25], 0.26),
            ([1.75, 0.3, 0.6], 0.2),
        ];
        let target_colors = [[0.85, 0.2, 0.15], [0.95, 0.75, 0.1], [0.2, 0.7, 0.3]];
        for ((c, r), color) in targets.iter().zip(target_colors) {
            spec.primitives.push(Primitive::Sphere {
                center: *c,
                radius: r * 0.8,
                color,
                density: 30.0,
            });
            spec.primitives.push(Primitive::Box {
                min: [c[0] - 0.04, t, c[2] - 0.04],
                max: [c[0] + 0.04, c[1], c[2] + 0.04],
                color,
                density: 30.0,
            });
        }
        spec.random_blobs = Some(RandomBlobs {
            count: 40,
            min_radius: 0.03,
            max_radius: 0.09,
            density: 3.0,
            seed,
        });
        Ok(BenchmarkScene { spec, targets })
    }

    pub fn grid(&self) -> Result<RadianceFieldGrid> {
        make_procedural_grid(&self.spec)
    }

    pub fn center(&self) -> [f64; 3] {
        let s = &self.spec;
        [
            s.origin[0] + s.dims[0] as f64 * s.voxel_size * 0.5,
            s.origin[1] + s.dims[1] as f64 * s.voxel_size * 0.5,
            s.origin[2] + s.dims[2] as f64 * s.voxel_size * 0.5,
        ]
    }

    /// Mask keeping only the targets: everything erased, then each target
    /// sphere revealed.
    pub fn targets_only_mask(&self, grid: &RadianceFieldGrid) -> Result<OccupancyBitfield> {
        let mut g = grid.clone();
        let mut bits = rebuild_bitfield(&g, DEFAULT_DENSITY_THRESHOLD).0;
        let diag = g.geometry().aabb().extent().norm();
        let id = Trs::identity();
        apply_edit(&mut g, &mut bits, &EditCommand::erase(self.center(), diag), &id, DEFAULT_DENSITY_THRESHOLD)?;
        for (c, r) in &self.targets {
            apply_edit(&mut g, &mut bits, &EditCommand::reveal(*c, *r), &id, DEFAULT_DENSITY_THRESHOLD)?;
        }
        Ok(bits)
    }

    /// Poses circling the room center at eye height, looking inward.
    pub fn trajectory(&self, poses: usize) -> Result<Trajectory> {
        let c = self.center();
        Trajectory::orbit([c[0], 0.45, c[2]], 0.9, 0.25, poses, 1000.0 / 72.0)
    }
}
