//! Sphere-brush reveal/erase on the occupancy bitfield, and the edit log
//! that makes an edited mask reproducible.
//!
//! A voxel belongs to a brush when its center lies strictly inside the
//! sphere. Soft erases only clear bits and can be undone by a reveal or by
//! [`reveal_all`]; hard erases also zero the voxel densities.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::field::{rebuild_bitfield, OccupancyBitfield, RadianceFieldGrid};
use crate::formats::{self, FormatError};
use crate::geom::Trs;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    Reveal,
    Erase,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditCommand {
    pub mode: EditMode,
    /// World-space sphere center.
    pub center: [f64; 3],
    /// World-space radius.
    pub radius: f64,
    #[serde(default)]
    pub hard: bool,
}

impl EditCommand {
    pub fn erase(center: [f64; 3], radius: f64) -> Self {
        EditCommand {
            mode: EditMode::Erase,
            center,
            radius,
            hard: false,
        }
    }

    pub fn reveal(center: [f64; 3], radius: f64) -> Self {
        EditCommand {
            mode: EditMode::Reveal,
            center,
            radius,
            hard: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid(format!("radius must be > 0, got {}", self.radius)));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("center must be finite"));
        }
        Ok(())
    }
}

/// What an edit touched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditReport {
    /// Voxels whose centers fell inside the sphere.
    pub voxels_inside: usize,
    /// Bits that flipped.
    pub bits_changed: usize,
}

/// Applies one brush stroke. `placement` maps the grid's model space into
/// the world (the crop-box transform); `threshold` is the occupancy
/// threshold used by reveals.
pub fn apply_edit(
    grid: &mut RadianceFieldGrid,
    bits: &mut OccupancyBitfield,
    cmd: &EditCommand,
    placement: &Trs,
    threshold: f64,
) -> Result<EditReport> {
    cmd.validate()?;
    bits.check_matches(grid)?;
    let center = placement.inverse_apply_point(&Point3::from(cmd.center));
    let r = cmd.radius / placement.scale;
    let r2 = r * r;
    let g = *grid.geometry();
    let lo = center - nalgebra::Vector3::repeat(r);
    let hi = center + nalgebra::Vector3::repeat(r);
    let range = g.voxel_range(&lo, &hi);
    let mut report = EditReport::default();
    for i in range[0].0..range[0].1 {
        for j in range[1].0..range[1].1 {
            for k in range[2].0..range[2].1 {
                if (g.voxel_center(i, j, k) - center).norm_squared() >= r2 {
                    continue;
                }
                report.voxels_inside += 1;
                let idx = g.index(i, j, k);
                let new = match cmd.mode {
                    EditMode::Erase => {
                        if cmd.hard {
                            grid.zero_density(idx);
                        }
                        false
                    }
                    EditMode::Reveal => grid.density_at(idx) as f64 >= threshold,
                };
                if bits.get(idx) != new {
                    report.bits_changed += 1;
                    bits.set(idx, new);
                }
            }
        }
    }
    Ok(report)
}

/// Undoes every soft erase: the bitfield a fresh rebuild would give.
pub fn reveal_all(grid: &RadianceFieldGrid, threshold: f64) -> OccupancyBitfield {
    rebuild_bitfield(grid, threshold).0
}

pub fn save_mask(bits: &OccupancyBitfield, path: &Path) -> Result<()> {
    formats::write_mask(bits, path)?;
    Ok(())
}

/// Loads a mask for `grid`, AND-ed with the grid's own occupancy so voxels
/// without density never become eligible.
pub fn load_mask(path: &Path, grid: &RadianceFieldGrid, threshold: f64) -> Result<OccupancyBitfield> {
    let mask = formats::read_mask(path)?;
    apply_mask(&mask, grid, threshold)
}

pub fn apply_mask(
    mask: &OccupancyBitfield,
    grid: &RadianceFieldGrid,
    threshold: f64,
) -> Result<OccupancyBitfield> {
    if mask.dims() != grid.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("mask dims {:?} (grid)", grid.dims()),
            found: format!("mask dims {:?}", mask.dims()),
        });
    }
    rebuild_bitfield(grid, threshold).0.and(mask)
}

/// One timestamped command as it appears on an edit-log line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditEntry {
    pub t_ms: f64,
    #[serde(flatten)]
    pub cmd: EditCommand,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct LogHeader {
    grid_hash: String,
}

/// Ordered edits, optionally bound to the grid they were recorded against.
///
/// On disk this is JSON lines: an optional `{"grid_hash": …}` first line,
/// then one `{"t_ms", "mode", "center", "radius", "hard"}` object per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditLog {
    pub grid_hash: Option<String>,
    pub entries: Vec<EditEntry>,
}

impl EditLog {
    pub fn new(grid: &RadianceFieldGrid) -> Self {
        EditLog {
            grid_hash: Some(formats::grid_hash(grid)),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, t_ms: f64, cmd: EditCommand) {
        self.entries.push(EditEntry { t_ms, cmd });
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut log = EditLog::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let json_err = |e: serde_json::Error| FormatError::Json {
                path: format!("line {}", n + 1),
                msg: e.to_string(),
            };
            let value: serde_json::Value = serde_json::from_str(line).map_err(json_err)?;
            if value.get("grid_hash").is_some() && value.get("mode").is_none() {
                if log.grid_hash.is_some() || !log.entries.is_empty() {
                    return Err(FormatError::Json {
                        path: format!("line {}", n + 1),
                        msg: "grid_hash header must be the first line".into(),
                    });
                }
                let h: LogHeader = serde_json::from_value(value).map_err(json_err)?;
                log.grid_hash = Some(h.grid_hash);
                continue;
            }
            let entry: EditEntry = serde_json::from_value(value).map_err(json_err)?;
            if let Some(prev) = log.entries.last() {
                if entry.t_ms < prev.t_ms {
                    return Err(FormatError::Json {
                        path: format!("line {}", n + 1),
                        msg: "t_ms must not decrease".into(),
                    });
                }
            }
            log.entries.push(entry);
        }
        Ok(log)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.grid_hash {
            let header = LogHeader { grid_hash: h.clone() };
            let _ = writeln!(out, "{}", serde_json::to_string(&header).unwrap());
        }
        for e in &self.entries {
            let _ = writeln!(out, "{}", serde_json::to_string(e).unwrap());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(EditLog::parse(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        formats::write_atomic(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Replays the log from a fresh rebuild of `grid`. Fails if the log is
    /// bound to a different grid.
    pub fn replay(
        &self,
        grid: &mut RadianceFieldGrid,
        placement: &Trs,
        threshold: f64,
    ) -> Result<OccupancyBitfield> {
        if let Some(h) = &self.grid_hash {
            let actual = formats::grid_hash(grid);
            if &actual != h {
                return Err(Error::invalid(format!(
                    "edit log was recorded against grid {h}, this grid hashes to {actual}"
                )));
            }
        }
        let mut bits = reveal_all(grid, threshold);
        for e in &self.entries {
            apply_edit(grid, &mut bits, &e.cmd, placement, threshold)?;
        }
        Ok(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_procedural_grid, GridGeometry, Primitive, SceneSpec};
    use proptest::prelude::*;

    fn solid(n: usize) -> RadianceFieldGrid {
        let mut spec = SceneSpec::empty([n; 3], 1.0 / n as f64);
        spec.primitives.push(Primitive::Box {
            min: [-1.0; 3],
            max: [2.0; 3],
            color: [0.5; 3],
            density: 2.0,
        });
        make_procedural_grid(&spec).unwrap()
    }

    #[test]
    fn full_cover_erase_clears_everything() {
        let mut g = solid(8);
        let mut b = reveal_all(&g, 0.01);
        let cmd = EditCommand::erase([0.5; 3], 2.0);
        let r = apply_edit(&mut g, &mut b, &cmd, &Trs::identity(), 0.01).unwrap();
        assert_eq!(r.bits_changed, 512);
        assert_eq!(b.count_ones(), 0);
    }

    #[test]
    fn distant_erase_is_noop() {
        let mut g = solid(8);
        let mut b = reveal_all(&g, 0.01);
        let before = b.clone();
        let cmd = EditCommand::erase([18.0, 0.5, 0.5], 1.0);
        apply_edit(&mut g, &mut b, &cmd, &Trs::identity(), 0.01).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn one_voxel_erase() {
        let mut g = solid(8);
        let mut b = reveal_all(&g, 0.01);
        let c = g.geometry().voxel_center(3, 4, 5);
        let cmd = EditCommand::erase([c.x, c.y, c.z], 0.5 / 8.0);
        apply_edit(&mut g, &mut b, &cmd, &Trs::identity(), 0.01).unwrap();
        assert_eq!(b.count_ones(), 511);
        assert!(!b.get(g.geometry().index(3, 4, 5)));
    }

    #[test]
    fn boundary_is_exclusive() {
        let mut g = solid(4);
        let mut b = reveal_all(&g, 0.01);
        // sphere touching the neighbouring centers exactly
        let c = g.geometry().voxel_center(1, 1, 1);
        let cmd = EditCommand::erase([c.x, c.y, c.z], 0.25);
        apply_edit(&mut g, &mut b, &cmd, &Trs::identity(), 0.01).unwrap();
        assert_eq!(b.count_ones(), 63);
    }

    #[test]
    fn hard_erase_survives_reveal() {
        let mut g = solid(8);
        let mut b = reveal_all(&g, 0.01);
        let mut cmd = EditCommand::erase([0.5; 3], 0.2);
        cmd.hard = true;
        let r = apply_edit(&mut g, &mut b, &cmd, &Trs::identity(), 0.01).unwrap();
        let revealed = reveal_all(&g, 0.01);
        assert_eq!(revealed, b);
        assert_eq!(revealed.count_ones(), 512 - r.voxels_inside);
    }

    #[test]
    fn placement_is_respected() {
        let mut g = solid(8);
        let mut b = reveal_all(&g, 0.01);
        let place = Trs::new(nalgebra::Vector3::new(10.0, 0.0, 0.0), nalgebra::UnitQuaternion::identity(), 2.0).unwrap();
        // world center (11, 1, 1) = model (0.5, 0.5, 0.5); world radius 0.25 = model 0.125
        let cmd = EditCommand::erase([11.0, 1.0, 1.0], 0.25);
        apply_edit(&mut g, &mut b, &cmd, &place, 0.01).unwrap();
        // the 8 voxels around the model center sit at distance √3/16 ≈ 0.108 < 0.125
        assert_eq!(b.count_ones(), 512 - 8);
    }

    #[test]
    fn mask_dims_mismatch_names_both() {
        let g = solid(16);
        let m = OccupancyBitfield::full([8; 3]);
        let err = apply_mask(&m, &g, 0.01).unwrap_err().to_string();
        assert!(err.contains("[16, 16, 16]") && err.contains("[8, 8, 8]"), "{err}");
    }

    #[test]
    fn load_ands_with_density() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SceneSpec::empty([8; 3], 0.125);
        spec.primitives.push(Primitive::Box {
            min: [0.0; 3],
            max: [0.5, 1.0, 1.0],
            color: [1.0; 3],
            density: 1.0,
        });
        let g = make_procedural_grid(&spec).unwrap();
        let p = dir.path().join("m.mnlb");
        save_mask(&OccupancyBitfield::full(g.dims()), &p).unwrap();
        let loaded = load_mask(&p, &g, 0.01).unwrap();
        assert_eq!(loaded, reveal_all(&g, 0.01));
    }

    #[test]
    fn log_round_trip_and_hash_check() {
        let g = solid(8);
        let mut log = EditLog::new(&g);
        log.push(0.0, EditCommand::erase([0.5; 3], 0.3));
        log.push(16.5, EditCommand::reveal([0.4; 3], 0.1));
        let text = log.to_jsonl();
        assert_eq!(EditLog::parse(&text).unwrap(), log);
        let mut other = RadianceFieldGrid::new(GridGeometry::new([8; 3], [0.0; 3], 0.125).unwrap());
        assert!(log.replay(&mut other, &Trs::identity(), 0.01).is_err());
        let mut g2 = g.clone();
        let a = log.replay(&mut g2, &Trs::identity(), 0.01).unwrap();
        let mut g3 = g.clone();
        let b = log.replay(&mut g3, &Trs::identity(), 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_line_shape() {
        let line = r#"{"t_ms":5,"mode":"erase","center":[0,0,0],"radius":0.2,"hard":false}"#;
        let log = EditLog::parse(line).unwrap();
        assert_eq!(log.entries[0].cmd, EditCommand::erase([0.0; 3], 0.2));
        assert!(EditLog::parse(r#"{"t_ms":5,"mode":"smudge","center":[0,0,0],"radius":0.2}"#).is_err());
    }

    #[test]
    fn zero_radius_rejected() {
        let mut g = solid(4);
        let mut b = reveal_all(&g, 0.01);
        assert!(apply_edit(&mut g, &mut b, &EditCommand::erase([0.0; 3], 0.0), &Trs::identity(), 0.01).is_err());
    }

    proptest! {
        #[test]
        fn soft_erase_then_reveal_restores(
            cx in -0.2f64..1.2, cy in -0.2f64..1.2, cz in -0.2f64..1.2, r in 0.01f64..0.8,
            fill in 0.0f64..1.0,
        ) {
            let mut spec = SceneSpec::empty([8; 3], 0.125);
            spec.primitives.push(Primitive::Box { min: [0.0; 3], max: [fill, 1.0, 1.0], color: [1.0; 3], density: 1.0 });
            let mut g = make_procedural_grid(&spec).unwrap();
            let orig = reveal_all(&g, 0.01);
            let mut b = orig.clone();
            apply_edit(&mut g, &mut b, &EditCommand::erase([cx, cy, cz], r), &Trs::identity(), 0.01).unwrap();
            apply_edit(&mut g, &mut b, &EditCommand::reveal([cx, cy, cz], r), &Trs::identity(), 0.01).unwrap();
            prop_assert_eq!(b, orig);
        }

        #[test]
        fn edits_are_local(
            cx in 0.0f64..1.0, cy in 0.0f64..1.0, cz in 0.0f64..1.0, r in 0.01f64..0.5,
        ) {
            let mut g = solid(8);
            let mut b = reveal_all(&g, 0.01);
            let before = b.clone();
            apply_edit(&mut g, &mut b, &EditCommand::erase([cx, cy, cz], r), &Trs::identity(), 0.01).unwrap();
            let geo = *g.geometry();
            for idx in 0..geo.voxel_count() {
                let [i, j, k] = geo.coords(idx);
                let c = geo.voxel_center(i, j, k);
                let outside_box = (c.x - cx).abs() > r || (c.y - cy).abs() > r || (c.z - cz).abs() > r;
                if outside_box {
                    prop_assert_eq!(b.get(idx), before.get(idx));
                }
            }
        }
    }
}
