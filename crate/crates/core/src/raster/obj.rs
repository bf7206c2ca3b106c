//! Wavefront OBJ subset: `v`, `f` (polygons fan-triangulated, `v/vt/vn`
//! and negative indices accepted), `o`/`g` object names. Other directives
//! are ignored. Per-object colors come from an optional `<stem>.colors.json`
//! sidecar: `{"default": [r, g, b], "objects": {"name": [r, g, b]}}`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::{Error, Result};

pub const DEFAULT_MESH_COLOR: [f64; 3] = [0.7, 0.7, 0.7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorSidecar {
    #[serde(default = "default_color")]
    pub default: [f64; 3],
    #[serde(default)]
    pub objects: BTreeMap<String, [f64; 3]>,
}

fn default_color() -> [f64; 3] {
    DEFAULT_MESH_COLOR
}

impl Default for ColorSidecar {
    fn default() -> Self {
        ColorSidecar {
            default: DEFAULT_MESH_COLOR,
            objects: BTreeMap::new(),
        }
    }
}

impl ColorSidecar {
    fn color_for(&self, object: &str) -> [f64; 3] {
        self.objects.get(object).copied().unwrap_or(self.default)
    }
}

/// Loads `path` and, if present, its color sidecar.
pub fn load_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    let sidecar_path = path.with_extension("colors.json");
    let colors = if sidecar_path.exists() {
        let s = std::fs::read_to_string(&sidecar_path)?;
        serde_json::from_str(&s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("{}: {e}", sidecar_path.display()),
        })?
    } else {
        ColorSidecar::default()
    };
    parse_obj(&text, &colors)
}

pub fn parse_obj(text: &str, colors: &ColorSidecar) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut face_colors = Vec::new();
    let mut object = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: line_no,
                        msg: format!("bad vertex coordinate: {e}"),
                    })?;
                if coords.len() != 3 || !coords.iter().all(|c| c.is_finite()) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "vertex needs three finite coordinates".into(),
                    });
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx: Vec<u32> = parts
                    .map(|t| resolve_index(t, vertices.len(), line_no))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("face needs at least 3 vertices, got {}", idx.len()),
                    });
                }
                let color = colors.color_for(&object);
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                    face_colors.push(color);
                }
            }
            "o" | "g" => {
                object = parts.collect::<Vec<_>>().join(" ");
            }
            _ => {}
        }
    }
    Mesh::new(vertices, triangles, face_colors)
}

fn resolve_index(token: &str, n_vertices: usize, line: usize) -> Result<u32> {
    let head = token.split('/').next().unwrap_or("");
    let i: i64 = head.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("malformed face index {token:?}"),
    })?;
    let resolved = match i {
        0 => None,
        i if i > 0 => Some(i - 1),
        i => Some(n_vertices as i64 + i),
    };
    match resolved {
        Some(r) if r >= 0 && (r as usize) < n_vertices => Ok(r as u32),
        _ => Err(Error::Parse {
            line,
            msg: format!("face index {i} out of range (1..={n_vertices})"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "\
# unit cube
o box
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
vn 0 0 1
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 4 8 7
f 4 7 3
f 1 5 8
f 1 8 4
f 2 3 7
f 2 7 6
";

    #[test]
    fn cube_counts() {
        let m = parse_obj(CUBE, &ColorSidecar::default()).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (8, 12));
    }

    #[test]
    fn quad_fans_into_two() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", &ColorSidecar::default()).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn slashes_and_negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf -3/1/1 -2//2 3/3\n", &ColorSidecar::default()).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn bad_indices_name_the_line() {
        for src in ["v 0 0 0\nv 1 0 0\nv 1 1 0\nf 0 1 2\n", "v 0 0 0\nv 1 0 0\nv 1 1 0\n\nf 1 2 9\n", "v 0 0 0\nf 1 x 1\n"] {
            match parse_obj(src, &ColorSidecar::default()) {
                Err(Error::Parse { line, .. }) => assert!(line == 4 || line == 5 || line == 2, "{line}"),
                other => panic!("{other:?}"),
            }
        }
        match parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\n\nf 1 2 9\n", &ColorSidecar::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sidecar_colors_by_object() {
        let mut colors = ColorSidecar::default();
        colors.objects.insert("pipe".into(), [1.0, 0.0, 0.0]);
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\no pipe\nf 1 2 3\ng wall\nf 3 2 1\n";
        let m = parse_obj(src, &colors).unwrap();
        assert_eq!(m.face_colors, vec![[1.0, 0.0, 0.0], DEFAULT_MESH_COLOR]);
    }

    #[test]
    fn loads_sidecar_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.obj"), "o a\nv 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 3\n").unwrap();
        std::fs::write(dir.path().join("m.colors.json"), r#"{"default":[0,0,1],"objects":{"a":[0,1,0]}}"#).unwrap();
        let m = load_obj(&dir.path().join("m.obj")).unwrap();
        assert_eq!(m.face_colors, vec![[0.0, 1.0, 0.0]]);
    }
}
