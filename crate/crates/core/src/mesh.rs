//! Indexed triangle meshes: Wavefront-OBJ subset I/O, normalization,
//! z-rotation and ground settling.
//!
//! Scene units, z-up. Settling is a pure vertical translation that puts
//! the lowest vertex on the ground plane z = 0.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::{Aabb, Vec3};

/// Triangles with area at or below this are dropped on parse.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Largest bounding-box dimension after normalization, in scene units.
pub const DEFAULT_TARGET_EXTENT: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face index {index} out of range (mesh has {vertex_count} vertices)")]
    IndexOutOfRange {
        line: usize,
        index: i64,
        vertex_count: usize,
    },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub name: String,
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Result of [`parse_obj`]: the mesh plus how many zero-area triangles were
/// discarded.
#[derive(Clone, Debug)]
pub struct ParsedObj {
    pub mesh: TriangleMesh,
    pub degenerate_dropped: usize,
}

impl TriangleMesh {
    pub fn new(name: impl Into<String>, vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        TriangleMesh {
            name: name.into(),
            vertices,
            triangles,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(c - a).length()
    }

    /// Appends another mesh, re-basing its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    /// Drops triangles with area at or below [`DEGENERATE_AREA`]; returns the
    /// number dropped.
    pub fn drop_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let keep: Vec<bool> = (0..before)
            .map(|i| self.triangle_area(i) > DEGENERATE_AREA)
            .collect();
        let mut it = keep.iter();
        self.triangles.retain(|_| *it.next().unwrap());
        before - self.triangles.len()
    }

    pub fn map_vertices(mut self, f: impl Fn(Vec3) -> Vec3) -> Self {
        for v in &mut self.vertices {
            *v = f(*v);
        }
        self
    }
}

fn resolve_index(raw: &str, vertex_count: usize, line: usize) -> Result<u32, MeshError> {
    let first = raw.split('/').next().unwrap_or("");
    let idx: i64 = first.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("bad face index {raw:?}"),
    })?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        vertex_count as i64 + idx
    } else {
        return Err(MeshError::Parse {
            line,
            message: "face index 0 is invalid in OBJ".into(),
        });
    };
    if resolved < 0 || resolved >= vertex_count as i64 {
        return Err(MeshError::IndexOutOfRange {
            line,
            index: idx,
            vertex_count,
        });
    }
    Ok(resolved as u32)
}

/// Parses the `v` / `f` subset of Wavefront OBJ. Polygons are fan
/// triangulated; normals, UVs, groups and materials are ignored.
pub fn parse_obj(name: &str, bytes: &[u8]) -> Result<ParsedObj, MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshError::Parse {
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        match keyword {
            "v" => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| MeshError::Parse {
                    line: line_no,
                    message: format!("bad vertex {line:?}"),
                })?;
                if !(3..=4).contains(&coords.len()) || coords.iter().any(|c| !c.is_finite()) {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: format!("vertex needs 3 finite coordinates: {line:?}"),
                    });
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx: Vec<u32> = tokens
                    .map(|t| resolve_index(t, vertices.len(), line_no))
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: format!("face needs at least 3 vertices: {line:?}"),
                    });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // Attributes outside the supported subset.
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::new(name, vertices, triangles);
    let degenerate_dropped = mesh.drop_degenerate();
    Ok(ParsedObj {
        mesh,
        degenerate_dropped,
    })
}

/// Serializes `v` and `f` lines. Coordinates use shortest round-trip
/// formatting, so parsing the output reproduces the arrays exactly.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", mesh.name);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

/// Uniformly scales the mesh so its largest bounding-box dimension equals
/// `target_extent` and centers it at the origin in x and y.
pub fn normalize_mesh(mesh: TriangleMesh, target_extent: f64) -> Result<TriangleMesh, MeshError> {
    let bounds = mesh.bounds();
    if bounds.is_empty() {
        return Err(MeshError::Degenerate("mesh has no vertices".into()));
    }
    let e = bounds.extent();
    let largest = e.x.max(e.y).max(e.z);
    if largest <= 0.0 {
        return Err(MeshError::Degenerate("all vertices coincide".into()));
    }
    let k = target_extent / largest;
    let c = bounds.center();
    Ok(mesh.map_vertices(|v| Vec3::new((v.x - c.x) * k, (v.y - c.y) * k, v.z * k)))
}

/// Rotates about the z-axis through the origin, counter-clockwise seen from +z.
pub fn rotate_z(mesh: TriangleMesh, degrees: f64) -> TriangleMesh {
    let (s, c) = degrees.to_radians().sin_cos();
    mesh.map_vertices(|v| Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z))
}

/// Translates the mesh vertically so its lowest vertex rests on z = 0.
pub fn settle(mesh: TriangleMesh) -> TriangleMesh {
    let min_z = mesh
        .vertices
        .iter()
        .map(|v| v.z)
        .fold(f64::INFINITY, f64::min);
    if !min_z.is_finite() || min_z == 0.0 {
        return mesh;
    }
    mesh.map_vertices(|v| Vec3::new(v.x, v.y, v.z - min_z))
}

/// Convenience: normalize to `target_extent`, then settle.
pub fn prepare(mesh: TriangleMesh, target_extent: f64) -> Result<TriangleMesh, MeshError> {
    normalize_mesh(mesh, target_extent).map(settle)
}
