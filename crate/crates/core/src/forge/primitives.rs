//! Procedural stand-ins for a licensed mesh corpus.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::mesh::{prepare, TriangleMesh, DEFAULT_TARGET_EXTENT};

pub const CYLINDER_SEGMENTS: usize = 32;
pub const CONE_SEGMENTS: usize = 32;
const TORUS_MAJOR: usize = 24;
const TORUS_MINOR: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Cylinder,
    Torus,
    Cone,
    Composite,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 5] = [
        PrimitiveKind::Box,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Torus,
        PrimitiveKind::Cone,
        PrimitiveKind::Composite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::Box => "box",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Torus => "torus",
            PrimitiveKind::Cone => "cone",
            PrimitiveKind::Composite => "composite",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrimitiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown primitive {s:?}"))
    }
}

/// Axis-aligned box with its base on z = 0, centered in x and y.
pub fn box_mesh(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
    let (hx, hy) = (sx / 2.0, sy / 2.0);
    let mut v = Vec::with_capacity(8);
    for z in [0.0, sz] {
        v.push(Vec3::new(-hx, -hy, z));
        v.push(Vec3::new(hx, -hy, z));
        v.push(Vec3::new(hx, hy, z));
        v.push(Vec3::new(-hx, hy, z));
    }
    let quads = [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 0, 4, 7],
    ];
    let mut t = Vec::with_capacity(12);
    for [a, b, c, d] in quads {
        t.push([a, b, c]);
        t.push([a, c, d]);
    }
    TriangleMesh::new("box", v, t)
}

/// Capped cylinder along z: `2n` side triangles plus two `n`-triangle fans.
pub fn cylinder_mesh(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let n = segments as u32;
    let mut v = Vec::with_capacity(2 * segments + 2);
    for z in [0.0, height] {
        for i in 0..segments {
            let a = TAU * i as f64 / segments as f64;
            v.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let (bottom, top) = (2 * n, 2 * n + 1);
    v.push(Vec3::new(0.0, 0.0, 0.0));
    v.push(Vec3::new(0.0, 0.0, height));
    let mut t = Vec::with_capacity(4 * segments);
    for i in 0..n {
        let j = (i + 1) % n;
        t.push([i, j, n + j]);
        t.push([i, n + j, n + i]);
        t.push([bottom, j, i]);
        t.push([top, n + i, n + j]);
    }
    TriangleMesh::new("cylinder", v, t)
}

/// Cone along z: `n` side triangles to the apex plus an `n`-triangle base fan.
pub fn cone_mesh(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let n = segments as u32;
    let mut v: Vec<Vec3> = (0..segments)
        .map(|i| {
            let a = TAU * i as f64 / segments as f64;
            Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect();
    v.push(Vec3::new(0.0, 0.0, height));
    v.push(Vec3::ZERO);
    let (apex, base) = (n, n + 1);
    let mut t = Vec::with_capacity(2 * segments);
    for i in 0..n {
        let j = (i + 1) % n;
        t.push([i, j, apex]);
        t.push([base, j, i]);
    }
    TriangleMesh::new("cone", v, t)
}

/// Torus standing upright: its symmetry axis is y, so the ring's hole faces
/// the benchmark camera.
pub fn torus_mesh(major: f64, minor: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let w = TAU * j as f64 / nv as f64;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), minor * w.sin(), r * u.sin()));
        }
    }
    let idx = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut t = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    TriangleMesh::new("torus", v, t)
}

fn translated(mesh: TriangleMesh, d: Vec3) -> TriangleMesh {
    mesh.map_vertices(|v| v + d)
}

/// A randomized primitive of the given family, normalized to the default
/// extent and resting on the ground.
pub fn make_primitive_mesh<R: Rng + ?Sized>(kind: PrimitiveKind, rng: &mut R) -> TriangleMesh {
    let raw = match kind {
        PrimitiveKind::Box => box_mesh(
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
            rng.random_range(0.3..1.0),
        ),
        PrimitiveKind::Cylinder => cylinder_mesh(
            rng.random_range(0.2..0.5),
            rng.random_range(0.4..1.2),
            CYLINDER_SEGMENTS,
        ),
        PrimitiveKind::Cone => cone_mesh(
            rng.random_range(0.2..0.5),
            rng.random_range(0.5..1.2),
            CONE_SEGMENTS,
        ),
        PrimitiveKind::Torus => {
            let major = rng.random_range(0.4..0.6);
            torus_mesh(
                major,
                major * rng.random_range(0.2..0.45),
                TORUS_MAJOR,
                TORUS_MINOR,
            )
        }
        PrimitiveKind::Composite => {
            // A slab with a post and a cap: a table-lamp-like silhouette.
            let base_h = rng.random_range(0.08..0.2);
            let mut m = box_mesh(
                rng.random_range(0.6..1.0),
                rng.random_range(0.6..1.0),
                base_h,
            );
            let post_h = rng.random_range(0.5..1.0);
            let post = cylinder_mesh(rng.random_range(0.05..0.12), post_h, 16);
            m.append(&translated(post, Vec3::new(0.0, 0.0, base_h)));
            let cap = cone_mesh(rng.random_range(0.25..0.45), rng.random_range(0.2..0.4), 24);
            m.append(&translated(
                cap,
                Vec3::new(rng.random_range(-0.1..0.1), 0.0, base_h + post_h),
            ));
            m
        }
    };
    let mut mesh = prepare(raw, DEFAULT_TARGET_EXTENT).expect("primitives have positive extent");
    mesh.name = kind.as_str().to_string();
    mesh
}

/// `count` primitives cycling through every family, named `<kind>_<index>`.
pub fn primitive_corpus<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<TriangleMesh> {
    (0..count)
        .map(|i| {
            let kind = PrimitiveKind::ALL[i % PrimitiveKind::ALL.len()];
            let mut m = make_primitive_mesh(kind, rng);
            m.name = format!("{kind}_{i:03}");
            m
        })
        .collect()
}
