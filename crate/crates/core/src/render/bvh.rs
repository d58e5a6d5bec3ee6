//! Binary bounding volume hierarchy over a triangle mesh.
//!
//! Built by median split along the longest axis of the centroid bounds,
//! leaves hold at most [`MAX_LEAF`] triangles. Nearest-hit queries break
//! ties on equal distance by the lower original triangle index, which makes
//! them agree exactly with a linear scan.

use crate::geom::{intersect_triangle, Aabb, Ray, Vec3};
use crate::mesh::TriangleMesh;

use super::RenderError;

pub const MAX_LEAF: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Index into the source mesh's triangle list.
    pub triangle: usize,
}

impl Hit {
    fn better_than(&self, other: &Option<Hit>) -> bool {
        match other {
            None => true,
            Some(o) => self.t < o.t || (self.t == o.t && self.triangle < o.triangle),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Clone, Copy, Debug)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    /// Permutation: slot `i` of the leaf ranges holds triangle `order[i]`.
    order: Vec<u32>,
    /// Triangle corners in `order`.
    corners: Vec<[Vec3; 3]>,
}

struct BuildRef {
    bounds: Aabb,
    centroid: Vec3,
    index: u32,
}

fn padded(b: Aabb) -> Aabb {
    let scale = 1.0
        + b.min
            .x
            .abs()
            .max(b.min.y.abs())
            .max(b.min.z.abs())
            .max(b.max.x.abs().max(b.max.y.abs()).max(b.max.z.abs()));
    let pad = Vec3::new(1.0, 1.0, 1.0) * (1e-9 * scale);
    Aabb {
        min: b.min - pad,
        max: b.max + pad,
    }
}

/// Builds the hierarchy. Construction is deterministic for a given mesh.
pub fn build_bvh(mesh: &TriangleMesh) -> Result<Bvh, RenderError> {
    if mesh.triangles.is_empty() {
        return Err(RenderError::EmptyMesh(mesh.name.clone()));
    }
    let mut refs: Vec<BuildRef> = (0..mesh.triangles.len())
        .map(|i| {
            let [a, b, c] = mesh.triangle(i);
            BuildRef {
                bounds: padded(Aabb::from_points([a, b, c])),
                centroid: (a + b + c) / 3.0,
                index: i as u32,
            }
        })
        .collect();
    let mut nodes = Vec::with_capacity(2 * refs.len() / MAX_LEAF + 1);
    build_node(&mut refs, 0, &mut nodes);
    let order: Vec<u32> = refs.iter().map(|r| r.index).collect();
    let corners = order.iter().map(|&i| mesh.triangle(i as usize)).collect();
    Ok(Bvh {
        nodes,
        order,
        corners,
    })
}

fn build_node(refs: &mut [BuildRef], offset: usize, nodes: &mut Vec<BvhNode>) -> u32 {
    let bounds = refs.iter().fold(Aabb::EMPTY, |b, r| b.union(r.bounds));
    let id = nodes.len() as u32;
    if refs.len() <= MAX_LEAF {
        nodes.push(BvhNode {
            bounds,
            kind: NodeKind::Leaf {
                start: offset as u32,
                count: refs.len() as u32,
            },
        });
        return id;
    }
    let axis = Aabb::from_points(refs.iter().map(|r| r.centroid)).longest_axis();
    refs.sort_by(|a, b| {
        a.centroid[axis]
            .total_cmp(&b.centroid[axis])
            .then(a.index.cmp(&b.index))
    });
    let mid = refs.len() / 2;
    nodes.push(BvhNode {
        bounds,
        kind: NodeKind::Inner { left: 0, right: 0 },
    });
    let (lo, hi) = refs.split_at_mut(mid);
    let left = build_node(lo, offset, nodes);
    let right = build_node(hi, offset + mid, nodes);
    nodes[id as usize].kind = NodeKind::Inner { left, right };
    id
}

fn inverse(dir: Vec3) -> Vec3 {
    Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z)
}

impl Bvh {
    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn triangle_order(&self) -> &[u32] {
        &self.order
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Nearest intersection with distance in `(t_min, t_max)`.
    pub fn closest_hit(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let inv = inverse(ray.dir);
        let mut best: Option<Hit> = None;
        let mut stack = [0u32; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            let limit = best.map_or(t_max, |h| h.t);
            match node.bounds.hit(ray, inv, t_min, limit) {
                None => continue,
                Some(entry) if entry > limit => continue,
                _ => {}
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for slot in start..start + count {
                        let [a, b, c] = self.corners[slot as usize];
                        if let Some(t) = intersect_triangle(ray, a, b, c) {
                            if t > t_min && t < t_max {
                                let hit = Hit {
                                    t,
                                    triangle: self.order[slot as usize] as usize,
                                };
                                if hit.better_than(&best) {
                                    best = Some(hit);
                                }
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    // Push the farther child first so the nearer one pops next.
                    let l = self.nodes[left as usize].bounds.hit(ray, inv, t_min, t_max);
                    let r = self.nodes[right as usize]
                        .bounds
                        .hit(ray, inv, t_min, t_max);
                    let (first, second) = match (l, r) {
                        (Some(a), Some(b)) if b < a => (right, left),
                        _ => (left, right),
                    };
                    stack[top] = second;
                    stack[top + 1] = first;
                    top += 2;
                }
            }
        }
        best
    }

    /// True when any triangle is hit with distance in `(t_min, t_max)`.
    pub fn any_hit(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        let inv = inverse(ray.dir);
        let mut stack = [0u32; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            if node.bounds.hit(ray, inv, t_min, t_max).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for slot in start..start + count {
                        let [a, b, c] = self.corners[slot as usize];
                        if let Some(t) = intersect_triangle(ray, a, b, c) {
                            if t > t_min && t < t_max {
                                return true;
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack[top] = left;
                    stack[top + 1] = right;
                    top += 2;
                }
            }
        }
        false
    }
}

/// Linear scan over every triangle, with the same tie rule as the BVH.
pub fn brute_force_closest_hit(
    mesh: &TriangleMesh,
    ray: &Ray,
    t_min: f64,
    t_max: f64,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for i in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.triangle(i);
        if let Some(t) = intersect_triangle(ray, a, b, c) {
            if t > t_min && t < t_max {
                let hit = Hit { t, triangle: i };
                if hit.better_than(&best) {
                    best = Some(hit);
                }
            }
        }
    }
    best
}
