//! Measurable checks that predicted shadows respond to the light controls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::image::{GrayImage, Mask};
use crate::light::{Camera, CameraError, CameraFrame};
use crate::render::mean_boundary_gradient;

/// Minimum gradient magnitude for a pixel to count as shadow boundary.
pub const BOUNDARY_THRESHOLD: f64 = 0.01;
/// Reflection tolerance as a fraction of the image width.
pub const REFLECTION_TOLERANCE: f64 = 0.1;

/// Where each pixel's shadow mass sits for centroid measurements, with the
/// area it stands for, the anchor to reflect through, and the width the
/// tolerance is a fraction of.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneMap {
    pub width: usize,
    pub height: usize,
    points: Vec<Option<(f64, f64)>>,
    weights: Vec<f64>,
    /// Pixel holding each pixel's reflection through the anchor.
    mirror: Vec<Option<usize>>,
    pub anchor: (f64, f64),
    pub span: f64,
}

fn ground_hit(frame: &CameraFrame, px: f64, py: f64) -> Option<(f64, f64)> {
    let r = frame.ray(px, py);
    (r.dir.z < -1e-12).then(|| {
        let t = -r.origin.z / r.dir.z;
        (r.origin.x + t * r.dir.x, r.origin.y + t * r.dir.y)
    })
}

impl PlaneMap {
    /// Pixel-center coordinates with unit weights, anchored at the image
    /// center; the span is the image width in pixels.
    pub fn image(width: usize, height: usize) -> Self {
        let points = (0..width * height)
            .map(|i| Some(((i % width) as f64 + 0.5, (i / width) as f64 + 0.5)))
            .collect();
        PlaneMap {
            width,
            height,
            points,
            weights: vec![1.0; width * height],
            mirror: (0..width * height)
                .map(|i| Some((height - 1 - i / width) * width + (width - 1 - i % width)))
                .collect(),
            anchor: (width as f64 / 2.0, height as f64 / 2.0),
            span: width as f64,
        }
    }

    /// Ground-plane (z = 0) coordinates seen through `camera`, each pixel
    /// weighted by the ground area it covers. The anchor is the world
    /// origin, and the span is the ground width the image covers at the
    /// origin's image row.
    pub fn ground(camera: &Camera) -> Result<Self, CameraError> {
        let f = camera.frame()?;
        let (w, h) = (camera.width, camera.height);
        let mut points = Vec::with_capacity(w * h);
        let mut weights = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let corners = [
                    ground_hit(&f, cx - 0.5, cy),
                    ground_hit(&f, cx + 0.5, cy),
                    ground_hit(&f, cx, cy - 0.5),
                    ground_hit(&f, cx, cy + 0.5),
                ];
                match (ground_hit(&f, cx, cy), corners) {
                    (Some(p), [Some(l), Some(r), Some(u), Some(d)]) => {
                        let (ax, ay) = (r.0 - l.0, r.1 - l.1);
                        let (bx, by) = (d.0 - u.0, d.1 - u.1);
                        points.push(Some(p));
                        weights.push((ax * by - ay * bx).abs());
                    }
                    _ => {
                        points.push(None);
                        weights.push(0.0);
                    }
                }
            }
        }
        let row = f.project(Vec3::ZERO).map_or(h as f64 / 2.0, |p| p.1);
        let span = match (ground_hit(&f, 0.0, row), ground_hit(&f, w as f64, row)) {
            (Some(a), Some(b)) => (b.0 - a.0).hypot(b.1 - a.1),
            _ => return Err(CameraError::ZeroView),
        };
        let mirror = points
            .iter()
            .map(|p| {
                let (x, y) = (*p)?;
                let (px, py) = f.project(Vec3::new(-x, -y, 0.0))?;
                let inside = px >= 0.0 && py >= 0.0 && px < w as f64 && py < h as f64;
                inside.then(|| py as usize * w + px as usize)
            })
            .collect();
        Ok(PlaneMap {
            width: w,
            height: h,
            points,
            weights,
            mirror,
            anchor: (0.0, 0.0),
            span,
        })
    }
}

fn weighted_centroid(
    shadow: &GrayImage,
    plane: &PlaneMap,
    include: impl Fn(usize) -> bool,
) -> Option<(f64, f64)> {
    assert_eq!(
        shadow.shape(),
        (plane.width, plane.height),
        "plane map and shadow differ in size"
    );
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (i, &s) in shadow.data.iter().enumerate() {
        let Some(p) = plane.points[i] else { continue };
        if !include(i) {
            continue;
        }
        let v = s * plane.weights[i];
        sx += v * p.0;
        sy += v * p.1;
        total += v;
    }
    (total > 1e-12).then(|| (sx / total, sy / total))
}

/// Shadow-weighted mean position over non-object pixels, in the
/// coordinates of `plane`.
pub fn shadow_centroid(
    shadow: &GrayImage,
    mask: Option<&Mask>,
    plane: &PlaneMap,
) -> Option<(f64, f64)> {
    weighted_centroid(shadow, plane, |i| mask.is_none_or(|m| m.data[i] == 0))
}

/// Pixels seen in both renderings of a mirrored pair: neither the pixel nor
/// its reflection through the anchor is covered by an object or off-image.
fn mirror_visible(plane: &PlaneMap, masks: [&Mask; 2]) -> Vec<bool> {
    let free = |i: usize| masks.iter().all(|m| m.data[i] == 0);
    (0..plane.width * plane.height)
        .map(|i| free(i) && plane.mirror[i].is_some_and(free))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftnessOutcome {
    pub sizes: Vec<f64>,
    /// Mean boundary gradient per size, averaged over all maps of that size.
    pub mean_gradient: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Share of objects whose own gradients strictly decrease with size.
    pub object_fraction: f64,
}

/// `entries`: (object id, light size, predicted map, object mask).
pub fn softness_check(entries: &[(String, f64, GrayImage, Mask)]) -> SoftnessOutcome {
    let mut by_object: BTreeMap<&str, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut by_size: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (obj, size, map, mask) in entries {
        let g = mean_boundary_gradient(map, Some(mask), BOUNDARY_THRESHOLD);
        let key = size.to_bits();
        by_object
            .entry(obj)
            .or_default()
            .entry(key)
            .or_default()
            .push(g);
        by_size.entry(key).or_default().push(g);
    }
    let mut pairs: Vec<(f64, f64)> = by_size
        .iter()
        .map(|(k, v)| (f64::from_bits(*k), v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let decreasing = |vals: &[f64]| vals.windows(2).all(|w| w[1] < w[0]);
    let mean_gradient: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let objects_ok = by_object
        .values()
        .filter(|sizes| {
            let mut v: Vec<(f64, f64)> = sizes
                .iter()
                .map(|(k, g)| (f64::from_bits(*k), g.iter().sum::<f64>() / g.len() as f64))
                .collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            decreasing(&v.iter().map(|p| p.1).collect::<Vec<_>>())
        })
        .count();
    SoftnessOutcome {
        sizes: pairs.iter().map(|p| p.0).collect(),
        strictly_decreasing: decreasing(&mean_gradient),
        mean_gradient,
        object_fraction: objects_ok as f64 / by_object.len().max(1) as f64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    /// (object, mean deviation over its φ/φ+180° pairs, passed), in plane
    /// units.
    pub objects: Vec<(String, f64, bool)>,
    pub pass_fraction: f64,
    pub tolerance: f64,
}

/// For each object, pairs every φ with φ+180° and measures how far the two
/// shadow centroids are from mirror images through the plane's anchor:
/// `|c(φ) + c(φ+180°) − 2·anchor|`. Both centroids are taken over the
/// ground seen in both renderings, so the object hiding different parts of
/// the two shadows does not count as asymmetry. An object passes when its
/// mean deviation is within 10% of the plane's span. A pair where either map
/// has no shadow there counts as an infinite deviation.
pub fn phi_reflection_check(
    entries: &[(String, f64, GrayImage, Mask)],
    plane: &PlaneMap,
) -> ReflectionOutcome {
    let tolerance = REFLECTION_TOLERANCE * plane.span;
    let anchor = plane.anchor;
    let mut by_object: BTreeMap<&str, BTreeMap<i64, (&GrayImage, &Mask)>> = BTreeMap::new();
    for (obj, phi, map, mask) in entries {
        let key = (phi.round() as i64).rem_euclid(360);
        by_object.entry(obj).or_default().insert(key, (map, mask));
    }
    let mut objects = Vec::new();
    for (obj, maps) in by_object {
        let mut devs = Vec::new();
        for (&phi, &(a, ma)) in maps.range(0..180) {
            let Some(&(b, mb)) = maps.get(&(phi + 180)) else {
                continue;
            };
            let seen = mirror_visible(plane, [ma, mb]);
            let ca = weighted_centroid(a, plane, |i| seen[i]);
            let cb = weighted_centroid(b, plane, |i| seen[i]);
            devs.push(match (ca, cb) {
                (Some(a), Some(b)) => {
                    (a.0 + b.0 - 2.0 * anchor.0).hypot(a.1 + b.1 - 2.0 * anchor.1)
                }
                _ => f64::INFINITY,
            });
        }
        if devs.is_empty() {
            continue;
        }
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        objects.push((obj.to_string(), mean, mean <= tolerance));
    }
    let passed = objects.iter().filter(|o| o.2).count();
    ReflectionOutcome {
        pass_fraction: passed as f64 / objects.len().max(1) as f64,
        objects,
        tolerance,
    }
}
