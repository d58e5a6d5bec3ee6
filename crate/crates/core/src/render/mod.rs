//! Ground-truth triplet rendering: object mask, ground-plane shadow map and
//! a flat-shaded preview.
//!
//! The ground is the infinite plane z = 0. A shadow-map pixel whose primary
//! ray reaches the ground first at `P` stores the fraction of the area
//! light's stratified samples `q` for which the segment `P → q` is blocked
//! by the mesh. Each pixel draws its jitter from its own RNG stream keyed by
//! `(seed, pixel index)`, so the output does not depend on how rows are
//! scheduled across workers.

pub mod bvh;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Ray, Vec3};
use crate::image::{self, GrayImage, ImageError, Mask, RgbImage};
use crate::light::{AreaLight, Camera, CameraError, CameraFrame, LightParams};
use crate::mesh::TriangleMesh;

pub use bvh::{brute_force_closest_hit, build_bvh, Bvh, Hit};

/// Offset along shadow rays that suppresses self-intersection.
pub const SHADOW_EPSILON: f64 = 1e-4;
/// Default light-sample grid side (256 samples per pixel).
pub const DEFAULT_GRID: usize = 16;

const OBJECT_ALBEDO: f64 = 0.8;
const AMBIENT: f64 = 0.2;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh {0:?} has no triangles")]
    EmptyMesh(String),
    #[error("light sample grid must be at least 1")]
    EmptyGrid,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Immutable mesh plus acceleration structure, shared read-only by workers.
#[derive(Clone, Debug, Default)]
pub struct Scene {
    geometry: Option<(TriangleMesh, Bvh)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimaryHit {
    Object(Hit),
    Ground(Vec3),
    Background,
}

impl Scene {
    pub fn new(mesh: TriangleMesh) -> Result<Self, RenderError> {
        let bvh = build_bvh(&mesh)?;
        Ok(Scene {
            geometry: Some((mesh, bvh)),
        })
    }

    pub fn empty() -> Self {
        Scene { geometry: None }
    }

    pub fn mesh(&self) -> Option<&TriangleMesh> {
        self.geometry.as_ref().map(|(m, _)| m)
    }

    pub fn bvh(&self) -> Option<&Bvh> {
        self.geometry.as_ref().map(|(_, b)| b)
    }

    pub fn name(&self) -> &str {
        self.mesh().map_or("", |m| m.name.as_str())
    }

    /// Classifies what a camera ray sees first.
    pub fn trace_primary(&self, ray: &Ray) -> PrimaryHit {
        let t_ground = if ray.dir.z < 0.0 && ray.origin.z > 0.0 {
            -ray.origin.z / ray.dir.z
        } else {
            f64::INFINITY
        };
        if let Some(bvh) = self.bvh() {
            if let Some(hit) = bvh.closest_hit(ray, 0.0, t_ground) {
                return PrimaryHit::Object(hit);
            }
        }
        if t_ground.is_finite() {
            let mut p = ray.at(t_ground);
            p.z = 0.0;
            PrimaryHit::Ground(p)
        } else {
            PrimaryHit::Background
        }
    }

    /// Number of blocked samples out of `grid²` for ground point `p`.
    pub fn blocked_samples(
        &self,
        p: Vec3,
        light: &AreaLight,
        grid: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let Some(bvh) = self.bvh() else {
            return 0;
        };
        let mut blocked = 0;
        light.for_each_sample(grid, rng, |q| {
            let to = q - p;
            let dist = to.length();
            let ray = Ray::new(p, to / dist);
            if bvh.any_hit(&ray, SHADOW_EPSILON, dist) {
                blocked += 1;
            }
        });
        blocked
    }
}

/// Per-pixel RNG stream.
pub fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel as u64);
    rng
}

/// Runs `f` on a pool with `workers` threads, or on the ambient pool.
pub fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, RenderError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| RenderError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn render_rows<T: Send + Copy + Default>(
    frame: &CameraFrame,
    f: impl Fn(usize, usize) -> T + Sync,
) -> Vec<T> {
    let (w, h) = (frame.width(), frame.height());
    let mut out = vec![T::default(); w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            *px = f(x, y);
        }
    });
    out
}

/// 1 where the camera ray's nearest hit is the mesh.
pub fn render_mask(scene: &Scene, camera: &Camera) -> Result<Mask, RenderError> {
    let frame = camera.frame()?;
    let data = render_rows(&frame, |x, y| {
        u8::from(matches!(
            scene.trace_primary(&frame.pixel_ray(x, y)),
            PrimaryHit::Object(_)
        ))
    });
    Ok(Mask {
        width: frame.width(),
        height: frame.height(),
        data,
    })
}

/// Area-light occlusion fraction on ground-visible pixels, 0 elsewhere.
pub fn render_shadow_map(
    scene: &Scene,
    camera: &Camera,
    light: &LightParams,
    grid: usize,
    seed: u64,
) -> Result<GrayImage, RenderError> {
    render_shadow_map_with_workers(scene, camera, light, grid, seed, None)
}

pub fn render_shadow_map_with_workers(
    scene: &Scene,
    camera: &Camera,
    light: &LightParams,
    grid: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<GrayImage, RenderError> {
    if grid == 0 {
        return Err(RenderError::EmptyGrid);
    }
    let frame = camera.frame()?;
    let area = AreaLight::new(light);
    let n = (grid * grid) as f64;
    let w = frame.width();
    let data = with_workers(workers, || {
        render_rows(&frame, |x, y| {
            match scene.trace_primary(&frame.pixel_ray(x, y)) {
                PrimaryHit::Ground(p) => {
                    let mut rng = pixel_rng(seed, y * w + x);
                    scene.blocked_samples(p, &area, grid, &mut rng) as f64 / n
                }
                _ => 0.0,
            }
        })
    })?;
    Ok(GrayImage::from_vec(w, frame.height(), data))
}

/// Flat-shaded object over a white ground darkened by `shadow`.
pub fn render_preview(
    scene: &Scene,
    camera: &Camera,
    light: &LightParams,
    shadow: &GrayImage,
) -> Result<RgbImage, RenderError> {
    let frame = camera.frame()?;
    let light_pos = light.position();
    let w = frame.width();
    let data = render_rows(&frame, |x, y| {
        let ray = frame.pixel_ray(x, y);
        match scene.trace_primary(&ray) {
            PrimaryHit::Object(hit) => {
                let mesh = scene.mesh().expect("object hit implies a mesh");
                let [a, b, c] = mesh.triangle(hit.triangle);
                let mut n = (b - a).cross(c - a).normalized();
                if n.dot(ray.dir) > 0.0 {
                    n = -n;
                }
                let l = (light_pos - ray.at(hit.t)).normalized();
                let shade = OBJECT_ALBEDO * (AMBIENT + (1.0 - AMBIENT) * n.dot(l).max(0.0));
                [shade.clamp(0.0, 1.0); 3]
            }
            PrimaryHit::Ground(_) => {
                let t = (1.0 - shadow.data[y * w + x]).clamp(0.0, 1.0);
                [t; 3]
            }
            PrimaryHit::Background => [1.0; 3],
        }
    });
    Ok(RgbImage {
        width: w,
        height: frame.height(),
        data,
    })
}

/// Preview, mask and shadow map of one scene under one light.
#[derive(Clone, Debug)]
pub struct RenderTriplet {
    pub preview: RgbImage,
    pub mask: Mask,
    pub shadow: GrayImage,
    pub params: LightParams,
    pub mesh_name: String,
    pub seed: u64,
    pub grid: usize,
}

/// Sidecar metadata written next to each triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletMeta {
    pub params: LightParams,
    pub mesh: String,
    pub seed: u64,
    pub grid: usize,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletPaths {
    pub preview: PathBuf,
    pub mask: PathBuf,
    pub shadow: PathBuf,
    pub meta: PathBuf,
}

impl TripletPaths {
    /// `<dir>/<id>.{preview,mask,shadow}.png` and `<dir>/<id>.json`.
    pub fn new(dir: &Path, id: &str) -> Self {
        TripletPaths {
            preview: dir.join(format!("{id}.preview.png")),
            mask: dir.join(format!("{id}.mask.png")),
            shadow: dir.join(format!("{id}.shadow.png")),
            meta: dir.join(format!("{id}.json")),
        }
    }
}

pub fn render_triplet(
    scene: &Scene,
    camera: &Camera,
    light: &LightParams,
    grid: usize,
    seed: u64,
) -> Result<RenderTriplet, RenderError> {
    let mask = render_mask(scene, camera)?;
    let shadow = render_shadow_map(scene, camera, light, grid, seed)?;
    let preview = render_preview(scene, camera, light, &shadow)?;
    Ok(RenderTriplet {
        preview,
        mask,
        shadow,
        params: *light,
        mesh_name: scene.name().to_string(),
        seed,
        grid,
    })
}

impl RenderTriplet {
    pub fn save(&self, dir: &Path, id: &str, camera: &Camera) -> Result<TripletPaths, RenderError> {
        let paths = TripletPaths::new(dir, id);
        image::save_rgb_png(&self.preview, &paths.preview)?;
        image::save_mask_png(&self.mask, &paths.mask)?;
        image::save_shadow_png(&self.shadow, &paths.shadow)?;
        let meta = TripletMeta {
            params: self.params,
            mesh: self.mesh_name.clone(),
            seed: self.seed,
            grid: self.grid,
            camera: *camera,
        };
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        std::fs::write(&paths.meta, json + "\n").map_err(|source| RenderError::Io {
            path: paths.meta.display().to_string(),
            source,
        })?;
        Ok(paths)
    }
}

/// Mean central-difference gradient magnitude over shadow-boundary pixels.
///
/// Boundary pixels are non-object pixels (with non-object 4-neighbours)
/// whose gradient magnitude is at least `threshold`. Returns 0 when no
/// pixel qualifies. Sharper shadows concentrate the same unit step into
/// fewer, steeper pixels, so the value falls as the light grows.
pub fn mean_boundary_gradient(shadow: &GrayImage, mask: Option<&Mask>, threshold: f64) -> f64 {
    let (w, h) = shadow.shape();
    let is_obj = |x: usize, y: usize| mask.is_some_and(|m| m.get(x, y));
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if is_obj(x, y)
                || is_obj(x - 1, y)
                || is_obj(x + 1, y)
                || is_obj(x, y - 1)
                || is_obj(x, y + 1)
            {
                continue;
            }
            let gx = 0.5 * (shadow.get(x + 1, y) - shadow.get(x - 1, y));
            let gy = 0.5 * (shadow.get(x, y + 1) - shadow.get(x, y - 1));
            let g = (gx * gx + gy * gy).sqrt();
            if g >= threshold {
                sum += g;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{parse_obj, prepare};

    pub(crate) fn unit_cube() -> TriangleMesh {
        let src = "v -0.5 -0.5 0\nv 0.5 -0.5 0\nv 0.5 0.5 0\nv -0.5 0.5 0\nv -0.5 -0.5 1\nv 0.5 -0.5 1\nv 0.5 0.5 1\nv -0.5 0.5 1\n\
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";
        parse_obj("unit-cube", src.as_bytes()).unwrap().mesh
    }

    #[test]
    fn empty_scene_renders_blank() {
        let cam = Camera::benchmark(32);
        let light = LightParams::new(30.0, 0.0, 2.0);
        let scene = Scene::empty();
        assert_eq!(render_mask(&scene, &cam).unwrap().count(), 0);
        let shadow = render_shadow_map(&scene, &cam, &light, 4, 1).unwrap();
        assert!(shadow.data.iter().all(|&v| v == 0.0));
        let preview = render_preview(&scene, &cam, &light, &shadow).unwrap();
        assert!(preview.data.iter().all(|p| *p == [1.0; 3]));
    }

    #[test]
    fn mask_centroid_near_projected_cube_center() {
        let cam = Camera::benchmark(crate::light::DEFAULT_IMAGE_SIZE);
        let scene = Scene::new(unit_cube()).unwrap();
        let mask = render_mask(&scene, &cam).unwrap();
        assert!(mask.count() > 0);
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                }
            }
        }
        let n = mask.count() as f64;
        let (cx, cy) = cam
            .frame()
            .unwrap()
            .project(Vec3::new(0.0, 0.0, 0.5))
            .unwrap();
        let d = ((sx / n - cx).powi(2) + (sy / n - cy).powi(2)).sqrt();
        assert!(
            d < 5.0,
            "mask centroid {:.2},{:.2} vs projected {cx:.2},{cy:.2}",
            sx / n,
            sy / n
        );
    }

    #[test]
    fn mask_matches_brute_force_renderer() {
        let cam = Camera::benchmark(64);
        let mesh = prepare(unit_cube(), 2.0).unwrap();
        let scene = Scene::new(mesh.clone()).unwrap();
        let mask = render_mask(&scene, &cam).unwrap();
        let frame = cam.frame().unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let ray = frame.pixel_ray(x, y);
                let t_ground = if ray.dir.z < 0.0 {
                    -ray.origin.z / ray.dir.z
                } else {
                    f64::INFINITY
                };
                let hit = brute_force_closest_hit(&mesh, &ray, 0.0, t_ground).is_some();
                assert_eq!(mask.get(x, y), hit, "pixel {x},{y}");
            }
        }
    }

    #[test]
    fn shadow_is_quantized_bounded_and_disjoint_from_mask() {
        let cam = Camera::benchmark(48);
        let scene = Scene::new(prepare(unit_cube(), 2.0).unwrap()).unwrap();
        let light = LightParams::new(30.0, 20.0, 3.0);
        let grid = 5;
        let shadow = render_shadow_map(&scene, &cam, &light, grid, 3).unwrap();
        let mask = render_mask(&scene, &cam).unwrap();
        let n = (grid * grid) as f64;
        assert!(shadow.data.iter().any(|&v| v > 0.0));
        for (i, &v) in shadow.data.iter().enumerate() {
            assert!((0.0..=1.0).contains(&v));
            assert_eq!((v * n).round() / n, v);
            if mask.data[i] != 0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn preview_darkening_matches_shadow_support() {
        let cam = Camera::benchmark(64);
        let scene = Scene::new(prepare(unit_cube(), 2.0).unwrap()).unwrap();
        let light = LightParams::new(40.0, 300.0, 4.0);
        let shadow = render_shadow_map(&scene, &cam, &light, 4, 11).unwrap();
        let mask = render_mask(&scene, &cam).unwrap();
        let preview = render_preview(&scene, &cam, &light, &shadow).unwrap();
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..shadow.data.len() {
            let px = preview.data[i];
            assert!(px.iter().all(|c| (0.0..=1.0).contains(c)));
            if mask.data[i] != 0 {
                continue;
            }
            let dark = px[0] < 1.0 - 1e-12;
            let shadowed = shadow.data[i] > 0.0;
            inter += usize::from(dark && shadowed);
            union += usize::from(dark || shadowed);
        }
        assert!(union > 0);
        assert!(inter as f64 / union as f64 > 0.95);
    }

    #[test]
    fn full_occlusion_under_a_large_plate() {
        let plate = TriangleMesh::new(
            "plate",
            vec![
                Vec3::new(-50.0, -50.0, 2.0),
                Vec3::new(50.0, -50.0, 2.0),
                Vec3::new(50.0, 50.0, 2.0),
                Vec3::new(-50.0, 50.0, 2.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let scene = Scene::new(plate).unwrap();
        let light = AreaLight::new(&LightParams::new(0.0, 0.0, 4.0));
        let mut rng = pixel_rng(0, 0);
        assert_eq!(scene.blocked_samples(Vec3::ZERO, &light, 8, &mut rng), 64);
    }

    #[test]
    fn boundary_gradient_prefers_sharp_edges() {
        let w = 32;
        let step = GrayImage::from_vec(
            w,
            w,
            (0..w * w)
                .map(|i| if i % w < 16 { 1.0 } else { 0.0 })
                .collect(),
        );
        let ramp = GrayImage::from_vec(
            w,
            w,
            (0..w * w)
                .map(|i| (((i % w) as f64 - 8.0) / 16.0).clamp(0.0, 1.0))
                .collect(),
        );
        let sharp = mean_boundary_gradient(&step, None, 0.01);
        let soft = mean_boundary_gradient(&ramp, None, 0.01);
        assert!((sharp - 0.5).abs() < 1e-12);
        assert!(soft < sharp && soft > 0.0);
    }
}
