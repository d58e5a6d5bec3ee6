//! Spherical light parameterization, the pinhole camera, square area-light
//! sampling and the Gaussian-blob light map.
//!
//! Angles are in degrees. The light sits on a sphere of radius `radius`
//! around the origin: polar angle `theta` from +z, azimuth `phi` from +x
//! towards +y. The camera looks at the scene from the negative y-axis.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Ray, Vec3};
use crate::image::GrayImage;

pub const DEFAULT_RADIUS: f64 = 8.0;
pub const DEFAULT_IMAGE_SIZE: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera position coincides with its look-at point")]
    ZeroView,
    #[error("vertical field of view must lie in (0, 180), got {0}")]
    BadFov(f64),
    #[error("up vector is parallel to the view direction")]
    DegenerateUp,
    #[error("image size must be positive, got {0}x{1}")]
    EmptyImage(usize, usize),
}

fn default_intensity() -> f64 {
    1.0
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS
}

/// Light pose and shape: polar angle, azimuth, square side, shadow
/// intensity scalar and sphere radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightParams {
    pub theta: f64,
    pub phi: f64,
    pub size: f64,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl LightParams {
    pub fn new(theta: f64, phi: f64, size: f64) -> Self {
        LightParams {
            theta,
            phi,
            size,
            intensity: 1.0,
            radius: DEFAULT_RADIUS,
        }
    }

    pub fn with_intensity(self, intensity: f64) -> Self {
        LightParams { intensity, ..self }
    }

    /// Cartesian light center, z-up.
    pub fn position(&self) -> Vec3 {
        light_position(self)
    }
}

/// `(r sinθ cosφ, r sinθ sinφ, r cosθ)`.
pub fn light_position(p: &LightParams) -> Vec3 {
    let (st, ct) = p.theta.to_radians().sin_cos();
    let (sp, cp) = p.phi.to_radians().sin_cos();
    Vec3::new(p.radius * st * cp, p.radius * st * sp, p.radius * ct)
}

/// Square emitter facing the origin.
#[derive(Clone, Copy, Debug)]
pub struct AreaLight {
    pub center: Vec3,
    /// Unit direction from the light center towards the origin.
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub size: f64,
}

impl AreaLight {
    /// Tangent frame: `u = normalize(z × d)`, `v = d × u`, falling back to
    /// the world x/y axes when the light is at the pole.
    pub fn new(p: &LightParams) -> Self {
        let center = light_position(p);
        let d = (-center).normalized();
        let c = Vec3::Z.cross(d);
        let (u, v) = if c.length() < 1e-6 {
            (Vec3::X, Vec3::Y)
        } else {
            let u = c.normalized();
            (u, d.cross(u))
        };
        AreaLight {
            center,
            normal: d,
            u,
            v,
            size: p.size,
        }
    }

    /// Point on the square for local coordinates `(a, b)` in `[0,1]²`.
    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        self.center + self.u * ((a - 0.5) * self.size) + self.v * ((b - 0.5) * self.size)
    }

    /// Calls `f` once per stratum of a `grid × grid` jittered pattern,
    /// row by row.
    pub fn for_each_sample<R: Rng + ?Sized>(
        &self,
        grid: usize,
        rng: &mut R,
        mut f: impl FnMut(Vec3),
    ) {
        let inv = 1.0 / grid as f64;
        for j in 0..grid {
            for i in 0..grid {
                let a = (i as f64 + rng.random::<f64>()) * inv;
                let b = (j as f64 + rng.random::<f64>()) * inv;
                f(self.point(a, b));
            }
        }
    }
}

/// `grid²` stratified-jittered points over the light square.
pub fn sample_area_light<R: Rng + ?Sized>(p: &LightParams, grid: usize, rng: &mut R) -> Vec<Vec3> {
    let light = AreaLight::new(p);
    let mut out = Vec::with_capacity(grid * grid);
    light.for_each_sample(grid, rng, |q| out.push(q));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3Json,
    pub look_at: Vec3Json,
    pub up: Vec3Json,
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
}

/// Serde shim so the camera serializes as plain `[x, y, z]` arrays.
pub type Vec3Json = [f64; 3];

/// Precomputed camera basis.
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tan_half: f64,
    aspect: f64,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(
        position: Vec3,
        look_at: Vec3,
        up: Vec3,
        vertical_fov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let cam = Camera {
            position: position.to_array(),
            look_at: look_at.to_array(),
            up: up.to_array(),
            vertical_fov,
            width,
            height,
        };
        cam.frame()?;
        Ok(cam)
    }

    /// Benchmark camera: (0, −6, 2) looking at the origin, 40° fov.
    pub fn benchmark(size: usize) -> Self {
        Self::dolly(6.0, size)
    }

    /// Camera on the negative y-axis at `distance`, height 2, aimed at the origin.
    pub fn dolly(distance: f64, size: usize) -> Self {
        Camera::new(
            Vec3::new(0.0, -distance, 2.0),
            Vec3::ZERO,
            Vec3::Z,
            40.0,
            size,
            size,
        )
        .expect("dolly camera is valid for positive distance")
    }

    pub fn frame(&self) -> Result<CameraFrame, CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage(self.width, self.height));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(CameraError::BadFov(self.vertical_fov));
        }
        let origin = Vec3::from_array(self.position);
        let view = Vec3::from_array(self.look_at) - origin;
        if view.length() == 0.0 {
            return Err(CameraError::ZeroView);
        }
        let forward = view.normalized();
        let right = forward.cross(Vec3::from_array(self.up));
        if right.length() < 1e-9 {
            return Err(CameraError::DegenerateUp);
        }
        let right = right.normalized();
        let up = right.cross(forward);
        Ok(CameraFrame {
            origin,
            forward,
            right,
            up,
            tan_half: (self.vertical_fov.to_radians() * 0.5).tan(),
            aspect: self.width as f64 / self.height as f64,
            width: self.width,
            height: self.height,
        })
    }
}

impl CameraFrame {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    /// Ray through continuous image coordinates (x right, y down, pixel
    /// `(i, j)` covers `[i, i+1) × [j, j+1)`).
    pub fn ray(&self, px: f64, py: f64) -> Ray {
        let sx = (2.0 * px / self.width as f64 - 1.0) * self.tan_half * self.aspect;
        let sy = (1.0 - 2.0 * py / self.height as f64) * self.tan_half;
        Ray::new(
            self.origin,
            (self.forward + self.right * sx + self.up * sy).normalized(),
        )
    }

    pub fn pixel_ray(&self, x: usize, y: usize) -> Ray {
        self.ray(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Continuous image coordinates of a world point in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let d = p - self.origin;
        let depth = d.dot(self.forward);
        if depth <= 0.0 {
            return None;
        }
        let sx = d.dot(self.right) / depth / (self.tan_half * self.aspect);
        let sy = d.dot(self.up) / depth / self.tan_half;
        Some((
            (sx + 1.0) * 0.5 * self.width as f64,
            (1.0 - sy) * 0.5 * self.height as f64,
        ))
    }
}

/// Blob standard deviation in pixels per unit of light size.
pub fn blob_base_sigma(width: usize) -> f64 {
    width as f64 / 64.0
}

/// Continuous image coordinates of the blob center: the light's (x, y)
/// mapped from `[−r, r]²` onto the image, +y pointing up.
pub fn blob_center(p: &LightParams, width: usize, height: usize) -> (f64, f64) {
    let pos = light_position(p);
    let r = p.radius;
    (
        (pos.x + r) / (2.0 * r) * width as f64,
        (r - pos.y) / (2.0 * r) * height as f64,
    )
}

/// Pixel containing the blob center, clamped to the frame.
pub fn blob_center_pixel(p: &LightParams, width: usize, height: usize) -> (usize, usize) {
    let (cx, cy) = blob_center(p, width, height);
    let clamp = |c: f64, n: usize| (c.floor().max(0.0) as usize).min(n - 1);
    (clamp(cx, width), clamp(cy, height))
}

/// Isotropic Gaussian light map with unit peak and `σ = base_sigma · size`
/// pixels, evaluated at pixel centers.
pub fn blob_map(p: &LightParams, width: usize, height: usize) -> GrayImage {
    let (cx, cy) = blob_center(p, width, height);
    let sigma = blob_base_sigma(width) * p.size;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut img = GrayImage::new(width, height);
    for y in 0..height {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..width {
            let dx = x as f64 + 0.5 - cx;
            img.set(x, y, (-(dx * dx + dy * dy) * inv).exp());
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).length() < tol
    }

    #[test]
    fn light_position_cases() {
        let pole = light_position(&LightParams::new(0.0, 123.0, 2.0));
        assert!(close(pole, Vec3::new(0.0, 0.0, 8.0), 1e-12));
        let eq = light_position(&LightParams::new(90.0, 0.0, 2.0));
        assert!(close(eq, Vec3::new(8.0, 0.0, 0.0), 1e-12));
        let p = light_position(&LightParams::new(30.0, 90.0, 2.0));
        assert!(close(p, Vec3::new(0.0, 4.0, 6.9282), 1e-4));
    }

    #[test]
    fn light_position_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = LightParams {
                radius: rng.random_range(0.5..20.0),
                ..LightParams::new(
                    rng.random_range(0.0..180.0),
                    rng.random_range(0.0..360.0),
                    2.0,
                )
            };
            assert!((light_position(&p).length() - p.radius).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_light_collapses_to_center() {
        let p = LightParams::new(20.0, 75.0, 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for q in sample_area_light(&p, 5, &mut rng) {
            assert!(close(q, p.position(), 1e-8));
        }
    }

    #[test]
    fn samples_are_planar_and_stratified() {
        for (theta, phi) in [(0.0, 0.0), (30.0, 40.0), (45.0, 300.0), (89.0, 180.0)] {
            let p = LightParams::new(theta, phi, 3.0);
            let light = AreaLight::new(&p);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let pts = sample_area_light(&p, 4, &mut rng);
            assert_eq!(pts.len(), 16);
            let mut seen = [false; 16];
            for q in &pts {
                let rel = *q - light.center;
                assert!(rel.dot(light.normal).abs() < 1e-9);
                let a = rel.dot(light.u) / p.size + 0.5;
                let b = rel.dot(light.v) / p.size + 0.5;
                assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
                let cell =
                    (b * 4.0).floor().min(3.0) as usize * 4 + (a * 4.0).floor().min(3.0) as usize;
                seen[cell] = true;
            }
            assert!(seen.iter().all(|&s| s), "one sample per stratum");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = LightParams::new(33.0, 12.0, 5.0);
        let a = sample_area_light(&p, 8, &mut ChaCha8Rng::seed_from_u64(77));
        let b = sample_area_light(&p, 8, &mut ChaCha8Rng::seed_from_u64(77));
        let bits = |v: &[Vec3]| {
            v.iter()
                .flat_map(|q| q.to_array().map(f64::to_bits))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn frame_is_orthonormal_at_pole() {
        let l = AreaLight::new(&LightParams::new(0.0, 0.0, 2.0));
        assert_eq!((l.u, l.v), (Vec3::X, Vec3::Y));
        let l = AreaLight::new(&LightParams::new(30.0, 200.0, 2.0));
        assert!(l.u.dot(l.v).abs() < 1e-12 && l.u.dot(l.normal).abs() < 1e-12);
        assert!((l.v.length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blob_centering() {
        let c = blob_center(&LightParams::new(0.0, 0.0, 2.0), 256, 256);
        assert_eq!(c, (128.0, 128.0));
        let c = blob_center(&LightParams::new(90.0, 0.0, 2.0), 256, 256);
        assert!((c.0 - 256.0).abs() < 1e-9 && (c.1 - 128.0).abs() < 1e-9);
        let img = blob_map(&LightParams::new(0.0, 0.0, 2.0), 256, 256);
        let m = img.data.iter().cloned().fold(0.0, f64::max);
        for (x, y) in [(127, 127), (128, 127), (127, 128), (128, 128)] {
            assert_eq!(img.get(x, y), m);
        }
    }

    #[test]
    fn blob_half_max_width_doubles_with_size() {
        // Odd frame with the blob on a pixel center: the half-max run along the
        // center row is the analytic FWHM 2σ·sqrt(2 ln 2) rounded to odd pixels.
        let w = 255;
        let row_count = |size: f64| {
            let p = LightParams::new(0.0, 0.0, size);
            let img = blob_map(&p, w, w);
            (0..w).filter(|&x| img.get(x, w / 2) >= 0.5).count() as i64
        };
        for s in [2.0, 3.0, 4.0] {
            let fwhm = 2.0 * blob_base_sigma(w) * s * (2.0 * std::f64::consts::LN_2).sqrt();
            let (a, b) = (row_count(s), row_count(2.0 * s));
            assert!((a as f64 - fwhm).abs() <= 2.0, "s={s}: {a} vs fwhm {fwhm}");
            assert!((b - 2 * a).abs() <= 2, "s={s}: {a} vs {b}");
        }
    }

    #[test]
    fn blob_argmax_matches_center_pixel() {
        let (w, h) = (96, 80);
        for i in 0..10 {
            for j in 0..10 {
                let p = LightParams::new(
                    0.7 + 4.43 * i as f64,
                    3.1 + 35.7 * j as f64,
                    2.0 + 0.6 * i as f64,
                );
                let img = blob_map(&p, w, h);
                let (best, _) =
                    img.data
                        .iter()
                        .enumerate()
                        .fold(
                            (0, f64::MIN),
                            |(bi, bv), (k, &v)| if v > bv { (k, v) } else { (bi, bv) },
                        );
                let (cx, cy) = blob_center_pixel(&p, w, h);
                assert_eq!(
                    (best % w, best / w),
                    (cx, cy),
                    "theta={} phi={}",
                    p.theta,
                    p.phi
                );
            }
        }
    }

    #[test]
    fn light_params_json_shape() {
        let p = LightParams::new(30.0, 0.0, 2.0);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"theta":30.0,"phi":0.0,"size":2.0,"intensity":1.0,"radius":8.0}"#
        );
        let back: LightParams = serde_json::from_str(r#"{"theta":5,"phi":1,"size":3}"#).unwrap();
        assert_eq!(back, LightParams::new(5.0, 1.0, 3.0));
        assert!(
            serde_json::from_str::<LightParams>(r#"{"theta":5,"phi":1,"size":3,"x":1}"#).is_err()
        );
    }

    #[test]
    fn camera_validation() {
        assert_eq!(
            Camera::new(Vec3::ZERO, Vec3::ZERO, Vec3::Z, 40.0, 8, 8).unwrap_err(),
            CameraError::ZeroView
        );
        assert_eq!(
            Camera::new(Vec3::Y, Vec3::ZERO, Vec3::Z, 180.0, 8, 8).unwrap_err(),
            CameraError::BadFov(180.0)
        );
    }

    #[test]
    fn projection_inverts_rays() {
        let f = Camera::benchmark(64).frame().unwrap();
        let (x, y) = f.project(Vec3::ZERO).unwrap();
        assert!((x - 32.0).abs() < 1e-9 && (y - 32.0).abs() < 1e-9);
        let ray = f.ray(10.25, 50.5);
        let (px, py) = f.project(ray.at(3.0)).unwrap();
        assert!((px - 10.25).abs() < 1e-9 && (py - 50.5).abs() < 1e-9);
    }
}
