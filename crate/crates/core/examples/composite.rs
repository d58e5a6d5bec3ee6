//! Render an object and its shadow, then composite both onto a gradient
//! background at several intensities.
//!
//! `cargo run --release --example composite [out_dir]`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbra::composite::{composite, CompositeInputs};
use umbra::forge::{make_primitive_mesh, PrimitiveKind};
use umbra::image::{save_rgb_png, RgbImage};
use umbra::light::{Camera, LightParams};
use umbra::render::{render_triplet, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("umbra-composite"));
    std::fs::create_dir_all(&out)?;
    let mesh = make_primitive_mesh(PrimitiveKind::Cone, &mut ChaCha8Rng::seed_from_u64(1));
    let scene = Scene::new(mesh)?;
    let camera = Camera::benchmark(96);
    let t = render_triplet(&scene, &camera, &LightParams::new(30.0, 300.0, 4.0), 10, 0)?;
    let (w, h) = (t.mask.width, t.mask.height);
    let background = RgbImage {
        width: w,
        height: h,
        data: (0..w * h)
            .map(|i| {
                let v = (i / w) as f64 / h as f64;
                [0.55 + 0.4 * v, 0.75, 0.95 - 0.3 * v]
            })
            .collect(),
    };
    for intensity in [0.0, 0.5, 1.0, 1.5] {
        let img = composite(&CompositeInputs {
            object: &t.preview,
            mask: &t.mask,
            shadow: &t.shadow,
            background: &background,
            intensity,
        })?;
        let path = out.join(format!("composite_i{intensity}.png"));
        save_rgb_png(&img, &path)?;
        let mean = img.luminance().data.iter().sum::<f64>() / (w * h) as f64;
        println!(
            "I = {intensity}: mean luminance {mean:.4} -> {}",
            path.display()
        );
    }
    Ok(())
}
