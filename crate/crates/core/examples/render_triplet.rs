//! Render a preview, mask and soft shadow for one primitive under one light
//! and save the triplet with its sidecar JSON.
//!
//! `cargo run --release --example render_triplet [out_dir]`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbra::forge::{make_primitive_mesh, PrimitiveKind};
use umbra::light::{Camera, LightParams};
use umbra::render::{render_triplet, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("umbra-render"));
    std::fs::create_dir_all(&out)?;
    let mesh = make_primitive_mesh(PrimitiveKind::Torus, &mut ChaCha8Rng::seed_from_u64(3));
    let scene = Scene::new(mesh)?;
    let camera = Camera::benchmark(128);
    for size in [2.0, 8.0] {
        let light = LightParams::new(35.0, 40.0, size);
        let t = render_triplet(&scene, &camera, &light, 12, 0)?;
        let shadowed = t.shadow.data.iter().filter(|&&v| v > 0.0).count();
        let paths = t.save(&out, &format!("torus_s{size}"), &camera)?;
        println!(
            "s = {size}: {shadowed} shadowed pixels, mean occlusion {:.4} -> {}",
            t.shadow.data.iter().sum::<f64>() / t.shadow.data.len() as f64,
            paths.shadow.display()
        );
    }
    Ok(())
}
