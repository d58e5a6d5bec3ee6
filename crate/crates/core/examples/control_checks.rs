//! Conditioning-control measurements on rendered ground truth: boundary
//! sharpness against light size on the softness track, and shadow centroid
//! reflection under φ → φ + 180° on the azimuth track.
//!
//! `cargo run --release --example control_checks [out_dir]`

use std::path::PathBuf;

use umbra::denoiser::{phi_reflection_check, softness_check};
use umbra::forge::{forge_track, ForgeConfig};
use umbra::pipeline::{benchmark_plane, eval_set, held_out_meshes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("umbra-control"));
    let cfg = ForgeConfig {
        image_size: 48,
        grid: 8,
        ..ForgeConfig::default()
    };
    let meshes = held_out_meshes(6, 0);
    let size = eval_set(
        "track1",
        &forge_track(1, &meshes[..3], 0, &cfg, &root)?.manifest,
    )?;
    let azimuth = eval_set(
        "track2",
        &forge_track(2, &meshes[3..], 0, &cfg, &root)?.manifest,
    )?;
    let entries = |set: &umbra::denoiser::EvalSet, key: fn(f64, f64) -> f64| {
        (0..set.conds.len())
            .map(|i| {
                let p = set.conds[i].params;
                (
                    set.objects[i].clone(),
                    key(p.size, p.phi),
                    set.truths[i].clone(),
                    set.conds[i].mask_image(),
                )
            })
            .collect::<Vec<_>>()
    };
    let soft = softness_check(&entries(&size, |s, _| s));
    for (s, g) in soft.sizes.iter().zip(&soft.mean_gradient) {
        println!("s = {s}: mean boundary gradient {g:.4}");
    }
    println!("strictly decreasing: {}", soft.strictly_decreasing);
    let refl = phi_reflection_check(&entries(&azimuth, |_, phi| phi), &benchmark_plane(48));
    for (obj, dev, ok) in &refl.objects {
        println!(
            "{obj}: centroid deviation {dev:.3} ({})",
            if *ok { "ok" } else { "off" }
        );
    }
    println!(
        "{:.0}% of objects within {:.3} ground units",
        100.0 * refl.pass_fraction,
        refl.tolerance
    );
    Ok(())
}
