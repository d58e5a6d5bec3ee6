//! The three benchmark tracks: softness (size), horizontal direction (φ)
//! and vertical direction (θ). Prints each light grid and renders a tiny
//! track 1 with two held-out meshes.
//!
//! `cargo run --release --example benchmark_tracks [out_dir]`

use std::path::PathBuf;

use umbra::forge::{forge_track, generate_track, track_params, ForgeConfig};
use umbra::pipeline::held_out_meshes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("umbra-tracks"));
    let meshes = held_out_meshes(80, 0);
    for (track, n) in [(1, 50), (2, 15), (3, 15)] {
        let grid = track_params(track)?;
        let entries = generate_track(track, &meshes[..n])?;
        let lights: Vec<String> = grid
            .iter()
            .map(|p| format!("({}, {}, {})", p.theta, p.phi, p.size))
            .collect();
        println!(
            "track {track}: {n} meshes x {} lights = {} entries",
            grid.len(),
            entries.len()
        );
        println!("  (θ, φ, s): {}", lights.join(" "));
    }
    let cfg = ForgeConfig {
        image_size: 32,
        grid: 4,
        ..ForgeConfig::default()
    };
    let out = forge_track(1, &meshes[..2], 0, &cfg, &root)?;
    println!("rendered {}", out.manifest_path.display());
    Ok(())
}
