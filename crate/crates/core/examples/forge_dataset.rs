//! Forge a small randomized training set from the primitive corpus and
//! read it back through the manifest.
//!
//! `cargo run --release --example forge_dataset [out_dir]`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbra::forge::{forge_dataset, load_samples, ForgeConfig};
use umbra::pipeline::training_meshes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("umbra-forge"));
    let meshes = training_meshes(6, 0);
    let cfg = ForgeConfig {
        image_size: 32,
        grid: 6,
        ..ForgeConfig::default()
    };
    let out = forge_dataset(&meshes, 24, &mut ChaCha8Rng::seed_from_u64(0), &cfg, &root)?;
    println!(
        "{} entries in {} ({} failures)",
        out.manifest.entries.len(),
        out.manifest_path.display(),
        out.failures.len()
    );
    for s in load_samples(&out.manifest)?.iter().take(5) {
        let p = s.params;
        println!(
            "{:<18} θ={:>2} φ={:>3} s={} shadow mass {:.1}, mask {} px",
            s.mesh,
            p.theta,
            p.phi,
            p.size,
            s.shadow.data.iter().sum::<f64>(),
            s.mask.count()
        );
    }
    Ok(())
}
