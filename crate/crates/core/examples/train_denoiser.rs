//! Forge a small dataset, train a rectified-flow denoiser, and sample the
//! softness track with 1 and 20 steps. Saves a checkpoint and sampled maps.
//!
//! `cargo run --release --example train_denoiser [out_dir] [iterations]`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbra::autodiff::AdamW;
use umbra::denoiser::{
    evaluate, sample, train, Condition, DenoiserConfig, Objective, TrainConfig, TrainRunState,
};
use umbra::forge::{forge_dataset, forge_track, ForgeConfig};
use umbra::image::{save_shadow_png, GrayImage};
use umbra::pipeline::{eval_set, held_out_meshes, training_examples, training_meshes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("umbra-train"));
    let iterations: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let forge = ForgeConfig {
        image_size: 32,
        grid: 6,
        ..ForgeConfig::default()
    };
    let train_set = forge_dataset(
        &training_meshes(20, 0),
        200,
        &mut ChaCha8Rng::seed_from_u64(0),
        &forge,
        &root,
    )?;
    let track = forge_track(1, &held_out_meshes(3, 0), 0, &forge, &root)?;
    let data = training_examples(&train_set.manifest)?;
    let set = eval_set("track1", &track.manifest)?;

    let config = TrainConfig {
        model: DenoiserConfig {
            resolution: 32,
            base_channels: 16,
            channel_mults: vec![1, 2, 2],
            res_blocks: 1,
            embed_dim: 64,
            objective: Objective::RectifiedFlow,
            ..DenoiserConfig::default()
        },
        optimizer: AdamW {
            lr: 1e-3,
            ..AdamW::default()
        },
        batch: 16,
        iterations,
        ..TrainConfig::default()
    };
    let mut state = TrainRunState::new(config)?;
    println!("{} parameters", state.model.parameter_count());
    train(&mut state, &data, iterations as u64, |s| {
        if s.step % 50 == 0 {
            println!("step {:>5} loss {:.5}", s.step, s.losses.last().unwrap());
        }
        Ok(())
    })?;
    state.save(&root.join("rf.ckpt"))?;

    for steps in [1, 20] {
        let metrics = evaluate(&state, &set, steps, 0)?;
        let iou = metrics.iter().map(|m| m.iou).sum::<f64>() / metrics.len() as f64;
        println!("{steps:>2} steps: mean soft IoU {iou:.4}");
    }
    let conds: Vec<&Condition> = set.conds.iter().collect();
    let maps = sample(
        &state.model,
        &conds,
        1,
        Objective::RectifiedFlow,
        state.config.schedule,
        0,
    )?;
    let out = root.join("samples");
    std::fs::create_dir_all(&out)?;
    for (i, m) in maps.into_iter().enumerate() {
        save_shadow_png(
            &GrayImage::from_vec(32, 32, m),
            &out.join(format!("{i:03}.png")),
        )?;
    }
    println!("checkpoint and samples under {}", root.display());
    Ok(())
}
