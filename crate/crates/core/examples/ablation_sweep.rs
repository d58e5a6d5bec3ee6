//! Objective by step-count ablation on a forged primitive dataset, with the
//! two trend checks and a report directory of JSON and CSV curves.
//!
//! `cargo run --release --example ablation_sweep [smoke|full] [out_dir]`
//!
//! The smoke profile takes roughly ten minutes on one core; the full profile
//! takes hours.

use std::path::PathBuf;
use std::time::Instant;

use umbra::denoiser::run_ablation;
use umbra::pipeline::{eval_set, forge_profile, training_examples, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let profile = match args.next().as_deref() {
        None | Some("smoke") => Profile::smoke(),
        Some("full") => Profile::full(),
        Some(other) => return Err(format!("unknown profile {other:?}").into()),
    };
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("umbra-{}", profile.name)));
    let start = Instant::now();
    let forged = forge_profile(&profile, &root)?;
    let data = training_examples(&forged.train.manifest)?;
    let tracks = forged
        .tracks
        .iter()
        .enumerate()
        .map(|(k, t)| eval_set(&format!("track{}", k + 1), &t.manifest))
        .collect::<Result<Vec<_>, _>>()?;
    let (report, _) = run_ablation(&profile.ablation, &data, &tracks, |msg| {
        eprintln!("{:>6.0}s {msg}", start.elapsed().as_secs_f64())
    })?;
    report.write(&root.join("report"))?;
    println!("{:<8} {:>5} {:>8} {:>8}", "series", "steps", "iou", "std");
    for p in &report.steps_curve {
        println!("{:<8} {:>5} {:>8.4} {:>8.4}", p.series, p.x, p.mean, p.std);
    }
    for t in &report.trends {
        println!(
            "{}: {:.4} vs {:.4} -> {}",
            t.name,
            t.lhs,
            t.rhs,
            if t.passed { "holds" } else { "does not hold" }
        );
    }
    println!("report in {}", root.join("report").display());
    Ok(())
}
