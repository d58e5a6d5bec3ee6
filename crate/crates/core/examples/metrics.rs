//! Score predicted shadow maps against a ground truth: soft IoU, RMSE,
//! scale-invariant RMSE and ZNCC, then aggregate over seeds.

use umbra::image::GrayImage;
use umbra::metrics::{aggregate, MetricSample, MetricValues};

/// Disk of radius `r` centered in a 32×32 map with a linear falloff of
/// width `soft`, scaled by `gain`.
fn disk(r: f64, soft: f64, gain: f64) -> GrayImage {
    let mut img = GrayImage::new(32, 32);
    for y in 0..32 {
        for x in 0..32 {
            let d = ((x as f64 - 15.5).powi(2) + (y as f64 - 15.5).powi(2)).sqrt();
            img.set(x, y, gain * ((r + soft - d) / soft).clamp(0.0, 1.0));
        }
    }
    img
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = disk(8.0, 3.0, 1.0);
    let cases = [
        ("exact", disk(8.0, 3.0, 1.0)),
        ("half intensity", disk(8.0, 3.0, 0.5)),
        ("too hard", disk(8.0, 0.5, 1.0)),
        ("too small", disk(5.0, 3.0, 1.0)),
    ];
    println!(
        "{:<16} {:>7} {:>7} {:>7} {:>7}",
        "prediction", "iou", "rmse", "s-rmse", "zncc"
    );
    let mut samples = Vec::new();
    for (seed, (name, pred)) in cases.iter().enumerate() {
        let m = MetricValues::compute(pred, &truth)?;
        println!(
            "{name:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            m.iou, m.rmse, m.s_rmse, m.zncc
        );
        samples.push(MetricSample {
            group: "all".into(),
            seed: seed as u64,
            values: m,
        });
    }
    print!("{}", aggregate(&samples)?.to_csv());
    Ok(())
}
