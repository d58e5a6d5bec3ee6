//! Soft-shadow physics check: a plate at height 2 under an overhead square
//! light at height 8. The penumbra cast by the plate edge should span
//! s·h/(H − h) on the ground.

use umbra::geom::Vec3;
use umbra::light::{Camera, LightParams};
use umbra::mesh::TriangleMesh;
use umbra::render::{render_shadow_map, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (h, light_height, res) = (2.0, 8.0, 256);
    let plate = TriangleMesh::new(
        "plate",
        vec![
            Vec3::new(-4.0, -20.0, h),
            Vec3::new(0.0, -20.0, h),
            Vec3::new(0.0, 20.0, h),
            Vec3::new(-4.0, 20.0, h),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    let scene = Scene::new(plate)?;
    // Looking straight down from under the plate.
    let camera = Camera::new(
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::ZERO,
        Vec3::Y,
        120.0,
        res,
        res,
    )?;
    let frame = camera.frame()?;
    for s in [2.0, 4.0, 8.0] {
        let map = render_shadow_map(&scene, &camera, &LightParams::new(0.0, 0.0, s), 16, 1)?;
        let mut profile: Vec<(f64, f64)> = (0..res)
            .map(|x| {
                let r = frame.pixel_ray(x, res / 2);
                (r.at(-r.origin.z / r.dir.z).x, map.get(x, res / 2))
            })
            .collect();
        profile.sort_by(|a, b| a.0.total_cmp(&b.0));
        let first_below = |level: f64| profile.iter().find(|p| p.1 < level).map(|p| p.0);
        let (Some(a), Some(b)) = (first_below(0.95), first_below(0.05)) else {
            println!("s = {s}: penumbra leaves the frame");
            continue;
        };
        println!(
            "s = {s}: measured {:.3}, analytic {:.3}",
            (b - a) / 0.9,
            s * h / (light_height - h)
        );
    }
    Ok(())
}
