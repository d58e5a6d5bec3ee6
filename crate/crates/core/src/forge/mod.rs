//! Randomized training data and the fixed benchmark tracks.

mod manifest;
mod primitives;

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{self, GrayImage, ImageError, Mask, RgbImage};
use crate::light::{Camera, LightParams, DEFAULT_IMAGE_SIZE};
use crate::mesh::{rotate_z, TriangleMesh};
use crate::render::{render_triplet, with_workers, RenderError, Scene, DEFAULT_GRID};

pub use manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_VERSION};
pub use primitives::{
    box_mesh, cone_mesh, cylinder_mesh, make_primitive_mesh, primitive_corpus, torus_mesh,
    PrimitiveKind, CONE_SEGMENTS, CYLINDER_SEGMENTS,
};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("track id must be 1, 2 or 3, got {0}")]
    InvalidTrack(u8),
    #[error("no meshes supplied")]
    NoMeshes,
    #[error("count must be at least 1")]
    EmptyCount,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl ForgeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub const THETA_RANGE: (u32, u32) = (0, 45);
pub const PHI_RANGE: (u32, u32) = (0, 360);
pub const SIZE_RANGE: (u32, u32) = (2, 8);

/// Integer θ, φ and s drawn uniformly from the training intervals; φ = 360
/// is kept even though it aliases 0.
pub fn sample_training_params<R: Rng + ?Sized>(rng: &mut R) -> LightParams {
    let theta = rng.random_range(THETA_RANGE.0..=THETA_RANGE.1);
    let phi = rng.random_range(PHI_RANGE.0..=PHI_RANGE.1);
    let size = rng.random_range(SIZE_RANGE.0..=SIZE_RANGE.1);
    LightParams::new(theta as f64, phi as f64, size as f64)
}

/// Light grid of one benchmark track, in the order it is applied per mesh.
pub fn track_params(track: u8) -> Result<Vec<LightParams>, ForgeError> {
    Ok(match track {
        1 => [2.0, 4.0, 8.0]
            .iter()
            .map(|&s| LightParams::new(30.0, 0.0, s))
            .collect(),
        2 => (0..18)
            .map(|k| LightParams::new(35.0, 20.0 * k as f64, 2.0))
            .collect(),
        3 => (1..=9)
            .map(|k| LightParams::new(5.0 * k as f64, 0.0, 2.0))
            .collect(),
        other => return Err(ForgeError::InvalidTrack(other)),
    })
}

/// Every (mesh, light) pair of a track, mesh-major.
pub fn generate_track(
    track: u8,
    meshes: &[TriangleMesh],
) -> Result<Vec<(&TriangleMesh, LightParams)>, ForgeError> {
    let params = track_params(track)?;
    if meshes.is_empty() {
        return Err(ForgeError::NoMeshes);
    }
    Ok(meshes
        .iter()
        .flat_map(|m| params.iter().map(move |p| (m, *p)))
        .collect())
}

/// Pixelwise `min(1, I·v)`.
pub fn intensity_augment(shadow: &GrayImage, intensity: f64) -> GrayImage {
    shadow.map(|v| (intensity * v).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeConfig {
    pub image_size: usize,
    pub grid: usize,
    /// Camera distance range along −y for training renders.
    pub dolly: (f64, f64),
    pub workers: Option<usize>,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            image_size: DEFAULT_IMAGE_SIZE,
            grid: DEFAULT_GRID,
            dolly: (5.0, 9.0),
            workers: None,
        }
    }
}

#[derive(Debug)]
pub struct ForgeFailure {
    pub id: String,
    pub error: ForgeError,
}

#[derive(Debug)]
pub struct ForgeOutput {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub failures: Vec<ForgeFailure>,
}

/// Everything needed to render one entry, fixed before any rendering starts
/// so the output does not depend on scheduling.
struct Job<'a> {
    id: String,
    mesh: &'a TriangleMesh,
    params: LightParams,
    rotation: f64,
    camera: Camera,
    seed: u64,
}

fn entry_id(index: usize) -> String {
    format!("{index:07}")
}

fn run_jobs(
    root: &Path,
    split: Split,
    jobs: Vec<Job<'_>>,
    cfg: &ForgeConfig,
) -> Result<ForgeOutput, ForgeError> {
    let dir = root.join(split.as_str());
    std::fs::create_dir_all(&dir).map_err(|e| ForgeError::io(&dir, e))?;
    let results: Vec<Result<ManifestEntry, ForgeFailure>> = with_workers(cfg.workers, || {
        jobs.par_iter()
            .map(|job| {
                render_job(&dir, split, job, cfg.grid).map_err(|error| ForgeFailure {
                    id: job.id.clone(),
                    error,
                })
            })
            .collect()
    })?;
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        entries: Vec::new(),
    };
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => manifest.entries.push(e),
            Err(f) => failures.push(f),
        }
    }
    let manifest_path = root.join(format!("{split}.jsonl"));
    manifest.write(&manifest_path)?;
    Ok(ForgeOutput {
        manifest,
        manifest_path,
        failures,
    })
}

fn render_job(
    dir: &Path,
    split: Split,
    job: &Job<'_>,
    grid: usize,
) -> Result<ManifestEntry, ForgeError> {
    let mesh = if job.rotation == 0.0 {
        job.mesh.clone()
    } else {
        rotate_z(job.mesh.clone(), job.rotation)
    };
    let scene = Scene::new(mesh)?;
    let triplet = render_triplet(&scene, &job.camera, &job.params, grid, job.seed)?;
    triplet.save(dir, &job.id, &job.camera)?;
    let rel = |suffix: &str| PathBuf::from(split.as_str()).join(format!("{}{suffix}", job.id));
    Ok(ManifestEntry {
        version: MANIFEST_VERSION,
        id: job.id.clone(),
        split,
        mesh: job.mesh.name.clone(),
        params: job.params,
        seed: job.seed,
        rotation: job.rotation,
        camera: job.camera,
        preview: rel(".preview.png"),
        mask: rel(".mask.png"),
        shadow: rel(".shadow.png"),
        meta: rel(".json"),
    })
}

/// Renders `count` randomized training triplets under `<root>/train/` and
/// writes `<root>/train.jsonl`. Entries that fail are skipped and reported.
pub fn forge_dataset<R: Rng + ?Sized>(
    meshes: &[TriangleMesh],
    count: usize,
    rng: &mut R,
    cfg: &ForgeConfig,
    root: &Path,
) -> Result<ForgeOutput, ForgeError> {
    if count == 0 {
        return Err(ForgeError::EmptyCount);
    }
    if meshes.is_empty() {
        return Err(ForgeError::NoMeshes);
    }
    let jobs = (0..count)
        .map(|i| {
            let mesh = &meshes[rng.random_range(0..meshes.len())];
            let rotation = rng.random_range(0.0..360.0);
            let distance = rng.random_range(cfg.dolly.0..=cfg.dolly.1);
            let params = sample_training_params(rng);
            Job {
                id: entry_id(i),
                mesh,
                params,
                rotation,
                camera: Camera::dolly(distance, cfg.image_size),
                seed: rng.random(),
            }
        })
        .collect();
    run_jobs(root, Split::Train, jobs, cfg)
}

/// Renders a benchmark track with the fixed benchmark camera and shadow seed.
pub fn forge_track(
    track: u8,
    meshes: &[TriangleMesh],
    seed: u64,
    cfg: &ForgeConfig,
    root: &Path,
) -> Result<ForgeOutput, ForgeError> {
    let split = Split::track(track).ok_or(ForgeError::InvalidTrack(track))?;
    let camera = Camera::benchmark(cfg.image_size);
    let jobs = generate_track(track, meshes)?
        .into_iter()
        .enumerate()
        .map(|(i, (mesh, params))| Job {
            id: entry_id(i),
            mesh,
            params,
            rotation: 0.0,
            camera,
            seed,
        })
        .collect();
    run_jobs(root, split, jobs, cfg)
}

/// One decoded dataset entry.
#[derive(Clone, Debug)]
pub struct Sample {
    pub preview: RgbImage,
    pub mask: Mask,
    pub shadow: GrayImage,
    pub params: LightParams,
    pub mesh: String,
}

pub fn load_sample(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
) -> Result<Sample, ForgeError> {
    Ok(Sample {
        preview: image::load_rgb_png(&manifest.resolve(&entry.preview))?,
        mask: image::load_mask_png(&manifest.resolve(&entry.mask))?,
        shadow: image::load_gray_png(&manifest.resolve(&entry.shadow))?,
        params: entry.params,
        mesh: entry.mesh.clone(),
    })
}

pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>, ForgeError> {
    manifest
        .entries
        .par_iter()
        .map(|e| load_sample(manifest, e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Vec<TriangleMesh> {
        primitive_corpus(n, &mut ChaCha8Rng::seed_from_u64(11))
    }

    #[test]
    fn training_draws_stay_in_range_and_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 9];
        for _ in 0..10_000 {
            let p = sample_training_params(&mut rng);
            assert!(
                (0.0..=45.0).contains(&p.theta)
                    && (0.0..=360.0).contains(&p.phi)
                    && (2.0..=8.0).contains(&p.size)
            );
            assert_eq!(p.theta.fract() + p.phi.fract() + p.size.fract(), 0.0);
            assert_eq!(p.intensity, 1.0);
            counts[p.size as usize] += 1;
        }
        for c in &counts[2..=8] {
            assert!((*c as f64 / 10_000.0 - 1.0 / 7.0).abs() < 0.02);
        }
    }

    #[test]
    fn training_draws_are_seeded() {
        let a: Vec<_> = (0..50)
            .map({
                let mut r = ChaCha8Rng::seed_from_u64(8);
                move |_| sample_training_params(&mut r)
            })
            .collect();
        let b: Vec<_> = (0..50)
            .map({
                let mut r = ChaCha8Rng::seed_from_u64(8);
                move |_| sample_training_params(&mut r)
            })
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn track_sizes() {
        assert_eq!(generate_track(1, &corpus(50)).unwrap().len(), 150);
        assert_eq!(generate_track(2, &corpus(15)).unwrap().len(), 270);
        assert_eq!(generate_track(3, &corpus(15)).unwrap().len(), 135);
        assert!(matches!(
            generate_track(4, &corpus(1)),
            Err(ForgeError::InvalidTrack(4))
        ));
        assert!(matches!(generate_track(1, &[]), Err(ForgeError::NoMeshes)));
    }

    #[test]
    fn track_grids() {
        let meshes = corpus(2);
        for (_, p) in generate_track(1, &meshes).unwrap() {
            assert!(p.theta == 30.0 && p.phi == 0.0 && [2.0, 4.0, 8.0].contains(&p.size));
        }
        let phis: HashSet<u64> = generate_track(2, &meshes)
            .unwrap()
            .iter()
            .map(|(_, p)| p.phi as u64)
            .collect();
        assert_eq!(phis, (0..18).map(|k| 20 * k).collect());
        let thetas: Vec<f64> = generate_track(3, &meshes[..1])
            .unwrap()
            .iter()
            .map(|(_, p)| p.theta)
            .collect();
        assert_eq!(
            thetas,
            vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0]
        );
    }

    #[test]
    fn track_is_pure() {
        let meshes = corpus(3);
        let a: Vec<_> = generate_track(2, &meshes)
            .unwrap()
            .into_iter()
            .map(|(m, p)| (m.name.clone(), p))
            .collect();
        let b: Vec<_> = generate_track(2, &meshes)
            .unwrap()
            .into_iter()
            .map(|(m, p)| (m.name.clone(), p))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn intensity_cases() {
        let g = GrayImage::from_vec(3, 1, vec![0.8, 0.9, 0.25]);
        assert_eq!(intensity_augment(&g, 1.0), g);
        assert!((intensity_augment(&g, 0.5).data[0] - 0.4).abs() < 1e-15);
        assert_eq!(intensity_augment(&g, 1.9).data[1], 1.0);
    }

    #[test]
    fn entry_ids_are_distinct() {
        let ids: HashSet<String> = (0..100_000).map(entry_id).collect();
        assert_eq!(ids.len(), 100_000);
    }

    fn small_cfg() -> ForgeConfig {
        ForgeConfig {
            image_size: 16,
            grid: 2,
            ..ForgeConfig::default()
        }
    }

    #[test]
    fn forge_writes_manifest_and_files_deterministically() {
        let meshes = corpus(3);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut outs = Vec::new();
        for d in &dirs {
            let out = forge_dataset(
                &meshes,
                10,
                &mut ChaCha8Rng::seed_from_u64(5),
                &small_cfg(),
                d.path(),
            )
            .unwrap();
            assert!(out.failures.is_empty());
            assert_eq!(out.manifest.entries.len(), 10);
            outs.push(out);
        }
        let read = |p: &Path| std::fs::read(p).unwrap();
        assert_eq!(read(&outs[0].manifest_path), read(&outs[1].manifest_path));
        for (a, b) in outs[0]
            .manifest
            .entries
            .iter()
            .zip(&outs[1].manifest.entries)
        {
            for (fa, fb) in a.files().iter().zip(b.files()) {
                assert_eq!(
                    read(&outs[0].manifest.resolve(fa)),
                    read(&outs[1].manifest.resolve(fb))
                );
            }
            let p = a.params;
            assert!(p.theta <= 45.0 && p.phi <= 360.0 && (2.0..=8.0).contains(&p.size));
        }

        let back = DatasetManifest::read(&outs[0].manifest_path).unwrap();
        assert_eq!(back.entries, outs[0].manifest.entries);
        assert_eq!(
            back.to_jsonl(),
            String::from_utf8(read(&outs[0].manifest_path)).unwrap()
        );

        let samples = load_samples(&back).unwrap();
        assert_eq!(samples[0].shadow.shape(), (16, 16));
    }

    #[test]
    fn missing_file_is_reported() {
        let d = tempfile::tempdir().unwrap();
        let out = forge_dataset(
            &corpus(1),
            1,
            &mut ChaCha8Rng::seed_from_u64(1),
            &small_cfg(),
            d.path(),
        )
        .unwrap();
        std::fs::remove_file(out.manifest.resolve(&out.manifest.entries[0].mask)).unwrap();
        assert!(matches!(
            DatasetManifest::read(&out.manifest_path),
            Err(ForgeError::MissingFile(_))
        ));
    }

    #[test]
    fn render_failures_are_collected() {
        let d = tempfile::tempdir().unwrap();
        let meshes = vec![TriangleMesh::new("void", vec![], vec![])];
        let out = forge_dataset(
            &meshes,
            3,
            &mut ChaCha8Rng::seed_from_u64(1),
            &small_cfg(),
            d.path(),
        )
        .unwrap();
        assert_eq!(out.failures.len(), 3);
        assert!(out.manifest.entries.is_empty());
        assert!(out.manifest_path.is_file());
    }

    #[test]
    fn track_render_layout() {
        let d = tempfile::tempdir().unwrap();
        let out = forge_track(3, &corpus(1), 0, &small_cfg(), d.path()).unwrap();
        assert_eq!(out.manifest.entries.len(), 9);
        assert!(d.path().join("track3/0000008.shadow.png").is_file());
        assert!(d.path().join("track3.jsonl").is_file());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn manifest_jsonl_round_trip(theta in 0u32..46, phi in 0u32..361, size in 2u32..9, seed in any::<u64>(), rot in 0.0f64..360.0) {
            let entry = ManifestEntry {
                version: MANIFEST_VERSION,
                id: entry_id(seed as usize % 1000),
                split: Split::Train,
                mesh: "box_000".into(),
                params: LightParams::new(theta as f64, phi as f64, size as f64),
                seed,
                rotation: rot,
                camera: Camera::dolly(5.5, 32),
                preview: "train/a.preview.png".into(),
                mask: "train/a.mask.png".into(),
                shadow: "train/a.shadow.png".into(),
                meta: "train/a.json".into(),
            };
            let m = DatasetManifest { root: PathBuf::new(), entries: vec![entry] };
            let text = m.to_jsonl();
            let parsed: ManifestEntry = serde_json::from_str(text.trim_end()).unwrap();
            let again = DatasetManifest { root: PathBuf::new(), entries: vec![parsed] };
            prop_assert_eq!(again.to_jsonl(), text);
        }
    }
}
