//! End-to-end plumbing shared by the command line, the examples and the
//! acceptance suite: mesh corpora, dataset and track forging, conversion to
//! training and evaluation sets, and the control and intensity checks on
//! trained models.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AdamW;
use crate::denoiser::{
    phi_reflection_check, sample, softness_check, AblationConfig, CondMode, Condition,
    DenoiserConfig, DenoiserError, EvalSet, Objective, PlaneMap, ReflectionOutcome,
    SoftnessOutcome, TrainConfig, TrainExample, TrainRunState,
};
use crate::forge::{
    forge_dataset, forge_track, load_samples, primitive_corpus, DatasetManifest, ForgeConfig,
    ForgeError, ForgeOutput,
};
use crate::image::{GrayImage, Mask};
use crate::light::Camera;
use crate::mesh::{parse_obj, prepare, MeshError, TriangleMesh, DEFAULT_TARGET_EXTENT};
use crate::metrics::scaled_rmse;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error("{path}: {source}")]
    Mesh {
        path: String,
        #[source]
        source: MeshError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Sizes of everything the acceptance experiments forge and train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub image_size: usize,
    pub grid: usize,
    pub train_images: usize,
    pub train_meshes: usize,
    /// Held-out meshes per track.
    pub track_meshes: [usize; 3],
    pub ablation: AblationConfig,
    /// Sampling steps used by the control and intensity checks.
    pub control_steps: usize,
    pub intensity_levels: Vec<f64>,
    pub seed: u64,
}

impl Profile {
    /// The reduced profile: 32×32, 500 iterations, 3 seeds, halved margins.
    pub fn smoke() -> Self {
        let model = DenoiserConfig {
            resolution: 32,
            base_channels: 16,
            channel_mults: vec![1, 2, 2],
            res_blocks: 1,
            embed_dim: 64,
            ..DenoiserConfig::default()
        };
        let train = TrainConfig {
            model,
            optimizer: AdamW {
                lr: 1e-3,
                ..AdamW::default()
            },
            batch: 16,
            iterations: 500,
            ..TrainConfig::default()
        };
        Profile {
            name: "smoke".into(),
            image_size: 32,
            grid: 8,
            train_images: 500,
            train_meshes: 40,
            track_meshes: [4, 2, 2],
            ablation: AblationConfig {
                train,
                seeds: 3,
                curve_iterations: vec![250, 500],
                curve_steps: 20,
                curve_seeds: 1,
                margin_steps: 0.025,
                margin_objectives: 0.025,
                ..AblationConfig::default()
            },
            control_steps: 20,
            intensity_levels: vec![0.5, 1.0],
            seed: 0,
        }
    }

    /// The full-size profile: 64×64, 2000 images, 5k iterations, 10 seeds.
    pub fn full() -> Self {
        let model = DenoiserConfig {
            resolution: 64,
            ..DenoiserConfig::default()
        };
        let train = TrainConfig {
            model,
            ..TrainConfig::default()
        };
        Profile {
            name: "full".into(),
            image_size: 64,
            grid: 16,
            train_images: 2000,
            train_meshes: 100,
            track_meshes: [50, 15, 15],
            ablation: AblationConfig {
                train,
                ..AblationConfig::default()
            },
            control_steps: 20,
            intensity_levels: vec![0.5, 1.0],
            seed: 0,
        }
    }

    pub fn forge_config(&self) -> ForgeConfig {
        ForgeConfig {
            image_size: self.image_size,
            grid: self.grid,
            ..ForgeConfig::default()
        }
    }
}

/// Seeded primitive corpus for training.
pub fn training_meshes(count: usize, seed: u64) -> Vec<TriangleMesh> {
    primitive_corpus(count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Primitives disjoint from the training corpus, prefixed `heldout_`.
pub fn held_out_meshes(count: usize, seed: u64) -> Vec<TriangleMesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    primitive_corpus(count, &mut rng)
        .into_iter()
        .map(|mut m| {
            m.name = format!("heldout_{}", m.name);
            m
        })
        .collect()
}

/// Reads one OBJ file, named after its stem, normalized and settled.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh, PipelineError> {
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map_or_else(|| "mesh".into(), |s| s.to_string_lossy().into_owned());
    let mesh_err = |source| PipelineError::Mesh {
        path: path.display().to_string(),
        source,
    };
    let parsed = parse_obj(&name, &bytes).map_err(mesh_err)?;
    prepare(parsed.mesh, DEFAULT_TARGET_EXTENT).map_err(mesh_err)
}

/// The `.obj` files directly under `dir`, sorted by file name.
pub fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("obj"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_mesh_dir(dir: &Path) -> Result<Vec<TriangleMesh>, PipelineError> {
    mesh_files(dir)?.iter().map(|p| load_mesh(p)).collect()
}

/// Manifests of one forged workspace.
#[derive(Debug)]
pub struct Forged {
    pub train: ForgeOutput,
    pub tracks: Vec<ForgeOutput>,
}

/// Forges the training set and all three tracks under `root`.
pub fn forge_profile(profile: &Profile, root: &Path) -> Result<Forged, PipelineError> {
    let cfg = profile.forge_config();
    let meshes = training_meshes(profile.train_meshes, profile.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let train = forge_dataset(&meshes, profile.train_images, &mut rng, &cfg, root)?;
    let held = held_out_meshes(profile.track_meshes.iter().sum(), profile.seed);
    let mut tracks = Vec::new();
    let mut rest = held.as_slice();
    for (k, &n) in profile.track_meshes.iter().enumerate() {
        let (these, tail) = rest.split_at(n);
        rest = tail;
        tracks.push(forge_track(k as u8 + 1, these, profile.seed, &cfg, root)?);
    }
    Ok(Forged { train, tracks })
}

pub fn training_examples(manifest: &DatasetManifest) -> Result<Vec<TrainExample>, PipelineError> {
    Ok(load_samples(manifest)?
        .iter()
        .map(TrainExample::from_sample)
        .collect())
}

pub fn eval_set(name: &str, manifest: &DatasetManifest) -> Result<EvalSet, PipelineError> {
    let samples = load_samples(manifest)?;
    Ok(EvalSet {
        name: name.to_string(),
        conds: samples.iter().map(Condition::from_sample).collect(),
        truths: samples.iter().map(|s| s.shadow.clone()).collect(),
        objects: samples.iter().map(|s| s.mesh.clone()).collect(),
    })
}

/// Ground plane seen through the benchmark camera; every track object
/// stands on its origin.
pub fn benchmark_plane(size: usize) -> PlaneMap {
    PlaneMap::ground(&Camera::benchmark(size)).expect("benchmark camera is valid")
}

type Labeled = Vec<(String, f64, GrayImage, Mask)>;

fn predict_set(
    state: &TrainRunState,
    set: &EvalSet,
    steps: usize,
    seed: u64,
) -> Result<Vec<GrayImage>, PipelineError> {
    let refs: Vec<&Condition> = set.conds.iter().collect();
    let c = &state.config;
    let outs = sample(
        &state.model,
        &refs,
        steps,
        c.model.objective,
        c.schedule,
        seed,
    )?;
    Ok(outs
        .into_iter()
        .zip(&set.conds)
        .map(|(o, cond)| GrayImage::from_vec(cond.width, cond.height, o))
        .collect())
}

fn label(set: &EvalSet, maps: Vec<GrayImage>, key: impl Fn(&Condition) -> f64) -> Labeled {
    maps.into_iter()
        .enumerate()
        .map(|(i, m)| {
            let c = &set.conds[i];
            (set.objects[i].clone(), key(c), m, c.mask_image())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub softness: SoftnessOutcome,
    pub reflection: ReflectionOutcome,
    /// The same checks on the ground-truth maps.
    pub softness_truth: SoftnessOutcome,
    pub reflection_truth: ReflectionOutcome,
}

/// Softness on the size track and φ reflection on the azimuth track, for
/// the model's predictions and for the ground truth.
pub fn control_checks(
    state: &TrainRunState,
    size_track: &EvalSet,
    azimuth_track: &EvalSet,
    steps: usize,
    seed: u64,
) -> Result<ControlOutcome, PipelineError> {
    let plane = benchmark_plane(size_track.conds.first().map_or(1, |c| c.width));
    let size = |c: &Condition| c.params.size;
    let phi = |c: &Condition| c.params.phi;
    let soft = label(
        size_track,
        predict_set(state, size_track, steps, seed)?,
        size,
    );
    let refl = label(
        azimuth_track,
        predict_set(state, azimuth_track, steps, seed)?,
        phi,
    );
    let soft_gt = label(size_track, size_track.truths.clone(), size);
    let refl_gt = label(azimuth_track, azimuth_track.truths.clone(), phi);
    Ok(ControlOutcome {
        softness: softness_check(&soft),
        reflection: phi_reflection_check(&refl, &plane),
        softness_truth: softness_check(&soft_gt),
        reflection_truth: phi_reflection_check(&refl_gt, &plane),
    })
}

/// Mean scale-invariant RMSE between the intensity model at `I` and
/// `min(1, I·base)` for each intensity level, over every entry of `sets`.
pub fn intensity_agreement(
    base: &TrainRunState,
    with_intensity: &TrainRunState,
    sets: &[EvalSet],
    levels: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, PipelineError> {
    if !with_intensity.config.model.intensity || base.config.model.intensity {
        return Err(PipelineError::Invalid(
            "need one 3-scalar and one 4-scalar model".into(),
        ));
    }
    let mut out = Vec::new();
    for &level in levels {
        let mut total = 0.0;
        let mut n = 0usize;
        for set in sets {
            let reference = predict_set(base, set, steps, seed)?;
            let lit = EvalSet {
                conds: set
                    .conds
                    .iter()
                    .map(|c| c.with_params(c.params.with_intensity(level)))
                    .collect(),
                ..set.clone()
            };
            let pred = predict_set(with_intensity, &lit, steps, seed)?;
            for (p, r) in pred.iter().zip(&reference) {
                let scaled = r.map(|v| (level * v).min(1.0));
                total +=
                    scaled_rmse(p, &scaled).map_err(|e| PipelineError::Invalid(e.to_string()))?;
                n += 1;
            }
        }
        out.push((level, total / n.max(1) as f64));
    }
    Ok(out)
}

/// Training configuration of the intensity-conditioned rectified-flow model.
pub fn intensity_config(base: &TrainConfig) -> TrainConfig {
    let mut c = base.clone();
    c.model.objective = Objective::RectifiedFlow;
    c.model.conditioning = CondMode::Scalar;
    c.model.intensity = true;
    c
}
