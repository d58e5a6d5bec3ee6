//! Command-line front end. Each subcommand resolves one [`RunConfig`] from
//! defaults, an optional JSON file and flags (in that order), validates it,
//! then either prints its plan (`--dry-run`) or runs. Every output lands
//! under the configured root.
//!
//! Exit codes: 0 on success, [`EXIT_RUNTIME`] when work fails, and
//! [`EXIT_USAGE`] for bad flags, bad configs and missing inputs. Failures
//! print one JSON error record on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::composite::{composite, CompositeInputs};
use crate::denoiser::{
    evaluate, run_ablation, sample, train, AblationConfig, CondMode, Condition, DenoiserConfig,
    Objective, TrainConfig, TrainRunState,
};
use crate::forge::{forge_dataset, forge_track, track_params, DatasetManifest, ForgeConfig, Split};
use crate::image::{load_gray_png, load_mask_png, load_rgb_png, save_rgb_png, save_shadow_png};
use crate::light::{Camera, LightParams};
use crate::mesh::TriangleMesh;
use crate::metrics::{aggregate, MetricSample};
use crate::pipeline::{
    eval_set, held_out_meshes, load_mesh, load_mesh_dir, mesh_files, training_examples,
    training_meshes,
};
use crate::render::{render_triplet, Scene};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const CONFIG_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "UMBRA_THREADS";

/// Everything a subcommand may need. JSON keys and long flag names match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Output root; every file the tool writes lives under it.
    pub root: PathBuf,
    /// Directory of `.obj` files; the primitive corpus is used when unset.
    pub mesh_dir: Option<PathBuf>,
    /// Report directory, relative to the root.
    pub report_dir: PathBuf,
    pub resolution: usize,
    pub grid: usize,
    /// Training images to forge.
    pub count: usize,
    /// Primitive meshes generated for training when no mesh dir is given.
    pub primitives: usize,
    /// Meshes per benchmark track.
    pub track_meshes: [usize; 3],
    pub tracks: Vec<u8>,
    pub objective: Objective,
    pub conditioning: CondMode,
    pub condition_intensity: bool,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub res_blocks: usize,
    pub embed_dim: usize,
    pub checkpoint: Option<PathBuf>,
    pub resume: bool,
    pub sample_steps: usize,
    pub objectives: Vec<Objective>,
    pub conditionings: Vec<CondMode>,
    pub steps: Vec<usize>,
    pub seeds: usize,
    pub margin_steps: f64,
    pub margin_objectives: f64,
    /// Single mesh for `render`.
    pub mesh: Option<PathBuf>,
    pub theta: f64,
    pub phi: f64,
    pub size: f64,
    /// Shadow intensity for `composite` and intensity-conditioned sampling.
    pub intensity: f64,
    pub object: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub shadow: Option<PathBuf>,
    pub background: Option<PathBuf>,
    /// File name of the composite, written under `<root>/composite/`.
    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = DenoiserConfig::default();
        let ablation = AblationConfig::default();
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            root: PathBuf::from("umbra-out"),
            mesh_dir: None,
            report_dir: PathBuf::from("reports"),
            resolution: model.resolution,
            grid: ForgeConfig::default().grid,
            count: 2000,
            primitives: 100,
            track_meshes: [50, 15, 15],
            tracks: vec![1, 2, 3],
            objective: Objective::RectifiedFlow,
            conditioning: CondMode::Scalar,
            condition_intensity: false,
            iterations: ablation.train.iterations,
            batch: ablation.train.batch,
            lr: ablation.train.optimizer.lr,
            base_channels: model.base_channels,
            channel_mults: model.channel_mults.clone(),
            res_blocks: model.res_blocks,
            embed_dim: model.embed_dim,
            checkpoint: None,
            resume: false,
            sample_steps: 1,
            objectives: ablation.objectives.clone(),
            conditionings: ablation.conditionings.clone(),
            steps: ablation.steps.clone(),
            seeds: ablation.seeds,
            margin_steps: ablation.margin_steps,
            margin_objectives: ablation.margin_objectives,
            mesh: None,
            theta: 30.0,
            phi: 0.0,
            size: 2.0,
            intensity: 1.0,
            object: None,
            mask: None,
            shadow: None,
            background: None,
            output: "composite.png".into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "umbra",
    version,
    about = "Soft-shadow rendering, benchmarks and toy denoisers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Render the randomized training set.
    Forge,
    /// Render the three benchmark tracks.
    Tracks,
    /// Render one preview/mask/shadow triplet.
    Render,
    /// Train one denoiser and save a checkpoint.
    Train,
    /// Sample shadow maps for one track from a checkpoint.
    Sample,
    /// Score a checkpoint on the benchmark tracks.
    Eval,
    /// Place an object and its shadow onto a background.
    Composite,
    /// Train and score every objective across the step grid.
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forge => "forge",
            Command::Tracks => "tracks",
            Command::Render => "render",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Composite => "composite",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved plan and exit without touching disk.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, visible_alias = "out")]
    pub root: Option<PathBuf>,
    #[arg(long, global = true, visible_alias = "meshes")]
    pub mesh_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub report_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    #[arg(long, global = true)]
    pub count: Option<usize>,
    #[arg(long, global = true)]
    pub primitives: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub track_meshes: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub tracks: Option<Vec<u8>>,
    #[arg(long, global = true)]
    pub objective: Option<Objective>,
    #[arg(long, global = true)]
    pub conditioning: Option<CondMode>,
    #[arg(long, global = true)]
    pub condition_intensity: Option<bool>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub base_channels: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub channel_mults: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub res_blocks: Option<usize>,
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub resume: Option<bool>,
    #[arg(long, global = true)]
    pub sample_steps: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub objectives: Option<Vec<Objective>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub conditionings: Option<Vec<CondMode>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    #[arg(long, global = true)]
    pub margin_steps: Option<f64>,
    #[arg(long, global = true)]
    pub margin_objectives: Option<f64>,
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub phi: Option<f64>,
    #[arg(long, global = true)]
    pub size: Option<f64>,
    #[arg(long, global = true)]
    pub intensity: Option<f64>,
    #[arg(long, global = true)]
    pub object: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mask: Option<PathBuf>,
    #[arg(long, global = true)]
    pub shadow: Option<PathBuf>,
    #[arg(long, global = true)]
    pub background: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<String>,
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// The machine-readable record printed on stderr.
    pub fn record(&self, command: Option<&str>) -> Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        json!({ "error": { "kind": kind, "command": command, "message": message, "exit_code": self.code() } })
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

macro_rules! overlay {
    ($cfg:ident, $flags:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = v.into(); })*
    };
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(usage(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        overlay!(cfg, flags;
            seed, root, report_dir, resolution, grid, count, primitives, tracks, objective,
            conditioning, condition_intensity, iterations, batch, lr, base_channels,
            channel_mults, res_blocks, embed_dim, resume, sample_steps, objectives,
            conditionings, steps, seeds, margin_steps, margin_objectives, theta, phi, size,
            intensity, output,
        );
        for (slot, flag) in [
            (&mut cfg.mesh_dir, &flags.mesh_dir),
            (&mut cfg.checkpoint, &flags.checkpoint),
            (&mut cfg.mesh, &flags.mesh),
            (&mut cfg.object, &flags.object),
            (&mut cfg.mask, &flags.mask),
            (&mut cfg.shadow, &flags.shadow),
            (&mut cfg.background, &flags.background),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(t) = &flags.track_meshes {
            cfg.track_meshes = t
                .as_slice()
                .try_into()
                .map_err(|_| usage("--track-meshes takes three counts"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(usage(msg)) };
        check(self.resolution >= 4, "resolution must be at least 4")?;
        check(self.grid >= 1, "grid must be at least 1")?;
        check(self.count >= 1, "count must be at least 1")?;
        check(self.primitives >= 1, "primitives must be at least 1")?;
        check(
            !self.tracks.is_empty() && self.tracks.iter().all(|t| (1..=3).contains(t)),
            "tracks must be a non-empty subset of 1,2,3",
        )?;
        check(self.iterations >= 1, "iterations must be at least 1")?;
        check(self.batch >= 1, "batch must be at least 1")?;
        check(self.lr.is_finite() && self.lr > 0.0, "lr must be positive")?;
        check(self.sample_steps >= 1, "sample_steps must be at least 1")?;
        check(
            !self.steps.is_empty() && self.steps.iter().all(|&s| s >= 1),
            "steps must be non-empty and positive",
        )?;
        check(self.seeds >= 1, "seeds must be at least 1")?;
        check(!self.objectives.is_empty(), "objectives must be non-empty")?;
        check(
            !self.conditionings.is_empty(),
            "conditionings must be non-empty",
        )?;
        check(
            self.size.is_finite() && self.size > 0.0,
            "size must be positive",
        )?;
        check(
            self.theta.is_finite() && (0.0..90.0).contains(&self.theta),
            "theta must lie in [0, 90)",
        )?;
        check(self.phi.is_finite(), "phi must be finite")?;
        check(
            self.intensity.is_finite() && self.intensity >= 0.0,
            "intensity must be finite and non-negative",
        )?;
        check(
            !self.output.is_empty()
                && Path::new(&self.output)
                    .file_name()
                    .is_some_and(|n| n == self.output.as_str()),
            "output must be a plain file name",
        )?;
        check(
            self.report_dir.is_relative(),
            "report_dir must be relative to the root",
        )?;
        self.train_config()
            .model
            .validate()
            .map_err(|e| usage(e.to_string()))
    }

    pub fn forge_config(&self) -> ForgeConfig {
        ForgeConfig {
            image_size: self.resolution,
            grid: self.grid,
            workers: threads_from_env().ok().flatten(),
            ..ForgeConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            model: DenoiserConfig {
                resolution: self.resolution,
                base_channels: self.base_channels,
                channel_mults: self.channel_mults.clone(),
                res_blocks: self.res_blocks,
                embed_dim: self.embed_dim,
                objective: self.objective,
                conditioning: self.conditioning,
                intensity: self.condition_intensity,
                ..DenoiserConfig::default()
            },
            optimizer: crate::autodiff::AdamW {
                lr: self.lr,
                ..base.optimizer
            },
            batch: self.batch,
            iterations: self.iterations,
            seed: self.seed,
            ..base
        }
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            train: self.train_config(),
            objectives: self.objectives.clone(),
            conditionings: self.conditionings.clone(),
            steps: self.steps.clone(),
            seeds: self.seeds,
            margin_steps: self.margin_steps,
            margin_objectives: self.margin_objectives,
            ..AblationConfig::default()
        }
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join(&self.report_dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match &self.checkpoint {
            Some(p) => self.root.join(p),
            None => self.root.join("checkpoints").join(format!(
                "{}-{}.ckpt",
                self.objective,
                cond_name(self.conditioning)
            )),
        }
    }

    fn manifest_path(&self, split: Split) -> PathBuf {
        self.root.join(format!("{split}.jsonl"))
    }
}

fn cond_name(c: CondMode) -> &'static str {
    match c {
        CondMode::Scalar => "scalar",
        CondMode::Blob => "blob",
        CondMode::Both => "both",
    }
}

/// Worker cap from the environment; `Ok(None)` when unset.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Parses `args` (program name first), runs, prints, and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.record(None));
            return err.code();
        }
    };
    let name = cli.command.name();
    match execute(&cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            0
        }
        Err(err) => {
            eprintln!("{}", err.record(Some(name)));
            err.code()
        }
    }
}

/// Resolves the configuration and runs one subcommand, returning its
/// summary (or plan, under `--dry-run`).
pub fn execute(cli: &Cli) -> Result<Value, CliError> {
    let cfg = RunConfig::resolve(&cli.flags)?;
    let threads = threads_from_env()?;
    let plan = plan(cli.command, &cfg)?;
    if cli.flags.dry_run {
        return Ok(
            json!({ "command": cli.command.name(), "dry_run": true, "config": cfg, "plan": plan }),
        );
    }
    let body = || match cli.command {
        Command::Forge => cmd_forge(&cfg),
        Command::Tracks => cmd_tracks(&cfg),
        Command::Render => cmd_render(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Sample => cmd_sample(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Composite => cmd_composite(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
    };
    let result = match threads {
        None => body(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(runtime)?
            .install(body),
    }?;
    Ok(json!({ "command": cli.command.name(), "result": result }))
}

fn require<'a>(what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    let p = p
        .as_deref()
        .ok_or_else(|| usage(format!("missing required input --{what}")))?;
    if !p.exists() {
        return Err(usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

fn require_file(what: &str, p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(usage(format!("missing {what} {}", p.display())))
    }
}

fn grid_json(params: &[LightParams]) -> Value {
    json!(params
        .iter()
        .map(|p| [p.theta, p.phi, p.size])
        .collect::<Vec<_>>())
}

/// Counts and grids of a subcommand, computed without writing anything.
pub fn plan(command: Command, cfg: &RunConfig) -> Result<Value, CliError> {
    Ok(match command {
        Command::Forge => {
            let meshes = match &cfg.mesh_dir {
                Some(d) => mesh_files(d).map_err(|e| usage(e.to_string()))?.len(),
                None => cfg.primitives,
            };
            json!({
                "images": cfg.count,
                "meshes": meshes,
                "resolution": cfg.resolution,
                "grid": cfg.grid,
                "theta_range": [0, 45], "phi_range": [0, 360], "size_range": [2, 8],
                "output": cfg.root.join("train"),
            })
        }
        Command::Tracks => {
            let available = match &cfg.mesh_dir {
                Some(d) => Some(mesh_files(d).map_err(|e| usage(e.to_string()))?.len()),
                None => None,
            };
            let mut tracks = Vec::new();
            for &t in &cfg.tracks {
                let grid = track_params(t).map_err(|e| usage(e.to_string()))?;
                let meshes = cfg.track_meshes[t as usize - 1];
                tracks.push(json!({
                    "track": t,
                    "meshes": meshes,
                    "entries": meshes * grid.len(),
                    "grid": grid_json(&grid),
                    "output": cfg.root.join(format!("track{t}")),
                }));
            }
            json!({ "available_meshes": available, "tracks": tracks })
        }
        Command::Render => json!({
            "mesh": cfg.mesh,
            "light": [cfg.theta, cfg.phi, cfg.size],
            "resolution": cfg.resolution,
            "grid": cfg.grid,
            "output": cfg.root.join("render"),
        }),
        Command::Train => json!({
            "train": cfg.train_config(),
            "dataset": cfg.manifest_path(Split::Train),
            "checkpoint": cfg.checkpoint_path(),
        }),
        Command::Sample => json!({
            "checkpoint": cfg.checkpoint_path(),
            "tracks": cfg.tracks,
            "steps": cfg.sample_steps,
            "output": cfg.root.join("samples"),
        }),
        Command::Eval => json!({
            "checkpoint": cfg.checkpoint_path(),
            "tracks": cfg.tracks,
            "steps": cfg.steps,
            "seeds": cfg.seeds,
            "output": cfg.report_path().join("eval"),
        }),
        Command::Composite => json!({
            "inputs": [cfg.object, cfg.mask, cfg.shadow, cfg.background],
            "intensity": cfg.intensity,
            "output": cfg.root.join("composite").join(&cfg.output),
        }),
        Command::Sweep => {
            let a = cfg.ablation_config();
            let runs = a.objectives.len() * a.conditionings.len();
            json!({
                "ablation": a,
                "training_runs": runs,
                "cells": runs * a.steps.len() * cfg.tracks.len() * 4,
                "output": cfg.report_path().join("sweep"),
            })
        }
    })
}

fn training_corpus(cfg: &RunConfig) -> Result<Vec<TriangleMesh>, CliError> {
    match &cfg.mesh_dir {
        Some(d) => {
            if !d.is_dir() {
                return Err(usage(format!("mesh dir {} does not exist", d.display())));
            }
            let meshes = load_mesh_dir(d).map_err(runtime)?;
            if meshes.is_empty() {
                return Err(usage(format!("no .obj files in {}", d.display())));
            }
            Ok(meshes)
        }
        None => Ok(training_meshes(cfg.primitives, cfg.seed)),
    }
}

fn failures_json(out: &crate::forge::ForgeOutput) -> Value {
    json!(out
        .failures
        .iter()
        .map(|f| json!({ "id": f.id, "error": f.error.to_string() }))
        .collect::<Vec<_>>())
}

fn cmd_forge(cfg: &RunConfig) -> Result<Value, CliError> {
    let meshes = training_corpus(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = forge_dataset(&meshes, cfg.count, &mut rng, &cfg.forge_config(), &cfg.root)
        .map_err(runtime)?;
    Ok(json!({
        "manifest": out.manifest_path,
        "entries": out.manifest.entries.len(),
        "failures": failures_json(&out),
    }))
}

fn cmd_tracks(cfg: &RunConfig) -> Result<Value, CliError> {
    let total: usize = cfg.track_meshes.iter().sum();
    let meshes = match &cfg.mesh_dir {
        Some(_) => training_corpus(cfg)?,
        None => held_out_meshes(total, cfg.seed),
    };
    if meshes.len() < total {
        return Err(usage(format!(
            "tracks need {total} meshes ({:?}), found {}",
            cfg.track_meshes,
            meshes.len()
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (k, &n) in cfg.track_meshes.iter().enumerate() {
        let track = k as u8 + 1;
        let these = &meshes[start..start + n];
        start += n;
        if !cfg.tracks.contains(&track) {
            continue;
        }
        let forged =
            forge_track(track, these, cfg.seed, &cfg.forge_config(), &cfg.root).map_err(runtime)?;
        out.push(json!({
            "track": track,
            "manifest": forged.manifest_path,
            "entries": forged.manifest.entries.len(),
            "failures": failures_json(&forged),
        }));
    }
    Ok(json!(out))
}

fn cmd_render(cfg: &RunConfig) -> Result<Value, CliError> {
    let path = require("mesh", &cfg.mesh)?;
    let mesh = load_mesh(path).map_err(runtime)?;
    let id = format!("{}_t{}_p{}_s{}", mesh.name, cfg.theta, cfg.phi, cfg.size);
    let scene = Scene::new(mesh).map_err(runtime)?;
    let camera = Camera::benchmark(cfg.resolution);
    let light = LightParams::new(cfg.theta, cfg.phi, cfg.size);
    let triplet = render_triplet(&scene, &camera, &light, cfg.grid, cfg.seed).map_err(runtime)?;
    let dir = cfg.root.join("render");
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    let paths = triplet.save(&dir, &id, &camera).map_err(runtime)?;
    Ok(json!(paths))
}

fn read_manifest(cfg: &RunConfig, split: Split) -> Result<DatasetManifest, CliError> {
    let path = cfg.manifest_path(split);
    require_file(&format!("{split} manifest"), &path)?;
    DatasetManifest::read(&path).map_err(runtime)
}

fn cmd_train(cfg: &RunConfig) -> Result<Value, CliError> {
    let manifest = read_manifest(cfg, Split::Train)?;
    let data = training_examples(&manifest).map_err(runtime)?;
    let ckpt = cfg.checkpoint_path();
    let mut state = if cfg.resume && ckpt.exists() {
        let s = TrainRunState::load(&ckpt).map_err(runtime)?;
        if s.config.model != cfg.train_config().model {
            return Err(usage("checkpoint model does not match the configuration"));
        }
        s
    } else {
        TrainRunState::new(cfg.train_config()).map_err(runtime)?
    };
    let report_every = (cfg.iterations / 20).max(1) as u64;
    train(&mut state, &data, cfg.iterations as u64, |s| {
        if s.step % report_every == 0 {
            eprintln!(
                "step {} loss {:.5}",
                s.step,
                s.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Ok(())
    })
    .map_err(runtime)?;
    if let Some(dir) = ckpt.parent() {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    state.save(&ckpt).map_err(runtime)?;
    Ok(json!({
        "checkpoint": ckpt,
        "step": state.step,
        "final_loss": state.losses.last(),
        "parameters": state.model.parameter_count(),
    }))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<TrainRunState, CliError> {
    let ckpt = cfg.checkpoint_path();
    require_file("checkpoint", &ckpt)?;
    TrainRunState::load(&ckpt).map_err(runtime)
}

fn track_set(cfg: &RunConfig, track: u8) -> Result<crate::denoiser::EvalSet, CliError> {
    let split = Split::track(track).ok_or_else(|| usage(format!("bad track {track}")))?;
    let manifest = read_manifest(cfg, split)?;
    eval_set(split.as_str(), &manifest).map_err(runtime)
}

fn cmd_sample(cfg: &RunConfig) -> Result<Value, CliError> {
    let state = load_checkpoint(cfg)?;
    let mut written = Vec::new();
    for &track in &cfg.tracks {
        let set = track_set(cfg, track)?;
        let conds: Vec<Condition> = set
            .conds
            .iter()
            .map(|c| c.with_params(c.params.with_intensity(cfg.intensity)))
            .collect();
        let refs: Vec<&Condition> = conds.iter().collect();
        let c = &state.config;
        let outs = sample(
            &state.model,
            &refs,
            cfg.sample_steps,
            c.model.objective,
            c.schedule,
            cfg.seed,
        )
        .map_err(runtime)?;
        let dir = cfg.root.join("samples").join(&set.name);
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        for (i, (o, cond)) in outs.into_iter().zip(&conds).enumerate() {
            let img = crate::image::GrayImage::from_vec(cond.width, cond.height, o);
            let path = dir.join(format!("{i:07}.shadow.png"));
            save_shadow_png(&img, &path).map_err(runtime)?;
        }
        written.push(json!({ "track": track, "dir": dir, "maps": conds.len() }));
    }
    Ok(json!(written))
}

fn cmd_eval(cfg: &RunConfig) -> Result<Value, CliError> {
    let state = load_checkpoint(cfg)?;
    let mut samples = Vec::new();
    for &track in &cfg.tracks {
        let set = track_set(cfg, track)?;
        for &steps in &cfg.steps {
            for seed in 0..cfg.seeds as u64 {
                let vals = evaluate(&state, &set, steps, cfg.seed + seed).map_err(runtime)?;
                samples.extend(vals.into_iter().map(|values| MetricSample {
                    group: format!("{}|{steps}", set.name),
                    seed,
                    values,
                }));
            }
        }
    }
    let report = aggregate(&samples).map_err(runtime)?;
    let dir = cfg.report_path().join("eval");
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    let json_path = dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&report).map_err(runtime)? + "\n";
    std::fs::write(&json_path, text).map_err(runtime)?;
    std::fs::write(dir.join("metrics.csv"), report.to_csv()).map_err(runtime)?;
    Ok(json!({ "report": json_path, "rows": report.rows }))
}

fn cmd_composite(cfg: &RunConfig) -> Result<Value, CliError> {
    let object = load_rgb_png(require("object", &cfg.object)?).map_err(runtime)?;
    let mask = load_mask_png(require("mask", &cfg.mask)?).map_err(runtime)?;
    let shadow = load_gray_png(require("shadow", &cfg.shadow)?).map_err(runtime)?;
    let background = load_rgb_png(require("background", &cfg.background)?).map_err(runtime)?;
    let out = composite(&CompositeInputs {
        object: &object,
        mask: &mask,
        shadow: &shadow,
        background: &background,
        intensity: cfg.intensity,
    })
    .map_err(|e| usage(e.to_string()))?;
    let dir = cfg.root.join("composite");
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    let path = dir.join(&cfg.output);
    save_rgb_png(&out, &path).map_err(runtime)?;
    Ok(json!({ "output": path }))
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Value, CliError> {
    let manifest = read_manifest(cfg, Split::Train)?;
    let data = training_examples(&manifest).map_err(runtime)?;
    let tracks = cfg
        .tracks
        .iter()
        .map(|&t| track_set(cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    let (report, _) = run_ablation(&cfg.ablation_config(), &data, &tracks, |msg| {
        eprintln!("{msg}")
    })
    .map_err(runtime)?;
    let dir = cfg.report_path().join("sweep");
    report.write(&dir).map_err(runtime)?;
    Ok(json!({ "report": dir, "cells": report.cells.len(), "trends": report.trends }))
}
