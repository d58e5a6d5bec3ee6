//! Toy conditional shadow denoiser: schedules, objectives, light
//! embeddings, a small U-Net, training, sampling and the ablation harness.
//!
//! Everything works in pixel space on single-channel shadow maps in [0,1].

mod ablation;
mod control;
mod sample;
mod train;
mod unet;

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, CheckpointError};
use crate::forge::Sample as DataSample;
use crate::image::{GrayImage, Mask, RgbImage};
use crate::light::{blob_map, LightParams};

pub use ablation::{
    evaluate, run_ablation, AblationConfig, AblationReport, Cell, CurvePoint, EvalSet,
    ReferenceRow, ReportHeader, TrendCheck, PAPER_RF_ONE_STEP_IOU,
};
pub use control::{
    phi_reflection_check, shadow_centroid, softness_check, PlaneMap, ReflectionOutcome,
    SoftnessOutcome, BOUNDARY_THRESHOLD, REFLECTION_TOLERANCE,
};
pub use sample::{sample, sample_noise, sample_one, sampling_grid, Denoise, T_MAX};
pub use train::{train, train_step, TrainConfig, TrainExample, TrainRunState};
pub use unet::{DenoiserConfig, UNet};

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding dimension must be even, got {0}")]
    OddEmbedding(usize),
    #[error("unknown objective {0:?}")]
    UnknownObjective(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Training target and matching sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Eps,
    Sample,
    V,
    RectifiedFlow,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Eps,
        Objective::Sample,
        Objective::V,
        Objective::RectifiedFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Eps => "eps",
            Objective::Sample => "sample",
            Objective::V => "v",
            Objective::RectifiedFlow => "rf",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = DenoiserError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eps" | "epsilon" => Ok(Objective::Eps),
            "sample" | "x0" => Ok(Objective::Sample),
            "v" => Ok(Objective::V),
            "rf" | "rectified-flow" | "flow" => Ok(Objective::RectifiedFlow),
            other => Err(DenoiserError::UnknownObjective(other.to_string())),
        }
    }
}

/// Coefficients `α(t)`, `σ(t)` on `t ∈ [0,1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// `α = cos(πt/2)`, `σ = sin(πt/2)`; variance preserving.
    #[default]
    Cosine,
    /// `α = 1 − t`, `σ = t`.
    Linear,
}

impl Schedule {
    pub fn alpha(self, t: f64) -> f64 {
        match self {
            Schedule::Cosine => {
                if t >= 1.0 {
                    0.0
                } else {
                    (FRAC_PI_2 * t).cos()
                }
            }
            Schedule::Linear => 1.0 - t,
        }
    }

    pub fn sigma(self, t: f64) -> f64 {
        match self {
            Schedule::Cosine => {
                if t <= 0.0 {
                    0.0
                } else {
                    (FRAC_PI_2 * t).sin()
                }
            }
            Schedule::Linear => t,
        }
    }
}

/// `α(t)·x0 + σ(t)·ε`.
pub fn forward_diffuse(x0: &[f64], eps: &[f64], t: f64, schedule: Schedule) -> Vec<f64> {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    x0.iter().zip(eps).map(|(&x, &e)| a * x + s * e).collect()
}

/// `t·x1 + (1 − t)·x0`.
pub fn rf_interpolate(x0: &[f64], x1: &[f64], t: f64) -> Vec<f64> {
    x0.iter()
        .zip(x1)
        .map(|(&a, &b)| t * b + (1.0 - t) * a)
        .collect()
}

/// Regression target for `objective`; the noise `ε` doubles as the flow
/// endpoint `x1`.
pub fn loss_target(
    objective: Objective,
    x0: &[f64],
    eps: &[f64],
    t: f64,
    schedule: Schedule,
) -> Vec<f64> {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    match objective {
        Objective::Eps => eps.to_vec(),
        Objective::Sample => x0.to_vec(),
        Objective::V => x0.iter().zip(eps).map(|(&x, &e)| a * e - s * x).collect(),
        Objective::RectifiedFlow => x0.iter().zip(eps).map(|(&x, &e)| e - x).collect(),
    }
}

/// Noisy input the network sees at time `t` for `objective`.
pub fn noisy_input(
    objective: Objective,
    x0: &[f64],
    eps: &[f64],
    t: f64,
    schedule: Schedule,
) -> Vec<f64> {
    match objective {
        Objective::RectifiedFlow => rf_interpolate(x0, eps, t),
        _ => forward_diffuse(x0, eps, t, schedule),
    }
}

/// Recovers `(x̂0, ε̂)` from a diffusion model output at `(x_t, t)`.
/// `α(t)` and `σ(t)` must be non-zero where the formula divides by them.
pub fn reconstruct(
    objective: Objective,
    out: &[f64],
    xt: &[f64],
    t: f64,
    schedule: Schedule,
) -> (Vec<f64>, Vec<f64>) {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    match objective {
        Objective::Eps => {
            let x0 = xt.iter().zip(out).map(|(&x, &e)| (x - s * e) / a).collect();
            (x0, out.to_vec())
        }
        Objective::Sample => {
            let eps = xt.iter().zip(out).map(|(&x, &p)| (x - a * p) / s).collect();
            (out.to_vec(), eps)
        }
        Objective::V => {
            let x0 = xt.iter().zip(out).map(|(&x, &v)| a * x - s * v).collect();
            let eps = xt.iter().zip(out).map(|(&x, &v)| s * x + a * v).collect();
            (x0, eps)
        }
        Objective::RectifiedFlow => {
            // x_t = t·ε + (1 − t)·x0 and v = ε − x0.
            let x0 = xt.iter().zip(out).map(|(&x, &v)| x - t * v).collect();
            let eps = xt
                .iter()
                .zip(out)
                .map(|(&x, &v)| x + (1.0 - t) * v)
                .collect();
            (x0, eps)
        }
    }
}

/// Frequency ladder for [`sinusoidal_embed`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingForm {
    /// `ω_i = 10000^(−i/(h−1))` for `h = d/2`.
    #[default]
    Standard,
    /// `ω_i = 2^(−i(i−1)/(h(h−1))·ln 10000)`, a quadratic exponent.
    Printed,
}

fn frequency(form: EmbeddingForm, i: usize, half: usize) -> f64 {
    if half < 2 {
        return 1.0;
    }
    let (i, h) = (i as f64, half as f64);
    match form {
        EmbeddingForm::Standard => 10000f64.powf(-i / (h - 1.0)),
        EmbeddingForm::Printed => 2f64.powf(-i * (i - 1.0) / (h * (h - 1.0)) * 10000f64.ln()),
    }
}

/// `[cos(ω_i·v)]_i ++ [sin(ω_i·v)]_i`, length `d`.
pub fn sinusoidal_embed(
    value: f64,
    d: usize,
    form: EmbeddingForm,
) -> Result<Vec<f64>, DenoiserError> {
    if d % 2 == 1 || d == 0 {
        return Err(DenoiserError::OddEmbedding(d));
    }
    let half = d / 2;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let (s, c) = (frequency(form, i, half) * value).sin_cos();
        out[i] = c;
        out[half + i] = s;
    }
    Ok(out)
}

/// Network time input: the timestep is scaled to [0,1000] before embedding.
pub const TIME_SCALE: f64 = 1000.0;

/// Per-scalar embeddings before the learned projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector {
    /// `[e(θ), e(φ), e(s)]`, plus `e(I)` when intensity is conditioned.
    pub scalars: Vec<f64>,
    /// `e(1000·t)`.
    pub timestep: Vec<f64>,
}

/// Raw light scalars (degrees, size, intensity) are embedded unchanged.
pub fn build_condition_vector(
    p: &LightParams,
    t: f64,
    d: usize,
    with_intensity: bool,
    form: EmbeddingForm,
) -> Result<ConditionVector, DenoiserError> {
    let mut scalars = Vec::with_capacity(4 * d);
    let mut values = vec![p.theta, p.phi, p.size];
    if with_intensity {
        values.push(p.intensity);
    }
    for v in values {
        scalars.extend(sinusoidal_embed(v, d, form)?);
    }
    Ok(ConditionVector {
        scalars,
        timestep: sinusoidal_embed(TIME_SCALE * t, d, form)?,
    })
}

/// How light parameters reach the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CondMode {
    /// Sinusoidal scalar embeddings added to the timestep embedding.
    #[default]
    Scalar,
    /// A Gaussian blob image concatenated as an input channel.
    Blob,
    Both,
}

impl CondMode {
    pub fn uses_scalars(self) -> bool {
        matches!(self, CondMode::Scalar | CondMode::Both)
    }

    pub fn uses_blob(self) -> bool {
        matches!(self, CondMode::Blob | CondMode::Both)
    }
}

impl FromStr for CondMode {
    type Err = DenoiserError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scalar" | "scalar-embedding" => Ok(CondMode::Scalar),
            "blob" | "blob-map" => Ok(CondMode::Blob),
            "both" => Ok(CondMode::Both),
            other => Err(DenoiserError::Config(format!(
                "unknown conditioning mode {other:?}"
            ))),
        }
    }
}

/// Per-image network inputs besides the noisy shadow.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub width: usize,
    pub height: usize,
    /// 0/1 object mask.
    pub mask: Vec<f32>,
    /// Preview luminance inside the mask, 0 elsewhere.
    pub gray: Vec<f32>,
    pub params: LightParams,
}

impl Condition {
    /// The object gray channel keeps only object pixels, so the rendered
    /// ground shadow in the preview never leaks into the input.
    pub fn new(mask: &Mask, preview: &RgbImage, params: LightParams) -> Self {
        let lum = preview.luminance();
        Condition {
            width: mask.width,
            height: mask.height,
            mask: mask.data.iter().map(|&m| f32::from(m)).collect(),
            gray: mask
                .data
                .iter()
                .zip(&lum.data)
                .map(|(&m, &l)| if m != 0 { l as f32 } else { 0.0 })
                .collect(),
            params,
        }
    }

    pub fn from_sample(s: &DataSample) -> Self {
        Condition::new(&s.mask, &s.preview, s.params)
    }

    pub fn with_params(&self, params: LightParams) -> Self {
        Condition {
            params,
            ..self.clone()
        }
    }

    pub fn blob(&self) -> Vec<f32> {
        blob_map(&self.params, self.width, self.height)
            .data
            .iter()
            .map(|&v| v as f32)
            .collect()
    }

    pub fn mask_image(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.mask.iter().map(|&m| u8::from(m > 0.5)).collect(),
        }
    }
}

/// Gray map view of a flat pixel vector.
pub fn to_image(width: usize, height: usize, data: &[f64]) -> GrayImage {
    GrayImage::from_vec(width, height, data.to_vec())
}

#[cfg(test)]
mod tests;
