//! Mean-squared-error training with AdamW. Every random draw of step `k`
//! comes from a generator keyed by `(seed, k)`, so a run resumed from a
//! checkpoint at step `k` continues bit-identically.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{loss_target, noisy_input, Condition, DenoiserConfig, DenoiserError, Schedule, UNet};
use crate::autodiff::{
    adamw_step, load_checkpoint, save_checkpoint, AdamState, AdamW, Checkpoint, Graph, NamedTensor,
    Tensor,
};
use crate::forge::Sample as DataSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: DenoiserConfig,
    pub optimizer: AdamW,
    pub batch: usize,
    pub iterations: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// Range of the intensity augmentation used when the model conditions
    /// on intensity.
    pub intensity_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: DenoiserConfig::default(),
            optimizer: AdamW::default(),
            batch: 16,
            iterations: 5000,
            seed: 0,
            schedule: Schedule::Cosine,
            intensity_range: (0.1, 1.9),
        }
    }
}

/// A ground-truth shadow with its conditioning.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub cond: Condition,
    pub shadow: Vec<f32>,
}

impl TrainExample {
    pub fn from_sample(s: &DataSample) -> Self {
        TrainExample {
            cond: Condition::from_sample(s),
            shadow: s.shadow.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainRunState {
    pub config: TrainConfig,
    pub model: UNet,
    pub adam: AdamState<f32>,
    pub step: u64,
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    step: u64,
    adam_step: u64,
    losses: Vec<f64>,
}

const STREAM_BATCH: u64 = 0;
const STREAM_NOISE: u64 = 1;

fn step_rng(seed: u64, step: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * step + purpose);
    rng
}

impl TrainRunState {
    pub fn new(config: TrainConfig) -> Result<Self, DenoiserError> {
        if config.batch == 0 {
            return Err(DenoiserError::Config("batch must be at least 1".into()));
        }
        let model = UNet::new(config.model.clone(), config.seed)?;
        let adam = AdamState::new(&model.params);
        Ok(TrainRunState {
            config,
            model,
            adam,
            step: 0,
            losses: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DenoiserError> {
        let mut tensors = self.model.named_tensors("param.");
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for ((name, p), m) in self
                .model
                .param_names()
                .iter()
                .zip(&self.model.params)
                .zip(moments)
            {
                tensors.push(NamedTensor {
                    name: format!("{prefix}{name}"),
                    shape: p.shape.clone(),
                    data: m.clone(),
                });
            }
        }
        let meta = Meta {
            config: self.config.clone(),
            step: self.step,
            adam_step: self.adam.step,
            losses: self.losses.clone(),
        };
        let ckpt = Checkpoint {
            tensors,
            meta: serde_json::to_value(meta).expect("meta serializes"),
        };
        Ok(save_checkpoint(path, &ckpt)?)
    }

    pub fn load(path: &Path) -> Result<Self, DenoiserError> {
        let ckpt = load_checkpoint(path)?;
        let meta: Meta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| DenoiserError::Config(format!("checkpoint meta: {e}")))?;
        let mut state = TrainRunState::new(meta.config)?;
        state.model.load_named("param.", &ckpt.tensors)?;
        for (prefix, k) in [("adam.m.", 0), ("adam.v.", 1)] {
            for (i, name) in state.model.param_names().iter().enumerate() {
                let key = format!("{prefix}{name}");
                let t = ckpt
                    .get(&key)
                    .ok_or_else(|| DenoiserError::Config(format!("checkpoint lacks {key}")))?;
                let slot = if k == 0 {
                    &mut state.adam.m[i]
                } else {
                    &mut state.adam.v[i]
                };
                if t.data.len() != slot.len() {
                    return Err(DenoiserError::Config(format!("{key} has the wrong size")));
                }
                slot.clone_from(&t.data);
            }
        }
        state.adam.step = meta.adam_step;
        state.step = meta.step;
        state.losses = meta.losses;
        Ok(state)
    }
}

/// One optimizer step on `batch`; returns the batch loss.
///
/// Per example it draws `t ~ U[0,1)` and standard normal noise, and, for
/// intensity-conditioned models, an intensity `I` that scales the target
/// shadow to `min(1, I·shadow)`.
pub fn train_step(
    state: &mut TrainRunState,
    batch: &[&TrainExample],
) -> Result<f64, DenoiserError> {
    if batch.is_empty() {
        return Err(DenoiserError::MissingData("empty batch".into()));
    }
    let cfg = &state.config;
    let objective = cfg.model.objective;
    let hw = cfg.model.resolution * cfg.model.resolution;
    let mut rng = step_rng(cfg.seed, state.step, STREAM_NOISE);
    let mut xt = Vec::with_capacity(batch.len() * hw);
    let mut target = Vec::with_capacity(batch.len() * hw);
    let mut ts = Vec::with_capacity(batch.len());
    let mut conds = Vec::with_capacity(batch.len());
    for ex in batch {
        if ex.shadow.len() != hw {
            return Err(DenoiserError::Config(format!(
                "example has {} pixels, model expects {hw}",
                ex.shadow.len()
            )));
        }
        let t: f64 = rng.random();
        let eps: Vec<f64> = (0..hw).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut cond = ex.cond.clone();
        let mut x0: Vec<f64> = ex.shadow.iter().map(|&v| v as f64).collect();
        if cfg.model.intensity {
            let i = rng.random_range(cfg.intensity_range.0..=cfg.intensity_range.1);
            x0.iter_mut().for_each(|v| *v = (i * *v).min(1.0));
            cond.params.intensity = i;
        }
        xt.extend(noisy_input(objective, &x0, &eps, t, cfg.schedule));
        target.extend(loss_target(objective, &x0, &eps, t, cfg.schedule));
        ts.push(t);
        conds.push(cond);
    }
    let cond_refs: Vec<&Condition> = conds.iter().collect();
    let mut g = Graph::<f32>::new();
    let p = state.model.bind(&mut g, true);
    let (xv, tv, cv) = state.model.inputs(&mut g, &xt, &ts, &cond_refs)?;
    let out = state.model.forward(&mut g, &p, xv, tv, cv)?;
    let r = cfg.model.resolution;
    let tgt = g.input(Tensor::new(
        &[batch.len(), 1, r, r],
        target.iter().map(|&v| v as f32).collect(),
    ));
    let loss_var = g.mse(out, tgt)?;
    let loss = g.value(loss_var)[0] as f64;
    if !loss.is_finite() {
        return Err(DenoiserError::NonFiniteLoss { step: state.step });
    }
    g.backward(loss_var)?;
    let grads: Vec<Vec<f32>> = p
        .iter()
        .zip(&state.model.params)
        .map(|(v, t)| {
            g.grad(*v)
                .map_or_else(|| vec![0.0; t.len()], <[f32]>::to_vec)
        })
        .collect();
    let hp = state.config.optimizer;
    adamw_step(&mut state.model.params, &grads, &mut state.adam, &hp);
    state.step += 1;
    state.losses.push(loss);
    Ok(loss)
}

/// Runs steps until `state.step == until`, drawing each batch uniformly
/// with replacement. `on_step` sees the state after every step.
pub fn train(
    state: &mut TrainRunState,
    data: &[TrainExample],
    until: u64,
    mut on_step: impl FnMut(&TrainRunState) -> Result<(), DenoiserError>,
) -> Result<(), DenoiserError> {
    if data.is_empty() {
        return Err(DenoiserError::MissingData("training set is empty".into()));
    }
    while state.step < until {
        let mut rng = step_rng(state.config.seed, state.step, STREAM_BATCH);
        let batch: Vec<&TrainExample> = (0..state.config.batch)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        train_step(state, &batch)?;
        on_step(state)?;
    }
    Ok(())
}
