//! Deterministic samplers. Sampler state is kept in `f64`; the network
//! itself may run at lower precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{reconstruct, Condition, DenoiserError, Objective, Schedule, UNet};

/// Start time of the diffusion samplers. `α(1) = 0`, so the ε-reconstruction
/// `(x − σε̂)/α` is undefined at exactly t = 1.
pub const T_MAX: f64 = 0.999;

/// A model queried at one shared time for a batch of conditions.
pub trait Denoise: Sync {
    fn predict(&self, x: &[f64], t: f64, conds: &[&Condition]) -> Result<Vec<f64>, DenoiserError>;
}

/// Largest batch sent through the network at once during sampling.
const EVAL_BATCH: usize = 32;

impl Denoise for UNet {
    fn predict(&self, x: &[f64], t: f64, conds: &[&Condition]) -> Result<Vec<f64>, DenoiserError> {
        let hw = self.config().resolution * self.config().resolution;
        let mut out = Vec::with_capacity(x.len());
        for (xs, cs) in x.chunks(EVAL_BATCH * hw).zip(conds.chunks(EVAL_BATCH)) {
            out.extend(UNet::predict(self, xs, &vec![t; cs.len()], cs)?);
        }
        Ok(out)
    }
}

/// Uniform time grid with `steps + 1` points, from the start time down to 0.
pub fn sampling_grid(objective: Objective, steps: usize) -> Vec<f64> {
    let start = if objective == Objective::RectifiedFlow {
        1.0
    } else {
        T_MAX
    };
    (0..=steps)
        .map(|i| start * (1.0 - i as f64 / steps as f64))
        .collect()
}

/// Standard normal starting noise for condition `index` under `seed`; each
/// index has its own stream so batching does not change the draw.
pub fn sample_noise(seed: u64, index: usize, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Integrates from noise to a shadow map for every condition in `conds`.
///
/// Rectified flow takes Euler steps `x ← x − Δt·f(x, t)` from t = 1 to 0.
/// The diffusion objectives recover `(x̂0, ε̂)` at each grid time and
/// re-project to the next one. The output is clamped to [0,1].
pub fn sample(
    model: &dyn Denoise,
    conds: &[&Condition],
    steps: usize,
    objective: Objective,
    schedule: Schedule,
    seed: u64,
) -> Result<Vec<Vec<f64>>, DenoiserError> {
    if steps == 0 {
        return Err(DenoiserError::Config(
            "sampling needs at least one step".into(),
        ));
    }
    let Some(first) = conds.first() else {
        return Ok(Vec::new());
    };
    let hw = first.width * first.height;
    let mut x: Vec<f64> = (0..conds.len())
        .flat_map(|i| sample_noise(seed, i, hw))
        .collect();
    let grid = sampling_grid(objective, steps);
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let out = model.predict(&x, t, conds)?;
        if objective == Objective::RectifiedFlow {
            let dt = t - next;
            for (xi, vi) in x.iter_mut().zip(&out) {
                *xi -= dt * vi;
            }
        } else {
            let (x0, eps) = reconstruct(objective, &out, &x, t, schedule);
            let (a, s) = (schedule.alpha(next), schedule.sigma(next));
            for i in 0..x.len() {
                x[i] = a * x0[i] + s * eps[i];
            }
        }
    }
    Ok(x.chunks(hw)
        .map(|c| c.iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .collect())
}

pub fn sample_one(
    model: &dyn Denoise,
    cond: &Condition,
    steps: usize,
    objective: Objective,
    schedule: Schedule,
    seed: u64,
) -> Result<Vec<f64>, DenoiserError> {
    Ok(sample(model, &[cond], steps, objective, schedule, seed)?.remove(0))
}
