use super::*;
use crate::autodiff::gradcheck::{grad_check, rand_tensor};
use crate::autodiff::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(objective: Objective) -> DenoiserConfig {
    DenoiserConfig {
        resolution: 8,
        base_channels: 8,
        channel_mults: vec![1, 2],
        res_blocks: 1,
        embed_dim: 16,
        groups: 4,
        objective,
        ..DenoiserConfig::default()
    }
}

/// A square object with a disk shadow offset along φ, softer for larger s.
fn synthetic_example(res: usize, p: LightParams) -> TrainExample {
    let c = res as f64 / 2.0;
    let (dy, dx) = p.phi.to_radians().sin_cos();
    let reach = res as f64 * 0.25;
    let (sx, sy) = (c + dx * reach, c + dy * reach);
    let mut mask = vec![0.0f32; res * res];
    let mut gray = vec![0.0f32; res * res];
    let mut shadow = vec![0.0f32; res * res];
    for y in 0..res {
        for x in 0..res {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * res + x;
            if (px - c).abs() < res as f64 / 8.0 && (py - c).abs() < res as f64 / 8.0 {
                mask[i] = 1.0;
                gray[i] = 0.6;
            } else {
                let d = (px - sx).hypot(py - sy);
                let edge = 0.05 * p.size * res as f64;
                shadow[i] = (1.0 - (d - reach * 0.6) / edge).clamp(0.0, 1.0) as f32;
            }
        }
    }
    TrainExample {
        cond: Condition {
            width: res,
            height: res,
            mask,
            gray,
            params: p,
        },
        shadow,
    }
}

fn overfit_set(res: usize) -> Vec<TrainExample> {
    (0..16)
        .map(|i| {
            synthetic_example(
                res,
                LightParams::new(30.0, (i * 45 % 360) as f64, [2.0, 4.0, 8.0, 6.0][i % 4]),
            )
        })
        .collect()
}

#[test]
fn schedule_endpoints_are_exact() {
    for s in [Schedule::Cosine, Schedule::Linear] {
        assert!((s.alpha(0.0) - 1.0).abs() <= 1e-12);
        assert!(s.sigma(0.0).abs() <= 1e-12);
        assert!(s.alpha(1.0).abs() <= 1e-12);
        assert!((s.sigma(1.0) - 1.0).abs() <= 1e-12);
    }
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let (a, s) = (Schedule::Cosine.alpha(t), Schedule::Cosine.sigma(t));
        assert!((a * a + s * s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn embedding_of_zero_is_ones_then_zeros() {
    for form in [EmbeddingForm::Standard, EmbeddingForm::Printed] {
        let e = sinusoidal_embed(0.0, 256, form).unwrap();
        assert_eq!(e.len(), 256);
        assert!(e[..128].iter().all(|&v| v == 1.0));
        assert!(e[128..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn embedding_rejects_odd_width() {
    assert!(matches!(
        sinusoidal_embed(1.0, 7, EmbeddingForm::Standard),
        Err(DenoiserError::OddEmbedding(7))
    ));
    assert!(sinusoidal_embed(1.0, 0, EmbeddingForm::Standard).is_err());
}

#[test]
fn embedding_frequencies_follow_the_geometric_ladder() {
    let d = 8;
    let e = sinusoidal_embed(1.0, d, EmbeddingForm::Standard).unwrap();
    for i in 0..4 {
        let w = 10000f64.powf(-(i as f64) / 3.0);
        assert!((e[i] - w.cos()).abs() < 1e-15);
        assert!((e[4 + i] - w.sin()).abs() < 1e-15);
    }
    let e = sinusoidal_embed(1.0, d, EmbeddingForm::Printed).unwrap();
    for i in 0..4 {
        let fi = i as f64;
        let w = 2f64.powf(-fi * (fi - 1.0) / 12.0 * 10000f64.ln());
        assert!((e[i] - w.cos()).abs() < 1e-15);
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn embedding_is_injective_on_the_light_grid() {
    let mut values: Vec<f64> = (0..=45).map(f64::from).collect();
    values.extend((0..=360).map(f64::from));
    values.extend((2..=8).map(f64::from));
    values.sort_by(f64::total_cmp);
    values.dedup();
    for form in [EmbeddingForm::Standard, EmbeddingForm::Printed] {
        let embs: Vec<Vec<f64>> = values
            .iter()
            .map(|&v| sinusoidal_embed(v, 256, form).unwrap())
            .collect();
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                assert!(
                    dist(&embs[i], &embs[j]) > 0.0,
                    "{} vs {}",
                    values[i],
                    values[j]
                );
            }
        }
    }
    let a = sinusoidal_embed(10.0, 256, EmbeddingForm::Standard).unwrap();
    let b = sinusoidal_embed(11.0, 256, EmbeddingForm::Standard).unwrap();
    assert!(dist(&a, &b) > 0.0);
}

#[test]
fn condition_vector_widths() {
    let p = LightParams::new(30.0, 0.0, 2.0);
    let v = build_condition_vector(&p, 0.5, 256, false, EmbeddingForm::Standard).unwrap();
    assert_eq!(v.scalars.len(), 768);
    assert_eq!(v.timestep.len(), 256);
    let v = build_condition_vector(
        &p.with_intensity(0.5),
        0.5,
        256,
        true,
        EmbeddingForm::Standard,
    )
    .unwrap();
    assert_eq!(v.scalars.len(), 1024);
}

#[test]
fn condition_vector_moves_with_each_scalar() {
    let base = LightParams::new(30.0, 0.0, 2.0).with_intensity(1.0);
    let at = |p: LightParams| {
        build_condition_vector(&p, 0.3, 256, true, EmbeddingForm::Standard)
            .unwrap()
            .scalars
    };
    let v0 = at(base);
    for phi in (20..=340).step_by(20) {
        assert_ne!(
            at(LightParams {
                phi: phi as f64,
                ..base
            }),
            v0
        );
    }
    assert_ne!(
        at(LightParams {
            theta: 35.0,
            ..base
        }),
        v0
    );
    assert_ne!(at(LightParams { size: 4.0, ..base }), v0);
    assert_ne!(at(base.with_intensity(0.5)), v0);
}

#[test]
fn forward_diffuse_endpoints() {
    let x0 = [0.2, -0.4, 0.9];
    let eps = [1.5, 0.1, -0.7];
    for s in [Schedule::Cosine, Schedule::Linear] {
        assert_eq!(forward_diffuse(&x0, &eps, 0.0, s), x0.to_vec());
        assert_eq!(forward_diffuse(&x0, &eps, 1.0, s), eps.to_vec());
    }
}

#[test]
fn variance_preserving_schedule_keeps_unit_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let x0: Vec<f64> = (0..n)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect();
    let eps: Vec<f64> = (0..n)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect();
    for t in [0.1, 0.5, 0.9] {
        let xt = forward_diffuse(&x0, &eps, t, Schedule::Cosine);
        let energy = xt.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((energy - 1.0).abs() < 0.02, "t={t}: {energy}");
    }
}

#[test]
fn rf_interpolate_examples() {
    let x0 = [0.0, 2.0, -1.0];
    let x1 = [1.0, 4.0, 3.0];
    assert_eq!(rf_interpolate(&x0, &x1, 0.0), x0.to_vec());
    assert_eq!(rf_interpolate(&x0, &x1, 1.0), x1.to_vec());
    assert_eq!(rf_interpolate(&x0, &x1, 0.5), vec![0.5, 3.0, 1.0]);
}

#[test]
fn loss_target_examples() {
    let x0 = [0.3, -0.2];
    let eps = [1.0, 0.5];
    let s = Schedule::Cosine;
    assert_eq!(loss_target(Objective::V, &x0, &eps, 0.0, s), eps.to_vec());
    assert_eq!(
        loss_target(Objective::V, &x0, &eps, 1.0, s),
        vec![-0.3, 0.2]
    );
    assert_eq!(loss_target(Objective::Eps, &x0, &eps, 0.4, s), eps.to_vec());
    assert_eq!(
        loss_target(Objective::Sample, &x0, &eps, 0.4, s),
        x0.to_vec()
    );
    let rf: Vec<Vec<f64>> = [0.0, 0.3, 1.0]
        .iter()
        .map(|&t| loss_target(Objective::RectifiedFlow, &x0, &eps, t, s))
        .collect();
    assert!(rf.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(rf[0], vec![0.7, 0.7]);
}

#[test]
fn objective_names_round_trip() {
    for o in Objective::ALL {
        assert_eq!(o.as_str().parse::<Objective>().unwrap(), o);
    }
    assert!(matches!(
        "x".parse::<Objective>(),
        Err(DenoiserError::UnknownObjective(_))
    ));
}

proptest! {
    #[test]
    fn v_reconstruction_is_exact(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..64).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let s = Schedule::Cosine;
        let xt = forward_diffuse(&x0, &eps, t, s);
        let v = loss_target(Objective::V, &x0, &eps, t, s);
        let (x0h, epsh) = reconstruct(Objective::V, &v, &xt, t, s);
        for i in 0..64 {
            prop_assert!((x0h[i] - x0[i]).abs() <= 1e-9);
            prop_assert!((epsh[i] - eps[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_step_diffusion_samplers_apply_the_reconstruction_identity(seed in any::<u64>(), obj in 0usize..3) {
        let objective = [Objective::Eps, Objective::Sample, Objective::V][obj];
        let model = RandomModel(seed);
        let cond = blank_condition(4);
        let s = Schedule::Cosine;
        let out = sample(&model, &[&cond], 1, objective, s, seed).unwrap().remove(0);
        let xt = sample_noise(seed, 0, 16);
        let pred = model.predict(&xt, T_MAX, &[&cond]).unwrap();
        let (a, sg) = (s.alpha(T_MAX), s.sigma(T_MAX));
        prop_assert!(a > 1e-6);
        let eps_hat = match objective {
            Objective::Eps => pred.clone(),
            Objective::Sample => xt.iter().zip(&pred).map(|(x, p)| (x - a * p) / sg).collect(),
            _ => xt.iter().zip(&pred).map(|(x, v)| sg * x + a * v).collect::<Vec<_>>(),
        };
        for i in 0..16 {
            let x0 = ((xt[i] - sg * eps_hat[i]) / a).clamp(0.0, 1.0);
            prop_assert!((out[i] - x0).abs() <= 1e-9, "{} vs {}", out[i], x0);
        }
    }
}

fn blank_condition(res: usize) -> Condition {
    Condition {
        width: res,
        height: res,
        mask: vec![0.0; res * res],
        gray: vec![0.0; res * res],
        params: LightParams::new(30.0, 0.0, 2.0),
    }
}

struct RandomModel(u64);

impl Denoise for RandomModel {
    fn predict(&self, x: &[f64], t: f64, _: &[&Condition]) -> Result<Vec<f64>, DenoiserError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0 ^ t.to_bits());
        Ok(x.iter()
            .map(|v| 0.5 * v + rng.random_range(-1.0..1.0))
            .collect())
    }
}

/// Knows the clean target and the starting noise, and answers with the exact
/// quantity its objective asks for.
struct Oracle {
    x0: Vec<f64>,
    x1: Vec<f64>,
    objective: Objective,
}

impl Denoise for Oracle {
    fn predict(&self, x: &[f64], t: f64, _: &[&Condition]) -> Result<Vec<f64>, DenoiserError> {
        Ok(match self.objective {
            Objective::RectifiedFlow => self.x1.iter().zip(&self.x0).map(|(a, b)| a - b).collect(),
            Objective::Eps => {
                let s = Schedule::Cosine;
                let (a, sg) = (s.alpha(t), s.sigma(t));
                x.iter()
                    .zip(&self.x0)
                    .map(|(xt, x0)| (xt - a * x0) / sg)
                    .collect()
            }
            _ => unreachable!(),
        })
    }
}

fn oracle_target(res: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..res * res).map(|_| rng.random_range(0.0..1.0)).collect()
}

#[test]
fn rectified_flow_oracle_recovers_x0_for_any_step_count() {
    let cond = blank_condition(8);
    let x0 = oracle_target(8);
    let seed = 9;
    let oracle = Oracle {
        x0: x0.clone(),
        x1: sample_noise(seed, 0, 64),
        objective: Objective::RectifiedFlow,
    };
    for k in [1, 2, 3, 4, 8, 20, 50] {
        let out = sample_one(
            &oracle,
            &cond,
            k,
            Objective::RectifiedFlow,
            Schedule::Cosine,
            seed,
        )
        .unwrap();
        for (o, x) in out.iter().zip(&x0) {
            assert!((o - x).abs() < 1e-12, "K={k}: {o} vs {x}");
        }
    }
}

#[test]
fn eps_oracle_recovers_x0_in_one_step() {
    let cond = blank_condition(8);
    let x0 = oracle_target(8);
    let oracle = Oracle {
        x0: x0.clone(),
        x1: Vec::new(),
        objective: Objective::Eps,
    };
    let out = sample_one(&oracle, &cond, 1, Objective::Eps, Schedule::Cosine, 5).unwrap();
    for (o, x) in out.iter().zip(&x0) {
        assert!((o - x).abs() < 1e-6, "{o} vs {x}");
    }
}

#[test]
fn sampling_grid_shape() {
    assert_eq!(
        sampling_grid(Objective::RectifiedFlow, 4),
        vec![1.0, 0.75, 0.5, 0.25, 0.0]
    );
    let g = sampling_grid(Objective::Eps, 2);
    assert_eq!(g[0], T_MAX);
    assert_eq!(*g.last().unwrap(), 0.0);
    assert!(sample(
        &RandomModel(0),
        &[&blank_condition(4)],
        0,
        Objective::Eps,
        Schedule::Cosine,
        0
    )
    .is_err());
}

#[test]
fn sampling_is_deterministic_and_batch_independent() {
    let model = UNet::new(tiny_config(Objective::RectifiedFlow), 1).unwrap();
    let data = overfit_set(8);
    let conds: Vec<&Condition> = data.iter().map(|e| &e.cond).collect();
    let a = sample(
        &model,
        &conds,
        4,
        Objective::RectifiedFlow,
        Schedule::Cosine,
        11,
    )
    .unwrap();
    let b = sample(
        &model,
        &conds,
        4,
        Objective::RectifiedFlow,
        Schedule::Cosine,
        11,
    )
    .unwrap();
    assert_eq!(a, b);
    let solo = sample_one(
        &model,
        conds[3],
        4,
        Objective::RectifiedFlow,
        Schedule::Cosine,
        11,
    )
    .unwrap();
    let noise = sample_noise(11, 3, 64);
    assert_ne!(solo, a[3]);
    let direct = sample(
        &model,
        &conds[3..4],
        4,
        Objective::RectifiedFlow,
        Schedule::Cosine,
        11,
    )
    .unwrap();
    assert_eq!(direct[0], solo);
    assert_eq!(noise, sample_noise(11, 3, 64));
}

#[test]
fn blob_conditioning_adds_an_input_channel() {
    let mut cfg = tiny_config(Objective::Eps);
    assert_eq!(cfg.input_channels(), 3);
    cfg.conditioning = CondMode::Blob;
    assert_eq!(cfg.input_channels(), 4);
    let model = UNet::new(cfg, 0).unwrap();
    let ex = synthetic_example(8, LightParams::new(30.0, 90.0, 4.0));
    let mut g = Graph::<f32>::new();
    let (xv, _, cv) = model
        .inputs(&mut g, &vec![0.0; 64], &[0.5], &[&ex.cond])
        .unwrap();
    assert_eq!(g.shape(xv), &[1, 4, 8, 8]);
    assert!(cv.is_none());
}

#[test]
fn config_validation() {
    let mut cfg = tiny_config(Objective::V);
    cfg.resolution = 6;
    cfg.channel_mults = vec![1, 2, 4];
    assert!(matches!(
        UNet::new(cfg.clone(), 0),
        Err(DenoiserError::Config(_))
    ));
    cfg.resolution = 8;
    cfg.embed_dim = 15;
    assert!(matches!(
        UNet::new(cfg, 0),
        Err(DenoiserError::OddEmbedding(15))
    ));
    let json = r#"{"resolution": 32, "bogus": 1}"#;
    assert!(serde_json::from_str::<DenoiserConfig>(json).is_err());
}

#[test]
fn fresh_network_predicts_zero() {
    let model = UNet::new(tiny_config(Objective::Sample), 4).unwrap();
    let ex = synthetic_example(8, LightParams::new(30.0, 0.0, 2.0));
    let out = UNet::predict(&model, &vec![0.3; 64], &[0.5], &[&ex.cond]).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn unet_gradients_match_finite_differences() {
    let mut cfg = tiny_config(Objective::RectifiedFlow);
    cfg.resolution = 4;
    cfg.base_channels = 4;
    cfg.embed_dim = 4;
    cfg.groups = 2;
    let model = UNet::new(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params: Vec<Tensor<f64>> = model
        .params
        .iter()
        .map(|p| rand_tensor(&mut rng, &p.shape))
        .collect();
    let ex = synthetic_example(4, LightParams::new(20.0, 120.0, 3.0));
    let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let err = grad_check(&params, &|g, p| {
        let (xv, tv, cv) = model.inputs(g, &x, &[0.37], &[&ex.cond]).unwrap();
        model.forward(g, p, xv, tv, cv).unwrap()
    });
    assert!(err < 1e-4, "relative error {err}");
}

fn overfit_config(objective: Objective) -> TrainConfig {
    TrainConfig {
        model: tiny_config(objective),
        optimizer: crate::autodiff::AdamW {
            lr: 2e-3,
            ..Default::default()
        },
        batch: 16,
        iterations: 200,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn window_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn every_objective_overfits_sixteen_images() {
    let data = overfit_set(8);
    for objective in Objective::ALL {
        let mut state = TrainRunState::new(overfit_config(objective)).unwrap();
        train(&mut state, &data, 200, |_| Ok(())).unwrap();
        let first = window_mean(&state.losses[..10]);
        let last = window_mean(&state.losses[190..]);
        assert!(last < 0.5 * first, "{objective}: {first} -> {last}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = overfit_set(8);
    let run = || {
        let mut s = TrainRunState::new(overfit_config(Objective::V)).unwrap();
        train(&mut s, &data, 15, |_| Ok(())).unwrap();
        (s.losses, s.model.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let data = overfit_set(8);
    let mut cfg = overfit_config(Objective::RectifiedFlow);
    cfg.model.intensity = true;
    let mut full = TrainRunState::new(cfg.clone()).unwrap();
    train(&mut full, &data, 20, |_| Ok(())).unwrap();

    let mut first = TrainRunState::new(cfg).unwrap();
    train(&mut first, &data, 12, |_| Ok(())).unwrap();
    first.save(&path).unwrap();
    let mut resumed = TrainRunState::load(&path).unwrap();
    assert_eq!(resumed.step, 12);
    train(&mut resumed, &data, 20, |_| Ok(())).unwrap();
    assert_eq!(resumed.losses, full.losses);
    assert_eq!(resumed.model.params, full.model.params);
    assert_eq!(resumed.adam.m, full.adam.m);
}

#[test]
fn mismatched_examples_are_rejected() {
    let mut state = TrainRunState::new(overfit_config(Objective::Eps)).unwrap();
    let ex = synthetic_example(4, LightParams::new(30.0, 0.0, 2.0));
    assert!(train_step(&mut state, &[&ex]).is_err());
    assert!(train_step(&mut state, &[]).is_err());
    assert!(matches!(
        train(&mut state, &[], 1, |_| Ok(())),
        Err(DenoiserError::MissingData(_))
    ));
}

#[test]
fn blob_map_carries_no_intensity() {
    let ex = synthetic_example(8, LightParams::new(30.0, 0.0, 2.0));
    let dim = ex.cond.with_params(ex.cond.params.with_intensity(0.3));
    assert_eq!(ex.cond.blob(), dim.blob());
}

fn small_ablation() -> AblationConfig {
    let mut train = overfit_config(Objective::Eps);
    train.iterations = 6;
    AblationConfig {
        train,
        steps: vec![1, 2, 4, 8, 20],
        seeds: 2,
        curve_iterations: vec![3, 6],
        curve_steps: 2,
        curve_seeds: 1,
        ..AblationConfig::default()
    }
}

fn eval_sets() -> Vec<EvalSet> {
    (0..3)
        .map(|k| {
            let exs: Vec<TrainExample> = (0..2)
                .map(|i| {
                    synthetic_example(8, LightParams::new(30.0, (k * 60 + i * 180) as f64, 2.0))
                })
                .collect();
            EvalSet {
                name: format!("track{}", k + 1),
                objects: (0..2).map(|i| format!("obj{i}")).collect(),
                truths: exs
                    .iter()
                    .map(|e| {
                        to_image(
                            8,
                            8,
                            &e.shadow.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                        )
                    })
                    .collect(),
                conds: exs.into_iter().map(|e| e.cond).collect(),
            }
        })
        .collect()
}

#[test]
fn ablation_report_has_the_full_grid() {
    let data = overfit_set(8);
    let (report, models) = run_ablation(&small_ablation(), &data, &eval_sets(), |_| {}).unwrap();
    assert_eq!(models.len(), 4);
    assert_eq!(report.cells.len(), 4 * 5 * 3 * 4);
    assert!(report.cells.iter().all(|c| c.n == 2));
    assert_eq!(report.steps_curve.len(), 4 * 5);
    assert_eq!(report.iteration_curve.len(), 4 * 2);
    assert_eq!(report.trends.len(), 2);
    let ious: Vec<f64> = report.reference.iter().map(|r| r.iou).collect();
    assert_eq!(ious, PAPER_RF_ONE_STEP_IOU.to_vec());
    assert_eq!(report.header.iterations, 6);
    assert!(report.cell(Objective::V, 8, "track2", "zncc").is_some());

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 240);
    let curve = std::fs::read_to_string(dir.path().join("steps_rf.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("x,mean,std"));
    assert_eq!(curve.lines().count(), 6);
    let back: AblationReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(back, report);
}

#[test]
fn ablation_fails_before_training_without_data() {
    let mut calls = 0;
    let r = run_ablation(&small_ablation(), &[], &eval_sets(), |_| calls += 1);
    assert!(matches!(r, Err(DenoiserError::MissingData(_))));
    let r = run_ablation(&small_ablation(), &overfit_set(8), &[], |_| calls += 1);
    assert!(matches!(r, Err(DenoiserError::MissingData(_))));
    assert_eq!(calls, 0);
}

#[test]
fn softness_check_on_rendered_like_maps() {
    let entries: Vec<(String, f64, crate::image::GrayImage, crate::image::Mask)> = [2.0, 4.0, 8.0]
        .iter()
        .flat_map(|&s| {
            (0..3).map(move |o| {
                let ex = synthetic_example(32, LightParams::new(30.0, 60.0 * o as f64, s));
                let img = to_image(
                    32,
                    32,
                    &ex.shadow.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                );
                (format!("obj{o}"), s, img, ex.cond.mask_image())
            })
        })
        .collect();
    let out = softness_check(&entries);
    assert_eq!(out.sizes, vec![2.0, 4.0, 8.0]);
    assert!(out.strictly_decreasing, "{:?}", out.mean_gradient);
    assert_eq!(out.object_fraction, 1.0);
}

#[test]
fn reflection_check_on_mirrored_maps() {
    let mut entries = Vec::new();
    for phi in [0.0, 45.0, 180.0, 225.0] {
        let ex = synthetic_example(32, LightParams::new(30.0, phi, 2.0));
        let img = to_image(
            32,
            32,
            &ex.shadow.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        );
        entries.push(("a".to_string(), phi, img, ex.cond.mask_image()));
    }
    let plane = PlaneMap::image(32, 32);
    let out = phi_reflection_check(&entries, &plane);
    assert_eq!(out.objects.len(), 1);
    assert!(out.objects[0].1 < 1e-9, "{:?}", out.objects);
    assert_eq!(out.pass_fraction, 1.0);
    assert!((out.tolerance - 3.2).abs() < 1e-12);

    let mut shifted = plane;
    shifted.anchor = (4.0, 16.0);
    let off = phi_reflection_check(&entries, &shifted);
    assert_eq!(off.pass_fraction, 0.0);
}

#[test]
fn centroid_of_a_single_pixel() {
    let mut img = crate::image::GrayImage::new(4, 4);
    img.set(2, 1, 0.7);
    let plane = PlaneMap::image(4, 4);
    let (cx, cy) = shadow_centroid(&img, None, &plane).unwrap();
    assert!((cx - 2.5).abs() < 1e-12 && (cy - 1.5).abs() < 1e-12);
    assert_eq!(
        shadow_centroid(&crate::image::GrayImage::new(4, 4), None, &plane),
        None
    );
}

#[test]
fn ground_plane_map_inverts_the_camera() {
    let cam = crate::light::Camera::benchmark(64);
    let plane = PlaneMap::ground(&cam).unwrap();
    let f = cam.frame().unwrap();
    let (ax, ay) = f.project(crate::geom::Vec3::ZERO).unwrap();
    assert!((ax - 32.0).abs() < 1e-9 && (ay - 32.0).abs() < 1e-9);
    // A single lit pixel's centroid is that pixel's ground point, which
    // projects back to the pixel center.
    let mut img = crate::image::GrayImage::new(64, 64);
    img.set(40, 50, 1.0);
    let (gx, gy) = shadow_centroid(&img, None, &plane).unwrap();
    let (px, py) = f.project(crate::geom::Vec3::new(gx, gy, 0.0)).unwrap();
    assert!((px - 40.5).abs() < 1e-9 && (py - 50.5).abs() < 1e-9);
    // Nearer rows cover less ground than farther ones.
    let near = crate::image::GrayImage::from_vec(
        64,
        64,
        (0..4096).map(|i| f64::from(i / 64 == 60)).collect(),
    );
    let far = crate::image::GrayImage::from_vec(
        64,
        64,
        (0..4096).map(|i| f64::from(i / 64 == 33)).collect(),
    );
    assert!(
        shadow_centroid(&near, None, &plane).unwrap().1
            < shadow_centroid(&far, None, &plane).unwrap().1
    );
    // Span: the ground width at the origin row is 2·tan(20°)·|camera − origin|.
    let expect = 2.0 * 20f64.to_radians().tan() * 40f64.sqrt();
    assert!(
        (plane.span - expect).abs() < 1e-9,
        "{} vs {expect}",
        plane.span
    );
}
