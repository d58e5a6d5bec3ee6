//! Trains one model per (objective, conditioning) cell, evaluates each at
//! several sampling step counts and seeds on the benchmark tracks, and
//! summarizes the results as tables and curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    sample, train, CondMode, Condition, DenoiserError, Objective, TrainConfig, TrainExample,
    TrainRunState,
};
use crate::image::GrayImage;
use crate::metrics::{aggregate, mean_std, MetricSample, MetricValues};

/// Rectified flow, one step, IoU on tracks 1 to 3 at full scale, quoted for
/// context next to the toy numbers.
pub const PAPER_RF_ONE_STEP_IOU: [f64; 3] = [0.768, 0.732, 0.736];

/// Held-out conditions with their ground-truth maps.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub name: String,
    pub conds: Vec<Condition>,
    pub truths: Vec<GrayImage>,
    /// Source mesh of each entry.
    pub objects: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub objectives: Vec<Objective>,
    pub conditionings: Vec<CondMode>,
    pub steps: Vec<usize>,
    pub seeds: usize,
    /// Training iterations at which the iteration curve is sampled.
    pub curve_iterations: Vec<u64>,
    pub curve_steps: usize,
    pub curve_seeds: usize,
    /// Margins for the two trend checks.
    pub margin_steps: f64,
    pub margin_objectives: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::default(),
            objectives: Objective::ALL.to_vec(),
            conditionings: vec![CondMode::Scalar],
            steps: vec![1, 2, 4, 8, 20],
            seeds: 10,
            curve_iterations: vec![1000, 2000, 3000, 4000, 5000],
            curve_steps: 20,
            curve_seeds: 3,
            margin_steps: 0.05,
            margin_objectives: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub objective: Objective,
    pub conditioning: CondMode,
    pub steps: usize,
    pub track: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub track: String,
    pub objective: Objective,
    pub steps: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub learning_rate: f64,
    pub batch: usize,
    pub iterations: usize,
    pub resolution: usize,
    pub base_channels: usize,
    pub res_blocks: usize,
    pub seeds: usize,
    pub train_examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub header: ReportHeader,
    pub cells: Vec<Cell>,
    /// Track-averaged IoU against sampling steps, one series per model.
    pub steps_curve: Vec<CurvePoint>,
    /// Track-averaged IoU against training iterations at a fixed step count.
    pub iteration_curve: Vec<CurvePoint>,
    pub reference: Vec<ReferenceRow>,
    pub trends: Vec<TrendCheck>,
}

fn series_name(objective: Objective, cond: CondMode, multi_cond: bool) -> String {
    if multi_cond {
        format!(
            "{objective}-{}",
            serde_json::to_value(cond).unwrap().as_str().unwrap()
        )
    } else {
        objective.to_string()
    }
}

/// Per-sample metrics of one model on one set at one (steps, seed).
pub fn evaluate(
    state: &TrainRunState,
    set: &EvalSet,
    steps: usize,
    seed: u64,
) -> Result<Vec<MetricValues>, DenoiserError> {
    let refs: Vec<&Condition> = set.conds.iter().collect();
    let cfg = &state.config;
    let outs = sample(
        &state.model,
        &refs,
        steps,
        cfg.model.objective,
        cfg.schedule,
        seed,
    )?;
    outs.iter()
        .zip(&set.truths)
        .map(|(o, g)| {
            let p = GrayImage::from_vec(g.width, g.height, o.clone());
            MetricValues::compute(&p, g).map_err(|e| DenoiserError::Config(e.to_string()))
        })
        .collect()
}

/// Mean over seeds of the track-averaged IoU, and its population std.
fn track_averaged_iou(
    state: &TrainRunState,
    sets: &[EvalSet],
    steps: usize,
    seeds: usize,
) -> Result<(f64, f64, Vec<Vec<Vec<MetricValues>>>), DenoiserError> {
    let mut per_seed = Vec::with_capacity(seeds);
    let mut raw = Vec::with_capacity(seeds);
    for seed in 0..seeds as u64 {
        let mut track_means = Vec::new();
        let mut by_track = Vec::new();
        for set in sets {
            let vals = evaluate(state, set, steps, seed)?;
            track_means.push(vals.iter().map(|v| v.iou).sum::<f64>() / vals.len().max(1) as f64);
            by_track.push(vals);
        }
        per_seed.push(track_means.iter().sum::<f64>() / track_means.len().max(1) as f64);
        raw.push(by_track);
    }
    let (m, s) = mean_std(&per_seed);
    Ok((m, s, raw))
}

/// Runs the full matrix. Returns the report and the trained models in
/// (conditioning, objective) order.
pub fn run_ablation(
    cfg: &AblationConfig,
    data: &[TrainExample],
    tracks: &[EvalSet],
    mut progress: impl FnMut(&str),
) -> Result<(AblationReport, Vec<TrainRunState>), DenoiserError> {
    if data.is_empty() {
        return Err(DenoiserError::MissingData("training set is empty".into()));
    }
    if tracks.is_empty() || tracks.iter().any(|t| t.conds.is_empty()) {
        return Err(DenoiserError::MissingData(
            "benchmark tracks are missing or empty".into(),
        ));
    }
    if cfg.seeds == 0
        || cfg.steps.is_empty()
        || cfg.objectives.is_empty()
        || cfg.conditionings.is_empty()
    {
        return Err(DenoiserError::Config(
            "ablation needs objectives, conditionings, steps and seeds".into(),
        ));
    }
    let multi_cond = cfg.conditionings.len() > 1;
    let mut samples = Vec::new();
    let mut keys: BTreeMap<String, (Objective, CondMode, usize, String)> = BTreeMap::new();
    let mut steps_curve = Vec::new();
    let mut iteration_curve = Vec::new();
    let mut models = Vec::new();
    for &cond in &cfg.conditionings {
        for &objective in &cfg.objectives {
            let series = series_name(objective, cond, multi_cond);
            let mut tc = cfg.train.clone();
            tc.model.objective = objective;
            tc.model.conditioning = cond;
            let mut state = TrainRunState::new(tc)?;
            let mut marks: Vec<u64> = cfg
                .curve_iterations
                .iter()
                .copied()
                .filter(|&i| i > 0 && i <= cfg.train.iterations as u64)
                .collect();
            marks.sort_unstable();
            marks.dedup();
            marks.push(cfg.train.iterations as u64);
            let mut last = 0;
            for &mark in &marks {
                if mark <= last && mark != 0 {
                    continue;
                }
                progress(&format!("train {series} to {mark}"));
                train(&mut state, data, mark, |_| Ok(()))?;
                last = mark;
                if cfg.curve_iterations.contains(&mark) && cfg.curve_seeds > 0 {
                    let (m, s, _) =
                        track_averaged_iou(&state, tracks, cfg.curve_steps, cfg.curve_seeds)?;
                    iteration_curve.push(CurvePoint {
                        series: series.clone(),
                        x: mark as f64,
                        mean: m,
                        std: s,
                    });
                }
            }
            for &steps in &cfg.steps {
                progress(&format!("evaluate {series} at {steps} steps"));
                let (m, s, raw) = track_averaged_iou(&state, tracks, steps, cfg.seeds)?;
                steps_curve.push(CurvePoint {
                    series: series.clone(),
                    x: steps as f64,
                    mean: m,
                    std: s,
                });
                for (seed, by_track) in raw.into_iter().enumerate() {
                    for (set, vals) in tracks.iter().zip(by_track) {
                        let group = format!("{series}|{steps}|{}", set.name);
                        keys.insert(group.clone(), (objective, cond, steps, set.name.clone()));
                        for v in vals {
                            samples.push(MetricSample {
                                group: group.clone(),
                                seed: seed as u64,
                                values: v,
                            });
                        }
                    }
                }
            }
            models.push(state);
        }
    }
    let agg = aggregate(&samples).map_err(|e| DenoiserError::Config(e.to_string()))?;
    let cells = agg
        .rows
        .iter()
        .map(|r| {
            let (objective, conditioning, steps, track) = keys[&r.group].clone();
            Cell {
                objective,
                conditioning,
                steps,
                track,
                metric: r.metric.clone(),
                mean: r.mean,
                std: r.std,
                n: r.n,
            }
        })
        .collect();

    let lookup = |obj: Objective, steps: usize| {
        let name = series_name(obj, cfg.conditionings[0], multi_cond);
        steps_curve
            .iter()
            .find(|p: &&CurvePoint| p.series == name && p.x == steps as f64)
            .map(|p| p.mean)
    };
    let mut trends = Vec::new();
    let rf = Objective::RectifiedFlow;
    if let (Some(one), Some(twenty)) = (lookup(rf, 1), lookup(rf, 20)) {
        let rhs = twenty - cfg.margin_steps;
        trends.push(TrendCheck {
            name: format!("rf@1 >= rf@20 - {}", cfg.margin_steps),
            lhs: one,
            rhs,
            passed: one >= rhs,
        });
    }
    let others: Vec<f64> = [Objective::Eps, Objective::Sample, Objective::V]
        .iter()
        .filter_map(|&o| lookup(o, 1))
        .collect();
    if let (Some(one), false) = (lookup(rf, 1), others.is_empty()) {
        let best = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rhs = best + cfg.margin_objectives;
        trends.push(TrendCheck {
            name: format!("rf@1 >= max(eps, sample, v)@1 + {}", cfg.margin_objectives),
            lhs: one,
            rhs,
            passed: one >= rhs,
        });
    }
    let reference = tracks
        .iter()
        .zip(PAPER_RF_ONE_STEP_IOU)
        .map(|(t, iou)| ReferenceRow {
            track: t.name.clone(),
            objective: rf,
            steps: 1,
            iou,
        })
        .collect();
    let t = &cfg.train;
    let report = AblationReport {
        header: ReportHeader {
            learning_rate: t.optimizer.lr,
            batch: t.batch,
            iterations: t.iterations,
            resolution: t.model.resolution,
            base_channels: t.model.base_channels,
            res_blocks: t.model.res_blocks,
            seeds: cfg.seeds,
            train_examples: data.len(),
        },
        cells,
        steps_curve,
        iteration_curve,
        reference,
        trends,
    };
    Ok((report, models))
}

impl AblationReport {
    pub fn cell(
        &self,
        objective: Objective,
        steps: usize,
        track: &str,
        metric: &str,
    ) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.objective == objective && c.steps == steps && c.track == track && c.metric == metric
        })
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("objective,conditioning,steps,track,metric,mean,std,n\n");
        for c in &self.cells {
            let cond = serde_json::to_value(c.conditioning).unwrap();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.objective,
                cond.as_str().unwrap(),
                c.steps,
                c.track,
                c.metric,
                c.mean,
                c.std,
                c.n
            );
        }
        out
    }

    fn curve_csv(points: &[CurvePoint], series: &str) -> String {
        let mut out = String::from("x,mean,std\n");
        for p in points.iter().filter(|p| p.series == series) {
            let _ = writeln!(out, "{},{},{}", p.x, p.mean, p.std);
        }
        out
    }

    /// `report.json`, `cells.csv`, and one `steps_<series>.csv` and
    /// `iterations_<series>.csv` per series under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DenoiserError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| DenoiserError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let json = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        let p = dir.join("report.json");
        std::fs::write(&p, json).map_err(io(&p))?;
        let p = dir.join("cells.csv");
        std::fs::write(&p, self.cells_csv()).map_err(io(&p))?;
        let mut series: Vec<&str> = self.steps_curve.iter().map(|p| p.series.as_str()).collect();
        series.dedup();
        for s in series {
            let p = dir.join(format!("steps_{s}.csv"));
            std::fs::write(&p, Self::curve_csv(&self.steps_curve, s)).map_err(io(&p))?;
            if self.iteration_curve.iter().any(|c| c.series == s) {
                let p = dir.join(format!("iterations_{s}.csv"));
                std::fs::write(&p, Self::curve_csv(&self.iteration_curve, s)).map_err(io(&p))?;
            }
        }
        Ok(())
    }
}
