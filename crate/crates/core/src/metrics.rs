//! Shadow-map similarity metrics and seed-aggregated reporting.
//!
//! All metrics compare a prediction `p` against ground truth `g` on the full
//! frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("group {0:?} has no values")]
    EmptyGroup(String),
}

fn check(p: &GrayImage, g: &GrayImage) -> Result<(), MetricError> {
    if p.shape() != g.shape() {
        return Err(MetricError::ShapeMismatch {
            left: p.shape(),
            right: g.shape(),
        });
    }
    Ok(())
}

/// Fuzzy-set IoU `Σ min(p,g) / Σ max(p,g)`; 1 when both maps are zero.
pub fn soft_iou(p: &GrayImage, g: &GrayImage) -> Result<f64, MetricError> {
    check(p, g)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&a, &b) in p.data.iter().zip(&g.data) {
        inter += a.min(b);
        union += a.max(b);
    }
    Ok(if union == 0.0 { 1.0 } else { inter / union })
}

pub fn rmse(p: &GrayImage, g: &GrayImage) -> Result<f64, MetricError> {
    check(p, g)?;
    Ok(rmse_scaled(&p.data, &g.data, 1.0))
}

fn rmse_scaled(p: &[f64], g: &[f64], alpha: f64) -> f64 {
    let sse: f64 = p
        .iter()
        .zip(g)
        .map(|(&a, &b)| (alpha * a - b).powi(2))
        .sum();
    (sse / p.len().max(1) as f64).sqrt()
}

/// Optimal non-negative scale `⟨p,g⟩ / ⟨p,p⟩` applied to the prediction;
/// 0 when `p` is identically zero.
pub fn optimal_scale(p: &GrayImage, g: &GrayImage) -> Result<f64, MetricError> {
    check(p, g)?;
    let pp: f64 = p.data.iter().map(|a| a * a).sum();
    if pp == 0.0 {
        return Ok(0.0);
    }
    let pg: f64 = p.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
    Ok((pg / pp).max(0.0))
}

/// `rmse(α*·p, g)` with the least-squares scale α* clamped to be non-negative.
pub fn scaled_rmse(p: &GrayImage, g: &GrayImage) -> Result<f64, MetricError> {
    let alpha = optimal_scale(p, g)?;
    Ok(rmse_scaled(&p.data, &g.data, alpha))
}

const FLAT_SIGMA: f64 = 1e-8;

/// Zero-normalized cross-correlation. A flat map scores 1 against a map it
/// equals (rmse < 1e-8) and 0 otherwise.
pub fn zncc(p: &GrayImage, g: &GrayImage) -> Result<f64, MetricError> {
    check(p, g)?;
    let n = p.data.len() as f64;
    let mp = p.data.iter().sum::<f64>() / n;
    let mg = g.data.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.data.iter().zip(&g.data) {
        let (da, db) = (a - mp, b - mg);
        cov += da * db;
        vp += da * da;
        vg += db * db;
    }
    let (sp, sg) = ((vp / n).sqrt(), (vg / n).sqrt());
    if sp < FLAT_SIGMA || sg < FLAT_SIGMA {
        return Ok(if rmse_scaled(&p.data, &g.data, 1.0) < FLAT_SIGMA {
            1.0
        } else {
            0.0
        });
    }
    Ok(((cov / n) / (sp * sg)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub iou: f64,
    pub rmse: f64,
    pub s_rmse: f64,
    pub zncc: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 4] = ["iou", "rmse", "s_rmse", "zncc"];

    pub fn compute(p: &GrayImage, g: &GrayImage) -> Result<Self, MetricError> {
        Ok(MetricValues {
            iou: soft_iou(p, g)?,
            rmse: rmse(p, g)?,
            s_rmse: scaled_rmse(p, g)?,
            zncc: zncc(p, g)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "iou" => Some(self.iou),
            "rmse" => Some(self.rmse),
            "s_rmse" => Some(self.s_rmse),
            "zncc" => Some(self.zncc),
            _ => None,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.iou, self.rmse, self.s_rmse, self.zncc]
    }
}

/// One per-sample measurement tagged with its group and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub group: String,
    pub seed: u64,
    pub values: MetricValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Number of seeds aggregated.
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<GroupStat>,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per group: average samples within each seed, then report the mean and
/// population standard deviation of those per-seed means.
pub fn aggregate(samples: &[MetricSample]) -> Result<MetricReport, MetricError> {
    aggregate_groups(samples, &[])
}

/// Like [`aggregate`], but every name in `required` must have samples.
pub fn aggregate_groups(
    samples: &[MetricSample],
    required: &[String],
) -> Result<MetricReport, MetricError> {
    let mut groups: BTreeMap<&str, BTreeMap<u64, Vec<MetricValues>>> = BTreeMap::new();
    for s in samples {
        groups
            .entry(s.group.as_str())
            .or_default()
            .entry(s.seed)
            .or_default()
            .push(s.values);
    }
    if let Some(missing) = required.iter().find(|r| !groups.contains_key(r.as_str())) {
        return Err(MetricError::EmptyGroup(missing.clone()));
    }
    let mut rows = Vec::new();
    for (group, seeds) in groups {
        for (k, name) in MetricValues::NAMES.iter().enumerate() {
            let per_seed: Vec<f64> = seeds
                .values()
                .map(|vals| vals.iter().map(|v| v.values()[k]).sum::<f64>() / vals.len() as f64)
                .collect();
            let (mean, std) = mean_std(&per_seed);
            rows.push(GroupStat {
                group: group.to_string(),
                metric: (*name).to_string(),
                mean,
                std,
                n: per_seed.len(),
            });
        }
    }
    Ok(MetricReport { rows })
}

impl MetricReport {
    pub fn get(&self, group: &str, metric: &str) -> Option<&GroupStat> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.metric == metric)
    }

    /// CSV with the fixed column order `group,metric,mean,std,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,metric,mean,std,n\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.group, r.metric, r.mean, r.std, r.n);
        }
        out
    }
}
