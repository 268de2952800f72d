//! Displacement metrics over per-step prediction sets.
//!
//! Every sample is a sequence of steps; a step carries either a ground
//! truth target or `None` when the target fell outside the grid, in which
//! case it is excluded and counted. The first `warmup` steps of each
//! sequence are skipped by ADE and minADE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{top_k, PredictionSet};
use crate::numeric::CompensatedSum;

/// Recurrent warm-up steps skipped by the averaged metrics.
pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_K: usize = 3;

/// One evaluated sequence: prediction sets and optional targets per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub predictions: Vec<PredictionSet>,
    pub targets: Vec<Option<[f64; 2]>>,
}

impl ScoredSequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdeMode {
    /// Top-1 displacement at the final step, averaged over samples.
    #[default]
    FinalStep,
    /// The two-term expression with a `1 / (m * (T_max - 4))` prefactor over
    /// steps `warmup` and `T_max`, using the top-1 prediction; `T_max` is the
    /// last step index.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedMetrics {
    pub ade: f64,
    pub min_ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade: f64,
    pub min_ade: f64,
    pub fde: f64,
    pub k_used: usize,
    pub sigma_v: Option<f64>,
    pub corrected: Option<CorrectedMetrics>,
    pub samples_evaluated: usize,
    pub samples_skipped_out_of_extent: usize,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check(sequences: &[ScoredSequence]) -> Result<()> {
    for s in sequences {
        if s.predictions.len() != s.targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} prediction sets for {} targets",
                s.predictions.len(),
                s.targets.len()
            )));
        }
        if s.predictions
            .iter()
            .zip(&s.targets)
            .any(|(p, t)| t.is_some() && p.is_empty())
        {
            return Err(Error::ShapeMismatch("empty prediction set".into()));
        }
    }
    Ok(())
}

/// Mean over evaluated `(sample, step)` pairs of `per_step`.
fn averaged(
    sequences: &[ScoredSequence],
    warmup: usize,
    per_step: impl Fn(&PredictionSet, [f64; 2]) -> f64,
) -> Result<f64> {
    check(sequences)?;
    let mut sum = CompensatedSum::default();
    let mut count = 0usize;
    for s in sequences {
        for (set, target) in s.predictions.iter().zip(&s.targets).skip(warmup) {
            if let Some(t) = target {
                sum.add(per_step(set, *t));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(sum.value() / count as f64)
}

/// Average displacement of the top-1 prediction after the warm-up steps.
pub fn ade(sequences: &[ScoredSequence], warmup: usize) -> Result<f64> {
    averaged(sequences, warmup, |set, t| distance(set.best().mu, t))
}

/// Like [`ade`] but each step scores the best of the top `k` predictions.
pub fn min_ade(sequences: &[ScoredSequence], k: usize, warmup: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    averaged(sequences, warmup, |set, t| {
        top_k(set, k)
            .iter()
            .map(|p| distance(p.mu, t))
            .fold(f64::INFINITY, f64::min)
    })
}

pub fn fde(sequences: &[ScoredSequence], mode: FdeMode, warmup: usize) -> Result<f64> {
    check(sequences)?;
    match mode {
        FdeMode::FinalStep => {
            let mut sum = CompensatedSum::default();
            let mut count = 0usize;
            for s in sequences {
                if let (Some(set), Some(Some(t))) = (s.predictions.last(), s.targets.last()) {
                    sum.add(distance(set.best().mu, *t));
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::EmptyEvaluation);
            }
            Ok(sum.value() / count as f64)
        }
        FdeMode::Literal => {
            let mut sum = CompensatedSum::default();
            let mut m = 0usize;
            let mut t_max = None;
            for s in sequences {
                let last = s.len().checked_sub(1).filter(|&l| l > warmup);
                let Some(last) = last else { continue };
                let (Some(a), Some(b)) = (s.targets[warmup], s.targets[last]) else {
                    continue;
                };
                if *t_max.get_or_insert(last) != last {
                    return Err(Error::ShapeMismatch(
                        "literal FDE needs equal sequence lengths".into(),
                    ));
                }
                sum.add(distance(s.predictions[warmup].best().mu, a));
                sum.add(distance(s.predictions[last].best().mu, b));
                m += 1;
            }
            let Some(t_max) = t_max else {
                return Err(Error::EmptyEvaluation);
            };
            let denom = (m * t_max) as f64 - 4.0 * m as f64;
            Ok(sum.value() / denom)
        }
    }
}

/// Removes the measurement-noise contribution: `sqrt(metric^2 - sigma_v^2)`.
pub fn noise_correct(metric: f64, sigma_v: f64) -> Result<f64> {
    if metric < sigma_v || sigma_v < 0.0 {
        return Err(Error::NoiseExceedsMetric { metric, sigma_v });
    }
    Ok((metric * metric - sigma_v * sigma_v).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub k: usize,
    pub warmup: usize,
    pub fde_mode: FdeMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            warmup: DEFAULT_WARMUP,
            fde_mode: FdeMode::FinalStep,
        }
    }
}

/// Computes all metrics; `sigma_v` adds noise-corrected values.
pub fn evaluate(
    sequences: &[ScoredSequence],
    config: &MetricConfig,
    sigma_v: Option<f64>,
) -> Result<EvalReport> {
    let ade_v = ade(sequences, config.warmup)?;
    let min_ade_v = min_ade(sequences, config.k, config.warmup)?;
    let fde_v = fde(sequences, config.fde_mode, config.warmup)?;
    let corrected = match sigma_v {
        Some(sv) => Some(CorrectedMetrics {
            ade: noise_correct(ade_v, sv)?,
            min_ade: noise_correct(min_ade_v, sv)?,
            fde: noise_correct(fde_v, sv)?,
        }),
        None => None,
    };
    let evaluated = sequences
        .iter()
        .map(|s| {
            s.targets
                .iter()
                .skip(config.warmup)
                .filter(|t| t.is_some())
                .count()
        })
        .sum();
    let skipped = sequences
        .iter()
        .map(|s| s.targets.iter().filter(|t| t.is_none()).count())
        .sum();
    Ok(EvalReport {
        ade: ade_v,
        min_ade: min_ade_v,
        fde: fde_v,
        k_used: config.k,
        sigma_v,
        corrected,
        samples_evaluated: evaluated,
        samples_skipped_out_of_extent: skipped,
    })
}
