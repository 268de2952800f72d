use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward, sequence_loss};
use super::{gradients, ModelParams};
use crate::data::{build_example, Dataset, ExampleConfig, SequenceExample};
use crate::error::{Error, Result};
use crate::map::{GridSpec, MapConfig};
use crate::mixture::LossBreakdown;
use crate::numeric::{derive_seed, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global L2 norm the gradient is clipped to; `0` disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Focal exponent of the classification term; `0` is plain cross-entropy.
    pub gamma: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            gamma: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let ok = o.learning_rate > 0.0
            && o.batch_size > 0
            && o.clip_norm >= 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && self.gamma >= 0.0
            && [o.learning_rate, o.clip_norm, self.gamma]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }
}

/// Adam moment estimates, resumable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], o: &OptimizerConfig) {
        self.step += 1;
        let bc1 = 1.0 - o.beta1.powf(self.step as f64);
        let bc2 = 1.0 - o.beta2.powf(self.step as f64);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = o.beta1 * *m + (1.0 - o.beta1) * g;
            *v = o.beta2 * *v + (1.0 - o.beta2) * g * g;
            *p -= o.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + o.eps);
        }
    }
}

/// Mean per-sequence loss of one epoch. Epoch 0 is the evaluation before
/// any update; later entries average the losses seen during the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
}

impl EpochLoss {
    fn new(epoch: usize, l: LossBreakdown) -> Self {
        Self {
            epoch,
            classification: l.classification,
            regression: l.regression,
            total: l.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub adam: AdamState,
    pub curve: Vec<EpochLoss>,
    pub epochs_completed: usize,
}

/// Random access to training sequences.
pub trait ExampleSource {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<Cow<'_, SequenceExample>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ExampleSource for [SequenceExample] {
    fn len(&self) -> usize {
        <[SequenceExample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Cow<'_, SequenceExample>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

impl ExampleSource for Vec<SequenceExample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, SequenceExample>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

/// Builds sequences from dataset items on demand, trading time for memory.
#[derive(Debug, Clone)]
pub struct LazyExamples<'a> {
    pub dataset: &'a Dataset,
    pub indices: Vec<usize>,
    pub config: ExampleConfig,
    pub grid: GridSpec,
    pub map: MapConfig,
}

impl ExampleSource for LazyExamples<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, SequenceExample>> {
        let item = &self.dataset.items[self.indices[index]];
        Ok(Cow::Owned(build_example(
            &item.resampled,
            &item.geometry,
            &self.config,
            &self.grid,
            &self.map,
        )?))
    }
}

/// Mean sequence loss over the whole source without updating anything.
pub fn evaluate_loss<S: ExampleSource + ?Sized>(
    source: &S,
    params: &ModelParams,
    grid: &GridSpec,
    gamma: f64,
) -> Result<LossBreakdown> {
    if source.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let (mut cls, mut reg) = (CompensatedSum::default(), CompensatedSum::default());
    for i in 0..source.len() {
        let ex = source.get(i)?;
        let trace = forward(&ex.features, &ex.rasters, params)?;
        let l = sequence_loss(&trace, &ex.targets, &ex.classes, grid, gamma)?;
        cls.add(l.classification);
        reg.add(l.regression);
    }
    let n = source.len() as f64;
    Ok(LossBreakdown::new(cls.value() / n, reg.value() / n))
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Mini-batch Adam on the mean sequence loss. Passing the state of an
/// earlier run continues it exactly: epochs are numbered from
/// `epochs_done + 1` and shuffled with the same per-epoch seeds.
/// `progress` is called after every curve entry.
pub fn train<S: ExampleSource + ?Sized>(
    source: &S,
    params: ModelParams,
    grid: &GridSpec,
    config: &TrainConfig,
    resume: Option<(AdamState, usize)>,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut params = params;
    let mut curve = Vec::new();
    let (mut adam, epochs_done) = match resume {
        Some((state, done)) => {
            if state.m.len() != params.len() || state.v.len() != params.len() {
                return Err(Error::ShapeMismatch(format!(
                    "optimizer state for {} parameters, model has {}",
                    state.m.len(),
                    params.len()
                )));
            }
            (state, done)
        }
        None => {
            let initial = EpochLoss::new(0, evaluate_loss(source, &params, grid, config.gamma)?);
            progress(&initial);
            curve.push(initial);
            (AdamState::new(params.len()), 0)
        }
    };
    let o = &config.optimizer;
    let mut order: Vec<usize> = (0..source.len()).collect();
    for epoch in epochs_done + 1..=epochs_done + o.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            epoch as u64,
        )));
        let (mut cls, mut reg) = (CompensatedSum::default(), CompensatedSum::default());
        for chunk in order.chunks(o.batch_size) {
            let owned = chunk
                .iter()
                .map(|&i| source.get(i))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<&SequenceExample> = owned.iter().map(|c| c.as_ref()).collect();
            let (loss, mut grad) = gradients(&batch, &params, grid, config.gamma)?;
            let n = chunk.len() as f64;
            cls.add(loss.classification * n);
            reg.add(loss.regression * n);
            clip(&mut grad, o.clip_norm);
            adam.update(&mut params.values, &grad, o);
            if params.values.iter().any(|v| !v.is_finite()) {
                let bad = params.values.iter().filter(|v| !v.is_finite()).count();
                return Err(Error::NonFiniteGradient {
                    loss: loss.total,
                    bad,
                    total: params.len(),
                });
            }
        }
        let n = source.len() as f64;
        let entry = EpochLoss::new(epoch, LossBreakdown::new(cls.value() / n, reg.value() / n));
        progress(&entry);
        curve.push(entry);
    }
    Ok(TrainOutcome {
        params,
        adam,
        curve,
        epochs_completed: epochs_done + o.epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let o = OptimizerConfig::default();
        let mut adam = AdamState::new(2);
        let mut p = vec![1.0, -2.0];
        adam.update(&mut p, &[0.5, -3.0], &o);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![3.0, 4.0];
        clip(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut g = vec![0.3, 0.4];
        clip(&mut g, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
    }
}
