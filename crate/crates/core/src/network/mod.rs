//! The trainable predictor: an embedding + stacked LSTM over the motion
//! features, a CNN over the map raster of each step, and a dense head that
//! emits five values per grid cell.
//!
//! All parameters live in one flat `Vec<f64>` described by a
//! [`ParamLayout`]; gradients use the same layout, which keeps the
//! optimizer and gradient checks trivial.

mod checkpoint;
mod layers;
mod model;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{make_grid, Extent, GridSpec, MapConfig};

pub use checkpoint::Checkpoint;
pub use model::{
    cnn_forward, forward, forward_with_map_features, forward_with_pool_selection, gradients,
    pooling_margin, rnn_forward, score_example, sequence_loss, ForwardTrace, HEAD_CHANNELS,
};
pub use train::{
    evaluate_loss, train, AdamState, EpochLoss, ExampleSource, LazyExamples, OptimizerConfig,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input size followed by the width of every embedding layer.
    pub embedding_sizes: Vec<usize>,
    pub rnn_hidden_sizes: Vec<usize>,
    /// Raster channels followed by the output channels of every conv stage.
    pub cnn_channels: Vec<usize>,
    /// Head input size followed by every dense layer width.
    pub head_sizes: Vec<usize>,
    pub grid_n: usize,
    /// Side length of the square map raster in pixels.
    pub map_pixels: usize,
    /// Map and grid extent in VCS meters.
    pub extent: Extent,
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Fixed per-feature scale applied to `(dx, dy, v, h)` before embedding.
    pub input_scale: [f64; 4],
    pub seed: u64,
}

impl Default for ModelConfig {
    /// The full-size architecture on a 128 x 128 map with a 10 x 10 grid.
    fn default() -> Self {
        Self {
            embedding_sizes: vec![4, 8, 16],
            rnn_hidden_sizes: vec![256, 150],
            cnn_channels: vec![2, 4, 8, 8, 16, 16],
            head_sizes: vec![406, 256, 128, 500],
            grid_n: 10,
            map_pixels: 128,
            extent: Extent::default(),
            horizon: 20,
            input_scale: [1.0, 1.0, 0.1, 10.0],
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Desk-scale variant used for experiments: 4 x 4 grid, 32 x 32 map.
    pub fn toy() -> Self {
        Self {
            rnn_hidden_sizes: vec![32, 24],
            cnn_channels: vec![2, 4, 4, 8, 8, 8],
            head_sizes: vec![32, 64, 32, 80],
            grid_n: 4,
            map_pixels: 32,
            ..Self::default()
        }
    }

    /// Smallest useful variant, for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            embedding_sizes: vec![4, 3],
            rnn_hidden_sizes: vec![4, 3],
            cnn_channels: vec![2, 2, 2, 2, 2, 2],
            head_sizes: vec![5, 6, 20],
            grid_n: 2,
            map_pixels: 32,
            ..Self::default()
        }
    }

    pub fn conv_stages(&self) -> usize {
        self.cnn_channels.len() - 1
    }

    /// Length of the flattened CNN output.
    pub fn cnn_output_size(&self) -> usize {
        let side = self.map_pixels >> self.conv_stages();
        side * side * self.cnn_channels.last().copied().unwrap_or(0)
    }

    pub fn k(&self) -> usize {
        self.grid_n * self.grid_n
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig::with_pixels(self.extent, self.map_pixels)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        make_grid(self.extent, self.grid_n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embedding_sizes.first() != Some(&4) {
            return bad("embedding must start from the 4 motion features".into());
        }
        if self.rnn_hidden_sizes.is_empty()
            || self.cnn_channels.len() < 2
            || self.head_sizes.len() < 2
        {
            return bad("network needs at least one recurrent, conv and dense layer".into());
        }
        if self.cnn_channels[0] != 2 {
            return bad("the map raster has 2 channels".into());
        }
        let stages = self.conv_stages();
        if self.map_pixels == 0 || !self.map_pixels.is_multiple_of(1 << stages) {
            return bad(format!(
                "map_pixels {} must be divisible by 2^{stages}",
                self.map_pixels
            ));
        }
        let want_in = self.cnn_output_size() + self.rnn_hidden_sizes.last().unwrap();
        if self.head_sizes[0] != want_in {
            return bad(format!(
                "head input {} must equal cnn {} + rnn {}",
                self.head_sizes[0],
                self.cnn_output_size(),
                self.rnn_hidden_sizes.last().unwrap()
            ));
        }
        if *self.head_sizes.last().unwrap() != HEAD_CHANNELS * self.k() {
            return bad(format!(
                "head output must be {} x grid_n^2 = {}",
                HEAD_CHANNELS,
                HEAD_CHANNELS * self.k()
            ));
        }
        let sizes = self
            .embedding_sizes
            .iter()
            .chain(&self.rnn_hidden_sizes)
            .chain(&self.cnn_channels)
            .chain(&self.head_sizes);
        if sizes.copied().any(|s| s == 0) || self.grid_n == 0 || self.horizon == 0 {
            return bad("layer sizes, grid_n and horizon must be positive".into());
        }
        self.map_config().shape()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DenseLayout {
    pub w: usize,
    pub b: usize,
    pub inputs: usize,
    pub outputs: usize,
}

/// Gate rows are ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmLayout {
    pub w: usize,
    pub b: usize,
    pub inputs: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvLayout {
    pub w: usize,
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub(crate) embedding: Vec<DenseLayout>,
    pub(crate) lstm: Vec<LstmLayout>,
    pub(crate) conv: Vec<ConvLayout>,
    pub(crate) head: Vec<DenseLayout>,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut offset = 0;
        let mut take = |n: usize| {
            let o = offset;
            offset += n;
            o
        };
        let dense = |sizes: &[usize], take: &mut dyn FnMut(usize) -> usize| -> Vec<DenseLayout> {
            sizes
                .windows(2)
                .map(|w| DenseLayout {
                    w: take(w[0] * w[1]),
                    b: take(w[1]),
                    inputs: w[0],
                    outputs: w[1],
                })
                .collect()
        };
        let embedding = dense(&config.embedding_sizes, &mut take);
        let mut inputs = *config.embedding_sizes.last().unwrap();
        let lstm = config
            .rnn_hidden_sizes
            .iter()
            .map(|&h| {
                let l = LstmLayout {
                    w: take(4 * h * (inputs + h)),
                    b: take(4 * h),
                    inputs,
                    hidden: h,
                };
                inputs = h;
                l
            })
            .collect();
        let conv = config
            .cnn_channels
            .windows(2)
            .map(|c| ConvLayout {
                w: take(c[1] * c[0] * 9),
                b: take(c[1]),
                cin: c[0],
                cout: c[1],
            })
            .collect();
        let head = dense(&config.head_sizes, &mut take);
        Self {
            embedding,
            lstm,
            conv,
            head,
            total: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `(offset, len, fan_in)` of every weight tensor.
    fn weight_blocks(&self) -> Vec<(usize, usize, usize)> {
        let mut blocks = Vec::new();
        for d in self.embedding.iter().chain(&self.head) {
            blocks.push((d.w, d.inputs * d.outputs, d.inputs));
        }
        for l in &self.lstm {
            blocks.push((
                l.w,
                4 * l.hidden * (l.inputs + l.hidden),
                l.inputs + l.hidden,
            ));
        }
        for c in &self.conv {
            blocks.push((c.w, c.cout * c.cin * 9, c.cin * 9));
        }
        blocks
    }

    /// Parameter range of the convolutional encoder.
    pub fn cnn_range(&self) -> std::ops::Range<usize> {
        let start = self.conv.first().map_or(0, |c| c.w);
        let end = self.conv.last().map_or(0, |c| c.b + c.cout);
        start..end
    }
}

/// Model weights together with the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if values.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a model of {}",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("model parameters"));
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let n = ParamLayout::new(&config).len();
        Self::from_values(config, vec![0.0; n])
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bias of output unit `unit` in the last head layer.
    pub fn head_output_bias_mut(&mut self, unit: usize) -> &mut f64 {
        let last = self.layout.head.last().expect("head has layers");
        &mut self.values[last.b + unit]
    }
}

/// Seeded initialisation: weights `N(0, 1) / sqrt(fan_in)`, biases zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (offset, len, fan_in) in params.layout.weight_blocks() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in &mut params.values[offset..offset + len] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * scale;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_dimensions() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.cnn_output_size(), 256);
        assert_eq!(cfg.head_sizes[0], 256 + 150);
        let layout = ParamLayout::new(&cfg);
        let last = layout.head.last().unwrap();
        assert_eq!((last.inputs, last.outputs), (128, 500));
        assert_eq!(last.b - last.w, 128 * 500);
    }

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let bad = ModelConfig {
            head_sizes: vec![400, 256, 128, 500],
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            map_pixels: 100,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::toy();
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, init_params(&cfg, 8).unwrap().values);
        let last = a.layout().head.last().unwrap();
        assert!(a.values[last.b..last.b + last.outputs]
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn layout_is_contiguous() {
        let layout = ParamLayout::new(&ModelConfig::toy());
        let mut blocks: Vec<(usize, usize)> = layout
            .weight_blocks()
            .iter()
            .map(|&(o, l, _)| (o, l))
            .collect();
        for d in layout.embedding.iter().chain(&layout.head) {
            blocks.push((d.b, d.outputs));
        }
        for l in &layout.lstm {
            blocks.push((l.b, 4 * l.hidden));
        }
        for c in &layout.conv {
            blocks.push((c.b, c.cout));
        }
        blocks.sort();
        let mut next = 0;
        for (o, l) in blocks {
            assert_eq!(o, next);
            next = o + l;
        }
        assert_eq!(next, layout.len());
    }
}
