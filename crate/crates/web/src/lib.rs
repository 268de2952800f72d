//! Browser bindings for the interactive demo page in `www/`.
//!
//! Everything is drawn in the vehicle frame with the heading pointing up
//! the screen: screen rows run from `x_max` down to `x_min`, screen columns
//! from `y_max` (left) to `y_min` (right). Images are RGBA, row-major.
//!
//! The plain Rust API (`Scenario`, [`render_mixture`], [`select_modes`])
//! is what the `#[wasm_bindgen]` wrappers call; it builds natively.

use gridmix::data::{build_example, generate_item, ExampleConfig, ScenarioConfig, SequenceExample};
use gridmix::features::Track;
use gridmix::inference::{nms, NmsConfig};
use gridmix::map::{make_grid, Extent, GridSpec, MapConfig, CHANNEL_CENTERLINE, CHANNEL_DRIVEABLE};
use gridmix::mixture::{heatmap, MixtureParams};
use gridmix::{Error, Result};
use wasm_bindgen::prelude::*;

/// Values per mixture component in flat arrays: weight, mu_x, mu_y,
/// sigma_x, sigma_y.
pub const COMPONENT_STRIDE: usize = 5;
/// Values per selected mode: mu_x, mu_y, sigma_x, sigma_y, confidence,
/// source index.
pub const MODE_STRIDE: usize = 6;
const MAP_PIXELS: usize = 64;
const GRID_N: usize = 10;

/// Screen-oriented RGBA image of `nx * ny` map samples, where `nx` counts
/// samples along `x` and `ny` along `y`. `color(ix, iy)` is indexed from
/// the minimum corner.
fn oriented(nx: usize, ny: usize, color: impl Fn(usize, usize) -> [u8; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(nx * ny * 4);
    for screen_row in 0..nx {
        for screen_col in 0..ny {
            out.extend_from_slice(&color(nx - 1 - screen_row, ny - 1 - screen_col));
        }
    }
    out
}

/// Black to red to yellow to white.
fn heat(v: f64) -> [u8; 4] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |lo: f64| (((v - lo) * 3.0).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(0.0), ramp(1.0 / 3.0), ramp(2.0 / 3.0), 255]
}

fn parse_components(flat: &[f64]) -> Result<MixtureParams> {
    if flat.is_empty() || !flat.len().is_multiple_of(COMPONENT_STRIDE) {
        return Err(Error::ShapeMismatch(format!(
            "expected a nonempty multiple of {COMPONENT_STRIDE} values, got {}",
            flat.len()
        )));
    }
    let comps: Vec<&[f64]> = flat.chunks(COMPONENT_STRIDE).collect();
    let total: f64 = comps.iter().map(|c| c[0]).sum();
    if comps.iter().any(|c| c[0] < 0.0 || c[0].is_nan()) || total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidConfig(
            "component weights must be nonnegative with a positive sum".into(),
        ));
    }
    let params = MixtureParams {
        phi: comps.iter().map(|c| c[0] / total).collect(),
        mu_x: comps.iter().map(|c| c[1]).collect(),
        mu_y: comps.iter().map(|c| c[2]).collect(),
        sigma_x: comps.iter().map(|c| c[3]).collect(),
        sigma_y: comps.iter().map(|c| c[4]).collect(),
    };
    params.validate()?;
    Ok(params)
}

/// Mixture density over the default map extent, log-scaled over four
/// decades below the peak. Weights are normalised.
pub fn render_mixture(components: &[f64], resolution: f64) -> Result<(usize, usize, Vec<u8>)> {
    let params = parse_components(components)?;
    let map = heatmap(&params, Extent::default(), resolution)?;
    let max = map.values.iter().copied().fold(0.0, f64::max);
    let rgba = oriented(map.width, map.height, |ix, iy| {
        let v = map.get(iy, ix);
        if max <= 0.0 || v <= 0.0 {
            return heat(0.0);
        }
        heat(1.0 + (v / max).log10() / 4.0)
    });
    // Screen width runs along y, screen height along x.
    Ok((map.height, map.width, rgba))
}

/// Greedy NMS over the components, flattened with [`MODE_STRIDE`].
pub fn select_modes(components: &[f64], alpha: f64, iou_threshold: f64) -> Result<Vec<f64>> {
    let params = parse_components(components)?;
    let set = nms(
        &params,
        &NmsConfig {
            alpha,
            iou_threshold,
        },
    );
    Ok(set
        .predictions
        .iter()
        .flat_map(|p| {
            [
                p.mu[0],
                p.mu[1],
                p.sigma[0],
                p.sigma[1],
                p.confidence,
                p.source_cell as f64,
            ]
        })
        .collect())
}

/// A synthetic scenario prepared as one training sequence.
#[wasm_bindgen]
pub struct Scenario {
    track: Track,
    example: SequenceExample,
    grid: GridSpec,
}

impl Scenario {
    /// `kind` is `straight`, `turn` or `fork`.
    pub fn generate(kind: &str, seed: u64) -> Result<Self> {
        let base = ScenarioConfig {
            n_tracks: 1,
            seed,
            ..ScenarioConfig::default()
        };
        let config = match kind {
            "straight" => ScenarioConfig {
                fraction_straight: 1.0,
                ..base
            },
            "turn" => ScenarioConfig {
                fraction_straight: 0.0,
                fork_probability: 0.0,
                ..base
            },
            "fork" => ScenarioConfig {
                fraction_straight: 0.0,
                fork_probability: 1.0,
                ..base
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown scenario kind {other:?}"
                )))
            }
        };
        let item = generate_item(&config, 0)?;
        let extent = Extent::default();
        let grid = make_grid(extent, GRID_N)?;
        let example = build_example(
            &item.resampled,
            &item.geometry,
            &ExampleConfig::default(),
            &grid,
            &MapConfig::with_pixels(extent, MAP_PIXELS),
        )?;
        Ok(Self {
            track: item.resampled,
            example,
            grid,
        })
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step < self.example.len() {
            Ok(())
        } else {
            Err(Error::HorizonOutOfRange {
                step,
                horizon: 0,
                len: self.example.len(),
            })
        }
    }

    /// Map raster of `step` as screen RGBA: road gray, centerlines white.
    pub fn map_image(&self, step: usize) -> Result<Vec<u8>> {
        self.check_step(step)?;
        let raster = &self.example.rasters[step];
        Ok(oriented(raster.width(), raster.height(), |ix, iy| {
            if raster.get(CHANNEL_CENTERLINE, iy, ix) == 1 {
                [235, 235, 235, 255]
            } else if raster.get(CHANNEL_DRIVEABLE, iy, ix) == 1 {
                [90, 90, 96, 255]
            } else {
                [24, 40, 28, 255]
            }
        }))
    }

    /// Positions of steps `0..=step` in the vehicle frame of `step`.
    pub fn history(&self, step: usize) -> Result<Vec<f64>> {
        self.check_step(step)?;
        let frame = &self.example.frames[step];
        Ok((0..=step)
            .flat_map(|i| frame.to_vcs(self.track.position(i)))
            .collect())
    }

    /// Ground-truth target `[x, y]` followed by its latent cell, or `-1`
    /// when it lies outside the grid.
    pub fn target(&self, step: usize) -> Result<Vec<f64>> {
        self.check_step(step)?;
        let t = self.example.targets[step];
        let cell = self.example.classes[step].map_or(-1.0, |c| c as f64);
        Ok(vec![t.x, t.y, cell])
    }

    /// Input feature vector `[dx, dy, v, h]` of `step`.
    pub fn features(&self, step: usize) -> Result<Vec<f64>> {
        self.check_step(step)?;
        Ok(self.example.features.steps[step].as_array().to_vec())
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Scenario {
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u64) -> std::result::Result<Scenario, JsError> {
        Self::generate(kind, seed).map_err(js)
    }

    pub fn steps(&self) -> usize {
        self.example.len()
    }

    /// Map image side length in pixels.
    pub fn map_pixels(&self) -> usize {
        MAP_PIXELS
    }

    /// Number of grid cells per side.
    pub fn grid_n(&self) -> usize {
        self.grid.n()
    }

    #[wasm_bindgen(js_name = mapImage)]
    pub fn map_image_js(&self, step: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.map_image(step).map_err(js)
    }

    #[wasm_bindgen(js_name = history)]
    pub fn history_js(&self, step: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.history(step).map_err(js)
    }

    #[wasm_bindgen(js_name = target)]
    pub fn target_js(&self, step: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.target(step).map_err(js)
    }

    #[wasm_bindgen(js_name = features)]
    pub fn features_js(&self, step: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.features(step).map_err(js)
    }
}

/// Map extent `[x_min, x_max, y_min, y_max]` in meters.
#[wasm_bindgen(js_name = mapExtent)]
pub fn map_extent() -> Vec<f64> {
    let e = Extent::default();
    vec![e.x_min, e.x_max, e.y_min, e.y_max]
}

/// Screen RGBA heatmap; the side lengths are `mapExtent` spans divided by
/// `resolution`.
#[wasm_bindgen(js_name = mixtureImage)]
pub fn mixture_image(components: &[f64], resolution: f64) -> std::result::Result<Vec<u8>, JsError> {
    render_mixture(components, resolution)
        .map(|(_, _, rgba)| rgba)
        .map_err(js)
}

#[wasm_bindgen(js_name = selectModes)]
pub fn select_modes_js(
    components: &[f64],
    alpha: f64,
    iou_threshold: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    select_modes(components, alpha, iou_threshold).map_err(js)
}
