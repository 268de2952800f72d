use serde::{Deserialize, Serialize};

use super::generator::Dataset;
use crate::error::{Error, Result};
use crate::features::{
    features_with_headings, resolve_headings, target_in_frame, InputFeatures, TargetPosition,
    Track, VcsFrame,
};
use crate::map::{rasterize, GridSpec, MapConfig, ScenarioGeometry, StaticMapRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExampleConfig {
    /// Steps per training sequence.
    pub t_max: usize,
    /// Prediction horizon in steps.
    pub horizon: usize,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            t_max: 30,
            horizon: 20,
        }
    }
}

/// One training sequence: per-step inputs, targets and latent classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub features: InputFeatures,
    pub rasters: Vec<StaticMapRaster>,
    pub frames: Vec<VcsFrame>,
    pub targets: Vec<TargetPosition>,
    /// `None` where the target falls outside the grid.
    pub classes: Vec<Option<usize>>,
}

impl SequenceExample {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Model inputs for steps `0..=up_to` of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInputs {
    pub features: InputFeatures,
    pub rasters: Vec<StaticMapRaster>,
    pub frames: Vec<VcsFrame>,
}

/// Features, rasters and frames for steps `0..=up_to`. Headings of
/// stationary steps are carried over from the last moving step.
pub fn sequence_inputs(
    track: &Track,
    geometry: &ScenarioGeometry,
    up_to: usize,
    map: &MapConfig,
) -> Result<SequenceInputs> {
    if up_to >= track.len() {
        return Err(Error::HorizonOutOfRange {
            step: up_to,
            horizon: 0,
            len: track.len(),
        });
    }
    if up_to == 0 {
        return Err(Error::TooShort { len: 1, need: 2 });
    }
    let headings = resolve_headings(track);
    let features = features_with_headings(track, &headings, up_to);
    let frames: Vec<VcsFrame> = (0..=up_to)
        .map(|t| VcsFrame::new(track.position(t), headings[t]))
        .collect();
    let rasters = frames
        .iter()
        .map(|f| rasterize(geometry, f, map))
        .collect::<Result<_>>()?;
    Ok(SequenceInputs {
        features,
        rasters,
        frames,
    })
}

/// Builds the sequence for steps `0..t_max` of a resampled track.
pub fn build_example(
    track: &Track,
    geometry: &ScenarioGeometry,
    config: &ExampleConfig,
    grid: &GridSpec,
    map: &MapConfig,
) -> Result<SequenceExample> {
    let need = config.t_max + config.horizon;
    if track.len() < need || config.t_max < 2 {
        return Err(Error::TooShort {
            len: track.len(),
            need: need.max(2 + config.horizon),
        });
    }
    let inputs = sequence_inputs(track, geometry, config.t_max - 1, map)?;
    let targets: Vec<TargetPosition> = inputs
        .frames
        .iter()
        .enumerate()
        .map(|(t, frame)| target_in_frame(track, frame, t, config.horizon))
        .collect();
    let classes = targets
        .iter()
        .map(|target| grid.assign(target.position()).ok())
        .collect();
    Ok(SequenceExample {
        features: inputs.features,
        rasters: inputs.rasters,
        frames: inputs.frames,
        targets,
        classes,
    })
}

/// Builds one sequence per listed dataset item from its resampled track.
pub fn build_examples(
    dataset: &Dataset,
    indices: &[usize],
    config: &ExampleConfig,
    grid: &GridSpec,
    map: &MapConfig,
) -> Result<Vec<SequenceExample>> {
    indices
        .iter()
        .map(|&i| {
            let item = &dataset.items[i];
            build_example(&item.resampled, &item.geometry, config, grid, map)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{make_grid, Extent};

    fn setup() -> (GridSpec, MapConfig) {
        (
            make_grid(Extent::default(), 10).unwrap(),
            MapConfig::with_pixels(Extent::default(), 32),
        )
    }

    #[test]
    fn fifty_samples_give_thirty_steps() {
        let (grid, map) = setup();
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [i as f64, 0.5 * i as f64]).collect();
        let track = Track::from_positions(0, 100, &pts).unwrap();
        let ex = build_example(
            &track,
            &ScenarioGeometry::default(),
            &ExampleConfig::default(),
            &grid,
            &map,
        )
        .unwrap();
        assert_eq!(ex.len(), 30);
        assert_eq!(ex.features.len(), 30);
        assert_eq!(ex.rasters.len(), 30);
        let short = Track::from_positions(0, 100, &pts[..49]).unwrap();
        assert!(matches!(
            build_example(
                &short,
                &ScenarioGeometry::default(),
                &ExampleConfig::default(),
                &grid,
                &map
            ),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn stationary_track() {
        let (grid, map) = setup();
        let track = Track::from_positions(0, 100, &[[7.0, -3.0]; 50]).unwrap();
        let ex = build_example(
            &track,
            &ScenarioGeometry::default(),
            &ExampleConfig::default(),
            &grid,
            &map,
        )
        .unwrap();
        let origin_cell = grid.assign([0.0, 0.0]).unwrap();
        assert!(ex.targets.iter().all(|t| t.position() == [0.0, 0.0]));
        assert!(ex.classes.iter().all(|&c| c == Some(origin_cell)));
    }

    #[test]
    fn straight_twenty_meters_per_second() {
        let (grid, map) = setup();
        // y = 0 is a grid border, so stay axis-aligned to keep it exact.
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [100.0 + 2.0 * i as f64, -40.0]).collect();
        let track = Track::from_positions(0, 100, &pts).unwrap();
        let ex = build_example(
            &track,
            &ScenarioGeometry::default(),
            &ExampleConfig::default(),
            &grid,
            &map,
        )
        .unwrap();
        let expected = grid.assign([40.0, 0.0]).unwrap();
        for (t, class) in ex.targets.iter().zip(&ex.classes) {
            assert!((t.x - 40.0).abs() < 1e-9 && t.y.abs() < 1e-9);
            assert_eq!(*class, Some(expected));
        }
    }
}
