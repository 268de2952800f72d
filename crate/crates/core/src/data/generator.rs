//! Deterministic synthetic driving scenarios.
//!
//! Three motifs: straight driving, a single constant-radius turn, and a
//! Y-fork where an identical approach is followed by one of two branches.
//! Every track draws from its own RNG stream derived from `(seed, index)`,
//! so generation order does not matter.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::resample::resample_100ms;
use super::route::{corridor, Pose, Route, Segment};
use crate::error::{Error, Result};
use crate::features::{Sample, Track};
use crate::map::ScenarioGeometry;
use crate::numeric::derive_seed;
use crate::SAMPLE_INTERVAL_MS;

/// Road half-width used for driveable corridors, meters.
const LANE_HALF_WIDTH: f64 = 3.5;
/// Road drawn behind the first sample so the map is not empty behind the car.
const PRE_ROLL: f64 = 30.0;
/// Road drawn beyond the last sample.
const POST_ROLL: f64 = 60.0;
/// Interior timestamps are jittered at most this far from the nominal grid.
const MAX_JITTER_MS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_tracks: usize,
    pub fraction_straight: f64,
    /// Probability that a non-straight track is a fork rather than a turn.
    pub fork_probability: f64,
    /// Probability of taking the left branch of a fork.
    pub branch_left_probability: f64,
    /// Meters per second.
    pub speed_range: [f64; 2],
    /// Meters.
    pub turn_radius_range: [f64; 2],
    /// Standard deviation of position noise per axis, meters.
    pub noise_sigma: f64,
    /// Standard deviation of timestamp jitter, milliseconds.
    pub jitter_sigma: f64,
    pub samples_per_track: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tracks: 2500,
            fraction_straight: 0.3,
            fork_probability: 0.5,
            branch_left_probability: 0.5,
            speed_range: [5.0, 15.0],
            turn_radius_range: [15.0, 40.0],
            noise_sigma: 0.2,
            jitter_sigma: 5.0,
            samples_per_track: 50,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!(
                    "{name} = {v} must lie in [0, 1]"
                )))
            }
        };
        unit("fraction_straight", self.fraction_straight)?;
        unit("fork_probability", self.fork_probability)?;
        unit("branch_left_probability", self.branch_left_probability)?;
        unit("test_fraction", self.test_fraction)?;
        for (name, [lo, hi]) in [
            ("speed_range", self.speed_range),
            ("turn_radius_range", self.turn_radius_range),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} [{lo}, {hi}] must be a nonempty positive range"
                )));
            }
        }
        if self.turn_radius_range[0] <= LANE_HALF_WIDTH {
            return Err(Error::InvalidConfig(
                "turn radius must exceed the lane half-width".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise and jitter must be nonnegative".into(),
            ));
        }
        if self.samples_per_track < 2 {
            return Err(Error::InvalidConfig(
                "samples_per_track must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioLabel {
    Straight,
    Turn,
    Fork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Left,
    Right,
}

/// Fork bookkeeping: where the branches split and the track the vehicle
/// would have produced on the other branch (same timestamps and noise).
#[derive(Debug, Clone, PartialEq)]
pub struct ForkInfo {
    /// Sample index at which the vehicle reaches the fork point.
    pub fork_index: usize,
    pub branch: Branch,
    pub alternate_raw: Track,
    pub alternate_resampled: Track,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: u64,
    pub label: ScenarioLabel,
    pub raw: Track,
    pub resampled: Track,
    pub geometry: ScenarioGeometry,
    pub fork: Option<ForkInfo>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// The last `round(n * test_fraction)` items form the test set.
    pub fn tail(n: usize, test_fraction: f64) -> Self {
        let n_test = ((n as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(n);
        Self {
            train: (0..n - n_test).collect(),
            test: (n - n_test..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub items: Vec<DatasetItem>,
    pub split: Split,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &DatasetItem> {
        self.split.train.iter().map(|&i| &self.items[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &DatasetItem> {
        self.split.test.iter().map(|&i| &self.items[i])
    }
}

pub fn generate(config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    let items = (0..config.n_tracks)
        .map(|i| generate_item(config, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        items,
        split: Split::tail(config.n_tracks, config.test_fraction),
    })
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates track `id` of the dataset described by `config`.
pub fn generate_item(config: &ScenarioConfig, id: u64) -> Result<DatasetItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, id));
    let n = config.samples_per_track;
    let duration_s = (n - 1) as f64 * SAMPLE_INTERVAL_MS as f64 / 1000.0;

    let label = if rng.random::<f64>() < config.fraction_straight {
        ScenarioLabel::Straight
    } else if rng.random::<f64>() < config.fork_probability {
        ScenarioLabel::Fork
    } else {
        ScenarioLabel::Turn
    };
    let speed = uniform(&mut rng, config.speed_range);
    let radius = uniform(&mut rng, config.turn_radius_range);
    let rotation = rng.random_range(-PI..PI);
    let origin = [
        rng.random_range(-500.0..500.0),
        rng.random_range(-500.0..500.0),
    ];
    let left = rng.random::<f64>() < config.branch_left_probability;
    let event_index = match label {
        ScenarioLabel::Straight => 0,
        ScenarioLabel::Turn => rng.random_range(5..=25usize).min(n - 1),
        ScenarioLabel::Fork => rng.random_range(10..=22usize).min(n - 1),
    };

    let travel = speed * duration_s;
    let approach = PRE_ROLL + speed * event_index as f64 * SAMPLE_INTERVAL_MS as f64 / 1000.0;
    let tail = Segment::Straight {
        length: travel + POST_ROLL,
    };
    let build = |turn_angle: f64| -> Route {
        let mut segments = vec![Segment::Straight {
            length: if label == ScenarioLabel::Straight {
                PRE_ROLL
            } else {
                approach
            },
        }];
        if turn_angle != 0.0 {
            segments.push(Segment::Arc {
                radius,
                angle: turn_angle,
            });
        }
        segments.push(tail);
        Route::new(origin, rotation, segments)
    };
    let sign = if left { 1.0 } else { -1.0 };
    let (route, alternate_route) = match label {
        ScenarioLabel::Straight => (build(0.0), None),
        ScenarioLabel::Turn => (build(sign * FRAC_PI_2), None),
        ScenarioLabel::Fork => (build(sign * FRAC_PI_4), Some(build(-sign * FRAC_PI_4))),
    };

    // Timing and noise are shared by both fork branches.
    let jitter = Normal::new(0.0, config.jitter_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let timestamps: Vec<i64> = (0..n)
        .map(|i| {
            let nominal = i as i64 * SAMPLE_INTERVAL_MS;
            if i == 0 || i == n - 1 || config.jitter_sigma == 0.0 {
                nominal
            } else {
                nominal
                    + jitter
                        .sample(&mut rng)
                        .clamp(-MAX_JITTER_MS, MAX_JITTER_MS)
                        .round() as i64
            }
        })
        .collect();
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let offsets: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            if config.noise_sigma == 0.0 {
                [0.0, 0.0]
            } else {
                [noise.sample(&mut rng), noise.sample(&mut rng)]
            }
        })
        .collect();

    let make_track = |route: &Route| -> Result<Track> {
        let samples = timestamps
            .iter()
            .zip(&offsets)
            .map(|(&t, o)| {
                let p = route.pose_at(PRE_ROLL + speed * t as f64 / 1000.0).position;
                Sample::new(t, p[0] + o[0], p[1] + o[1])
            })
            .collect();
        Track::new(samples)
    };
    let raw = make_track(&route)?;
    let resampled = resample_100ms(&raw)?;

    let road_end = PRE_ROLL + travel + POST_ROLL;
    let spacing = 1.0;
    let mut geometry = ScenarioGeometry::default();
    match &alternate_route {
        None => {
            let poses = route.sample(0.0, road_end, spacing);
            geometry
                .driveable_polygons
                .push(corridor(&poses, LANE_HALF_WIDTH));
            geometry
                .centerlines
                .push(poses.iter().map(|p| p.position).collect());
        }
        Some(alt) => {
            let trunk = route.sample(0.0, approach, spacing);
            geometry
                .driveable_polygons
                .push(corridor(&trunk, LANE_HALF_WIDTH));
            geometry
                .centerlines
                .push(trunk.iter().map(|p| p.position).collect());
            for r in [&route, alt] {
                let branch: Vec<Pose> = r.sample(approach, road_end, spacing);
                geometry
                    .driveable_polygons
                    .push(corridor(&branch, LANE_HALF_WIDTH));
                geometry
                    .centerlines
                    .push(branch.iter().map(|p| p.position).collect());
            }
        }
    }

    let fork = match alternate_route {
        Some(alt) => {
            let alternate_raw = make_track(&alt)?;
            let alternate_resampled = resample_100ms(&alternate_raw)?;
            Some(ForkInfo {
                fork_index: event_index,
                branch: if left { Branch::Left } else { Branch::Right },
                alternate_raw,
                alternate_resampled,
            })
        }
        None => None,
    };
    Ok(DatasetItem {
        id,
        label,
        raw,
        resampled,
        geometry,
        fork,
    })
}
