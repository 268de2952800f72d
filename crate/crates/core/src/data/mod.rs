//! Dataset creation and conditioning.

mod examples;
mod generator;
pub mod io;
mod noise;
mod resample;
mod route;

pub use examples::{
    build_example, build_examples, sequence_inputs, ExampleConfig, SequenceExample, SequenceInputs,
};
pub use generator::{
    generate, generate_item, Branch, Dataset, DatasetItem, ForkInfo, ScenarioConfig, ScenarioLabel,
    Split,
};
pub use noise::{estimate_noise, fit_track, NoiseEstimate, RansacConfig, TrackFit};
pub use resample::{resample, resample_100ms};
pub use route::{corridor, Pose, Route, Segment};
