//! Vehicle coordinate frames, recurrent input features and regression
//! targets.
//!
//! Conventions: the vehicle coordinate system (VCS) of step `t` has its
//! origin at the position of step `t`, `+x` along the vehicle heading and
//! `+y` to the vehicle's left. Headings are measured counter-clockwise from
//! the global `+x` axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::wrap_angle;

/// One timestamped position in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp_ms: i64,
    pub x: f64,
    pub y: f64,
    /// Global heading in radians, when the source recorded one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

impl Sample {
    pub fn new(timestamp_ms: i64, x: f64, y: f64) -> Self {
        Self {
            timestamp_ms,
            x,
            y,
            heading: None,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Timestamped global-frame positions of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Sample>", into = "Vec<Sample>")]
pub struct Track {
    samples: Vec<Sample>,
}

impl Track {
    /// Validates strict timestamp ordering and the two-sample minimum.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooShort {
                len: samples.len(),
                need: 2,
            });
        }
        if let Some(i) = samples
            .windows(2)
            .position(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
        {
            return Err(Error::InvalidConfig(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        if samples.iter().any(|s| !s.x.is_finite() || !s.y.is_finite()) {
            return Err(Error::NonFiniteInput("track position"));
        }
        Ok(Self { samples })
    }

    /// Builds a track sampled every `interval_ms` starting at `t0_ms`.
    pub fn from_positions(t0_ms: i64, interval_ms: i64, positions: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            positions
                .iter()
                .enumerate()
                .map(|(i, p)| Sample::new(t0_ms + i as i64 * interval_ms, p[0], p[1]))
                .collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.samples[i].position()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.samples.iter().map(|s| s.timestamp_ms)
    }

    /// Applies a global rotation about the origin followed by a translation;
    /// recorded headings rotate with the track.
    pub fn transformed(&self, rotation: f64, translation: [f64; 2]) -> Self {
        let (s, c) = rotation.sin_cos();
        let samples = self
            .samples
            .iter()
            .map(|p| Sample {
                timestamp_ms: p.timestamp_ms,
                x: c * p.x - s * p.y + translation[0],
                y: s * p.x + c * p.y + translation[1],
                heading: p.heading.map(|h| wrap_angle(h + rotation)),
            })
            .collect();
        Self { samples }
    }
}

impl TryFrom<Vec<Sample>> for Track {
    type Error = Error;

    fn try_from(samples: Vec<Sample>) -> Result<Self> {
        Self::new(samples)
    }
}

impl From<Track> for Vec<Sample> {
    fn from(track: Track) -> Self {
        track.samples
    }
}

/// Rigid frame attached to the vehicle at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcsFrame {
    origin: [f64; 2],
    heading: f64,
}

impl VcsFrame {
    pub fn new(origin: [f64; 2], heading: f64) -> Self {
        Self {
            origin,
            heading: wrap_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::new([0.0, 0.0], 0.0)
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// Heading in `(-pi, pi]`.
    pub fn heading(&self) -> f64 {
        self.heading
    }

    /// Global point expressed in this frame.
    pub fn to_vcs(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn from_vcs(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [
            c * p[0] - s * p[1] + self.origin[0],
            s * p[0] + c * p[1] + self.origin[1],
        ]
    }

    /// Rotates a displacement (not a point) into this frame.
    pub fn rotate_to_vcs(&self, d: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }
}

/// Free-function form of [`VcsFrame::to_vcs`].
pub fn to_vcs(point: [f64; 2], frame: &VcsFrame) -> [f64; 2] {
    frame.to_vcs(point)
}

/// One step of the recurrent input: displacement in the VCS of the step,
/// speed, and heading change since the previous step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureStep {
    pub dx: f64,
    pub dy: f64,
    pub v: f64,
    pub h: f64,
}

impl FeatureStep {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.v, self.h]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InputFeatures {
    pub steps: Vec<FeatureStep>,
}

impl InputFeatures {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Future position `horizon` steps ahead, in the VCS of the current step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPosition {
    pub x: f64,
    pub y: f64,
    pub horizon: usize,
}

impl TargetPosition {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Heading at step `t`: the recorded one if present, otherwise the direction
/// of the displacement from `t - 1`.
pub fn heading_at(track: &Track, t: usize) -> Result<f64> {
    if t >= track.len() {
        return Err(Error::HorizonOutOfRange {
            step: t,
            horizon: 0,
            len: track.len(),
        });
    }
    if let Some(h) = track.samples[t].heading {
        return Ok(wrap_angle(h));
    }
    if t == 0 {
        return Err(Error::DegenerateHeading { step: 0 });
    }
    let (a, b) = (track.position(t - 1), track.position(t));
    let d = [b[0] - a[0], b[1] - a[1]];
    if d[0] == 0.0 && d[1] == 0.0 {
        return Err(Error::DegenerateHeading { step: t });
    }
    Ok(d[1].atan2(d[0]))
}

pub fn vcs_frame_at(track: &Track, t: usize) -> Result<VcsFrame> {
    let heading = heading_at(track, t)?;
    Ok(VcsFrame::new(track.position(t), heading))
}

/// Headings for every step without failing on stationary stretches: a
/// missing heading is carried forward from the last known one, leading
/// unknowns take the first known heading, and a track that never moves gets
/// heading 0.
pub fn resolve_headings(track: &Track) -> Vec<f64> {
    let n = track.len();
    let mut known: Vec<Option<f64>> = (0..n).map(|t| heading_at(track, t).ok()).collect();
    let first = known.iter().flatten().next().copied().unwrap_or(0.0);
    let mut last = first;
    for h in known.iter_mut() {
        match h {
            Some(v) => last = *v,
            None => *h = Some(last),
        }
    }
    known.into_iter().map(|h| h.unwrap_or(first)).collect()
}

/// Strict headings for steps `0..=up_to`. Step 0 uses its recorded heading
/// or, failing that, the heading of step 1.
fn strict_headings(track: &Track, up_to: usize) -> Result<Vec<f64>> {
    let mut headings = Vec::with_capacity(up_to + 1);
    headings.push(0.0);
    for t in 1..=up_to {
        headings.push(heading_at(track, t)?);
    }
    headings[0] = match track.samples[0].heading {
        Some(h) => wrap_angle(h),
        None => headings[1],
    };
    Ok(headings)
}

/// Input features for steps `0..=up_to`, failing on stationary steps.
pub fn compute_features(track: &Track, up_to: usize) -> Result<InputFeatures> {
    if up_to == 0 {
        return Err(Error::TooShort { len: 1, need: 2 });
    }
    if up_to >= track.len() {
        return Err(Error::HorizonOutOfRange {
            step: up_to,
            horizon: 0,
            len: track.len(),
        });
    }
    let headings = strict_headings(track, up_to)?;
    Ok(features_with_headings(track, &headings, up_to))
}

/// Input features for steps `0..=up_to` given one heading per step.
pub fn features_with_headings(track: &Track, headings: &[f64], up_to: usize) -> InputFeatures {
    assert!(up_to >= 1 && up_to < track.len() && headings.len() > up_to);
    let mut steps = Vec::with_capacity(up_to + 1);
    steps.push(FeatureStep::default());
    for tau in 1..=up_to {
        let (a, b) = (track.samples[tau - 1], track.samples[tau]);
        let d = [b.x - a.x, b.y - a.y];
        let local = VcsFrame::new(b.position(), headings[tau]).rotate_to_vcs(d);
        let dt = (b.timestamp_ms - a.timestamp_ms) as f64 / 1000.0;
        steps.push(FeatureStep {
            dx: local[0],
            dy: local[1],
            v: d[0].hypot(d[1]) / dt,
            h: wrap_angle(headings[tau] - headings[tau - 1]),
        });
    }
    steps[0].v = steps[1].v;
    InputFeatures { steps }
}

/// Position at `t + horizon` in the VCS of step `t`.
pub fn ground_truth_target(track: &Track, t: usize, horizon: usize) -> Result<TargetPosition> {
    if t + horizon >= track.len() {
        return Err(Error::HorizonOutOfRange {
            step: t,
            horizon,
            len: track.len(),
        });
    }
    let frame = vcs_frame_at(track, t)?;
    Ok(target_in_frame(track, &frame, t, horizon))
}

pub fn target_in_frame(
    track: &Track,
    frame: &VcsFrame,
    t: usize,
    horizon: usize,
) -> TargetPosition {
    let [x, y] = frame.to_vcs(track.position(t + horizon));
    TargetPosition { x, y, horizon }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    fn line(n: usize, step: [f64; 2]) -> Track {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|i| [i as f64 * step[0], i as f64 * step[1]])
            .collect();
        Track::from_positions(0, 100, &pts).unwrap()
    }

    #[test]
    fn frame_along_x() {
        let track = line(6, [1.0, 0.0]);
        let f = vcs_frame_at(&track, 3).unwrap();
        assert_eq!(f.origin(), [3.0, 0.0]);
        assert_eq!(f.heading(), 0.0);
    }

    #[test]
    fn frame_rotated_quarter_turn() {
        let track = line(6, [1.0, 0.0]).transformed(FRAC_PI_2, [0.0, 0.0]);
        let f = vcs_frame_at(&track, 3).unwrap();
        assert!(f.origin()[0].abs() < 1e-12 && (f.origin()[1] - 3.0).abs() < 1e-12);
        assert!((f.heading() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn stationary_pair_is_degenerate() {
        let track = Track::from_positions(0, 100, &[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            vcs_frame_at(&track, 1),
            Err(Error::DegenerateHeading { step: 1 })
        ));
    }

    #[test]
    fn explicit_heading_wins() {
        let mut samples: Vec<Sample> = (0..3).map(|i| Sample::new(i * 100, 1.0, 1.0)).collect();
        samples[2].heading = Some(3.0 * PI);
        let track = Track::new(samples).unwrap();
        let f = vcs_frame_at(&track, 2).unwrap();
        assert!((f.heading() - PI).abs() < 1e-12);
    }

    #[test]
    fn to_vcs_examples() {
        assert_eq!(
            VcsFrame::new([3.0, 0.0], 0.0).to_vcs([5.0, 0.0]),
            [2.0, 0.0]
        );
        let p = VcsFrame::new([0.0, 0.0], FRAC_PI_2).to_vcs([0.0, 1.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
        assert_eq!(to_vcs([-4.5, 7.25], &VcsFrame::identity()), [-4.5, 7.25]);
        let f = VcsFrame::new([3.0, -2.0], 0.7);
        assert_eq!(f.to_vcs(f.origin()), [0.0, 0.0]);
    }

    #[test]
    fn constant_velocity_features() {
        let track = line(10, [0.2, 0.0]);
        let feats = compute_features(&track, 9).unwrap();
        assert_eq!(feats.len(), 10);
        for s in &feats.steps[1..] {
            assert!((s.dx - 0.2).abs() < 1e-12);
            assert_eq!(s.dy, 0.0);
            assert!((s.v - 2.0).abs() < 1e-12);
            assert_eq!(s.h, 0.0);
        }
        assert_eq!(
            feats.steps[0],
            FeatureStep {
                dx: 0.0,
                dy: 0.0,
                v: feats.steps[1].v,
                h: 0.0
            }
        );
    }

    #[test]
    fn features_propagate_degenerate_heading() {
        let track = Track::from_positions(0, 100, &[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(
            compute_features(&track, 2),
            Err(Error::DegenerateHeading { step: 2 })
        ));
    }

    #[test]
    fn target_examples() {
        let track = line(30, [0.2, 0.0]);
        let t = ground_truth_target(&track, 5, 20).unwrap();
        assert!((t.x - 4.0).abs() < 1e-12 && t.y == 0.0 && t.horizon == 20);
        assert!(matches!(
            ground_truth_target(&track, 10, 20),
            Err(Error::HorizonOutOfRange { .. })
        ));
    }

    #[test]
    fn stopping_vehicle_target_is_origin() {
        let mut pts: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 0.0]).collect();
        pts.extend(std::iter::repeat_n([4.0, 0.0], 10));
        let track = Track::from_positions(0, 100, &pts).unwrap();
        let t = ground_truth_target(&track, 4, 5).unwrap();
        assert_eq!(t.position(), [0.0, 0.0]);
    }

    #[test]
    fn resolve_headings_carries_forward() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let track = Track::from_positions(0, 100, &pts).unwrap();
        let h = resolve_headings(&track);
        assert!(h.iter().all(|&v| (v - FRAC_PI_2).abs() < 1e-12));
        let still = Track::from_positions(0, 100, &[[2.0, 2.0]; 4]).unwrap();
        assert_eq!(resolve_headings(&still), vec![0.0; 4]);
    }

    #[test]
    fn track_validation() {
        assert!(matches!(
            Track::from_positions(0, 100, &[[0.0, 0.0]]),
            Err(Error::TooShort { .. })
        ));
        let s = vec![Sample::new(100, 0.0, 0.0), Sample::new(100, 1.0, 0.0)];
        assert!(Track::new(s).is_err());
    }
}
