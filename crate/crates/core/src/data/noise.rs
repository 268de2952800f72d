//! Measurement-noise estimation by robust polynomial fitting.
//!
//! Each raw track is approximated by a pair of polynomials `x(t), y(t)` in
//! the exact sample time. RANSAC draws minimal subsets, scores them by the
//! number of points within `inlier_threshold` (2-D distance), and polishes
//! every improving hypothesis by least-squares refits on its inliers. The
//! noise level is the per-axis RMS residual over all inliers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Track;
use crate::numeric::{derive_seed, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Meters.
    pub inlier_threshold: f64,
    pub degree: usize,
    /// Points per minimal subset; at least `degree + 1`.
    pub subset_size: usize,
    /// Minimum consensus as a fraction of the track length.
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold: 1.0,
            degree: 6,
            subset_size: 7,
            min_inlier_fraction: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// Per-axis standard deviation of the measurement noise, meters.
    pub sigma_v: f64,
    /// Per-axis RMS inlier residual of every track, meters.
    pub per_track_residuals: Vec<f64>,
    pub inlier_fraction: f64,
}

/// Polynomial pair fitted to one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFit {
    coeff_x: DVector<f64>,
    coeff_y: DVector<f64>,
    t_mid: f64,
    t_half: f64,
    pub inliers: Vec<bool>,
}

impl TrackFit {
    pub fn evaluate(&self, t_ms: f64) -> [f64; 2] {
        let u = (t_ms - self.t_mid) / self.t_half;
        let horner = |c: &DVector<f64>| c.iter().rev().fold(0.0, |acc, &a| acc * u + a);
        [horner(&self.coeff_x), horner(&self.coeff_y)]
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

struct Problem {
    /// Vandermonde rows in normalised time.
    basis: DMatrix<f64>,
    xs: DVector<f64>,
    ys: DVector<f64>,
    t_mid: f64,
    t_half: f64,
}

impl Problem {
    fn new(track: &Track, degree: usize) -> Self {
        let ts: Vec<f64> = track.timestamps().map(|t| t as f64).collect();
        let (first, last) = (ts[0], ts[ts.len() - 1]);
        let t_mid = 0.5 * (first + last);
        let t_half = (0.5 * (last - first)).max(1.0);
        let n = ts.len();
        let basis = DMatrix::from_fn(n, degree + 1, |i, j| {
            ((ts[i] - t_mid) / t_half).powi(j as i32)
        });
        let xs = DVector::from_iterator(n, track.samples().iter().map(|s| s.x));
        let ys = DVector::from_iterator(n, track.samples().iter().map(|s| s.y));
        Self {
            basis,
            xs,
            ys,
            t_mid,
            t_half,
        }
    }

    fn fit(&self, rows: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let a = self.basis.select_rows(rows);
        let svd = a.svd(true, true);
        let cx = svd.solve(&self.xs.select_rows(rows), 1e-12).ok()?;
        let cy = svd.solve(&self.ys.select_rows(rows), 1e-12).ok()?;
        Some((cx, cy))
    }

    fn squared_residuals(&self, cx: &DVector<f64>, cy: &DVector<f64>) -> Vec<f64> {
        let rx = &self.basis * cx - &self.xs;
        let ry = &self.basis * cy - &self.ys;
        rx.iter()
            .zip(ry.iter())
            .map(|(a, b)| a * a + b * b)
            .collect()
    }
}

/// Inlier rows, their cost and the fitted coefficients.
type Hypothesis = (Vec<usize>, f64, DVector<f64>, DVector<f64>);

fn inlier_rows(sq: &[f64], threshold: f64) -> Vec<usize> {
    let t2 = threshold * threshold;
    sq.iter()
        .enumerate()
        .filter(|(_, &d)| d < t2)
        .map(|(i, _)| i)
        .collect()
}

/// Robust polynomial fit of one track; `stream` selects the RNG stream.
pub fn fit_track(track: &Track, config: &RansacConfig, stream: u64) -> Result<TrackFit> {
    let n = track.len();
    let params = config.degree + 1;
    let subset = config.subset_size.max(params);
    let required = ((config.min_inlier_fraction * n as f64).ceil() as usize).max(params);
    if n < 2 * params {
        return Err(Error::FitFailure {
            track: stream as usize,
            inliers: 0,
            required: 2 * params,
        });
    }
    let problem = Problem::new(track, config.degree);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream));

    let mut best: Option<Hypothesis> = None;
    let better = |count: usize, cost: f64, best: &Option<Hypothesis>| match best {
        None => true,
        Some((rows, c, _, _)) => count > rows.len() || (count == rows.len() && cost < *c),
    };
    for _ in 0..config.iterations {
        let mut rows = sample(&mut rng, n, subset).into_vec();
        rows.sort_unstable();
        let Some((mut cx, mut cy)) = problem.fit(&rows) else {
            continue;
        };
        let mut sq = problem.squared_residuals(&cx, &cy);
        let mut inliers = inlier_rows(&sq, config.inlier_threshold);
        let score = |inl: &[usize], sq: &[f64]| inl.iter().map(|&i| sq[i]).sum::<f64>();
        if !better(inliers.len(), score(&inliers, &sq), &best) {
            continue;
        }
        // Local optimisation: refit on the consensus until it stops growing.
        for _ in 0..10 {
            if inliers.len() < params {
                break;
            }
            let Some((rx, ry)) = problem.fit(&inliers) else {
                break;
            };
            let rsq = problem.squared_residuals(&rx, &ry);
            let refit = inlier_rows(&rsq, config.inlier_threshold);
            if refit.len() < inliers.len() || refit == inliers {
                if refit == inliers {
                    (cx, cy, sq) = (rx, ry, rsq);
                }
                break;
            }
            (cx, cy, sq, inliers) = (rx, ry, rsq, refit);
        }
        let cost = score(&inliers, &sq);
        if better(inliers.len(), cost, &best) {
            best = Some((inliers, cost, cx, cy));
        }
    }
    let Some((rows, _, cx, cy)) = best else {
        return Err(Error::FitFailure {
            track: stream as usize,
            inliers: 0,
            required,
        });
    };
    if rows.len() < required {
        return Err(Error::FitFailure {
            track: stream as usize,
            inliers: rows.len(),
            required,
        });
    }
    let mut mask = vec![false; n];
    rows.iter().for_each(|&i| mask[i] = true);
    Ok(TrackFit {
        coeff_x: cx,
        coeff_y: cy,
        t_mid: problem.t_mid,
        t_half: problem.t_half,
        inliers: mask,
    })
}

/// Estimates the per-axis measurement noise over a set of raw tracks.
pub fn estimate_noise(tracks: &[Track], config: &RansacConfig) -> Result<NoiseEstimate> {
    if tracks.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut total = CompensatedSum::default();
    let mut inliers = 0usize;
    let mut points = 0usize;
    let mut per_track = Vec::with_capacity(tracks.len());
    for (i, track) in tracks.iter().enumerate() {
        let fit = fit_track(track, config, i as u64)?;
        let mut sum = CompensatedSum::default();
        for (s, _) in track.samples().iter().zip(&fit.inliers).filter(|(_, &m)| m) {
            let [fx, fy] = fit.evaluate(s.timestamp_ms as f64);
            let d2 = (s.x - fx).powi(2) + (s.y - fy).powi(2);
            sum.add(d2);
            total.add(d2);
        }
        let count = fit.inlier_count();
        per_track.push((sum.value() / (2 * count) as f64).sqrt());
        inliers += count;
        points += track.len();
    }
    Ok(NoiseEstimate {
        sigma_v: (total.value() / (2 * inliers) as f64).sqrt(),
        per_track_residuals: per_track,
        inlier_fraction: inliers as f64 / points as f64,
    })
}
