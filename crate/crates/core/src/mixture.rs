//! Closed-form math of the grid mixture head.
//!
//! Each of the `k` grid cells owns one axis-aligned Gaussian. The head emits
//! logits, center offsets and log standard deviations per cell;
//! [`realize_params`] turns them into a proper mixture.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{encode_pgm, Extent, GridSpec};
use crate::numeric::log_sum_exp;

/// Log-sigma outputs are clamped to this range before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -3.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;
/// Floor applied to `phi` inside logarithms.
pub const PHI_FLOOR: f64 = 1e-12;
/// `log(2 pi)`, the normalising constant of a standard 2-D Gaussian.
pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub phi: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn single(mu: [f64; 2], sigma: [f64; 2]) -> Self {
        Self {
            phi: vec![1.0],
            mu_x: vec![mu[0]],
            mu_y: vec![mu[1]],
            sigma_x: vec![sigma[0]],
            sigma_y: vec![sigma[1]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if [
            self.mu_x.len(),
            self.mu_y.len(),
            self.sigma_x.len(),
            self.sigma_y.len(),
        ]
        .iter()
        .any(|&l| l != k)
            || k == 0
        {
            return Err(Error::ShapeMismatch(format!(
                "mixture arrays must all have length {k} > 0"
            )));
        }
        let total: f64 = self.phi.iter().sum();
        if self.phi.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights must be a distribution, sum {total}"
            )));
        }
        if self
            .sigma_x
            .iter()
            .chain(&self.sigma_y)
            .any(|&s| !(s > 0.0) || !s.is_finite())
        {
            return Err(Error::InvalidConfig(
                "mixture sigmas must be positive".into(),
            ));
        }
        if self.mu_x.iter().chain(&self.mu_y).any(|m| !m.is_finite()) {
            return Err(Error::NonFiniteInput("mixture means"));
        }
        Ok(())
    }

    /// Log of component `j`'s density at `q`, without the weight.
    fn component_log_density(&self, j: usize, q: [f64; 2]) -> f64 {
        let ex = (q[0] - self.mu_x[j]) / self.sigma_x[j];
        let ey = (q[1] - self.mu_y[j]) / self.sigma_y[j];
        -0.5 * (ex * ex + ey * ey) - self.sigma_x[j].ln() - self.sigma_y[j].ln() - LOG_2PI
    }
}

/// Unconstrained per-cell head outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawHeadOutput {
    pub logits: Vec<f64>,
    pub dmu_x: Vec<f64>,
    pub dmu_y: Vec<f64>,
    pub s_x: Vec<f64>,
    pub s_y: Vec<f64>,
}

impl RawHeadOutput {
    pub fn zeros(k: usize) -> Self {
        Self {
            logits: vec![0.0; k],
            dmu_x: vec![0.0; k],
            dmu_y: vec![0.0; k],
            s_x: vec![0.0; k],
            s_y: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.logits.len()
    }

    fn is_finite(&self) -> bool {
        [&self.logits, &self.dmu_x, &self.dmu_y, &self.s_x, &self.s_y]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Negative log-likelihood split into its cell-classification and
/// within-cell regression parts (nats).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(classification: f64, regression: f64) -> Self {
        Self {
            classification,
            regression,
            total: classification + regression,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::new(self.classification * factor, self.regression * factor)
    }
}

impl Add for LossBreakdown {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(
            self.classification + rhs.classification,
            self.regression + rhs.regression,
        )
    }
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn clamped_sigma(s: f64) -> f64 {
    s.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp()
}

/// Softmax weights, means as offsets from the cell centers and clamped
/// exponential sigmas.
pub fn realize_params(raw: &RawHeadOutput, grid: &GridSpec) -> Result<MixtureParams> {
    let k = grid.k();
    if [
        raw.logits.len(),
        raw.dmu_x.len(),
        raw.dmu_y.len(),
        raw.s_x.len(),
        raw.s_y.len(),
    ]
    .iter()
    .any(|&l| l != k)
    {
        return Err(Error::ShapeMismatch(format!(
            "head output does not match a grid of {k} cells"
        )));
    }
    if !raw.is_finite() {
        return Err(Error::NonFiniteInput("head output"));
    }
    let centers = grid.centers();
    Ok(MixtureParams {
        phi: softmax(&raw.logits),
        mu_x: raw
            .dmu_x
            .iter()
            .zip(centers)
            .map(|(d, c)| d + c[0])
            .collect(),
        mu_y: raw
            .dmu_y
            .iter()
            .zip(centers)
            .map(|(d, c)| d + c[1])
            .collect(),
        sigma_x: raw.s_x.iter().map(|&s| clamped_sigma(s)).collect(),
        sigma_y: raw.s_y.iter().map(|&s| clamped_sigma(s)).collect(),
    })
}

/// Full mixture negative log-likelihood of `target`, via log-sum-exp.
pub fn mixture_nll(params: &MixtureParams, target: [f64; 2]) -> f64 {
    let terms: Vec<f64> = (0..params.k())
        .map(|j| params.phi[j].ln() + params.component_log_density(j, target))
        .collect();
    -log_sum_exp(&terms)
}

/// `-(1 - p)^gamma * ln(p)` with `p` floored at [`PHI_FLOOR`].
pub fn focal_classification(p: f64, gamma: f64) -> f64 {
    let log_p = p.max(PHI_FLOOR).ln();
    if gamma == 0.0 {
        -log_p
    } else {
        -(1.0 - p).max(0.0).powf(gamma) * log_p
    }
}

/// Single-cell Gaussian negative log-likelihood, constant included.
pub fn regression_term(params: &MixtureParams, target: [f64; 2], z: usize) -> f64 {
    -params.component_log_density(z, target)
}

/// Cross-entropy (focal when `gamma > 0`) on the latent cell `z` plus the
/// Gaussian regression term of that cell alone.
pub fn decomposed_loss(
    params: &MixtureParams,
    target: [f64; 2],
    z: usize,
    gamma: f64,
) -> LossBreakdown {
    LossBreakdown::new(
        focal_classification(params.phi[z], gamma),
        regression_term(params, target, z),
    )
}

/// [`decomposed_loss`] evaluated on raw head outputs, together with its
/// gradient with respect to every raw output.
pub fn decomposed_loss_with_grad(
    raw: &RawHeadOutput,
    grid: &GridSpec,
    target: [f64; 2],
    z: usize,
    gamma: f64,
) -> Result<(LossBreakdown, RawHeadOutput)> {
    let params = realize_params(raw, grid)?;
    let loss = decomposed_loss(&params, target, z, gamma);
    let k = grid.k();
    let mut grad = RawHeadOutput::zeros(k);

    let p = params.phi[z];
    let active = p >= PHI_FLOOR;
    let one_minus = (1.0 - p).max(0.0);
    // d classification / d p
    let dl_dp = if gamma == 0.0 {
        if active {
            -1.0 / p
        } else {
            0.0
        }
    } else {
        let modulated = if active {
            -one_minus.powf(gamma) / p
        } else {
            0.0
        };
        let damping = if one_minus > 0.0 {
            gamma * one_minus.powf(gamma - 1.0) * p.max(PHI_FLOOR).ln()
        } else {
            0.0
        };
        modulated + damping
    };
    if gamma == 0.0 && active {
        // Closed form avoids the 1/p round trip.
        for (g, &pi) in grad.logits.iter_mut().zip(&params.phi) {
            *g = pi;
        }
        grad.logits[z] -= 1.0;
    } else {
        for (i, g) in grad.logits.iter_mut().enumerate() {
            let dp = p * (if i == z { 1.0 } else { 0.0 } - params.phi[i]);
            *g = dl_dp * dp;
        }
    }

    let (sx, sy) = (params.sigma_x[z], params.sigma_y[z]);
    let ex = target[0] - params.mu_x[z];
    let ey = target[1] - params.mu_y[z];
    grad.dmu_x[z] = -ex / (sx * sx);
    grad.dmu_y[z] = -ey / (sy * sy);
    let in_range = |s: f64| (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&s);
    if in_range(raw.s_x[z]) {
        grad.s_x[z] = 1.0 - ex * ex / (sx * sx);
    }
    if in_range(raw.s_y[z]) {
        grad.s_y[z] = 1.0 - ey * ey / (sy * sy);
    }
    Ok((loss, grad))
}

/// Mixture density at `query` (1/m^2).
pub fn density(params: &MixtureParams, query: [f64; 2]) -> f64 {
    (0..params.k())
        .filter(|&j| params.phi[j] > 0.0)
        .map(|j| params.phi[j] * params.component_log_density(j, query).exp())
        .sum()
}

/// Mixture density sampled at pixel centers, laid out like a map raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub extent: Extent,
    pub resolution: f64,
    /// Row-major, row 0 at minimum `y`.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.extent.x_min + (col as f64 + 0.5) * self.resolution,
            self.extent.y_min + (row as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Riemann sum of the density, i.e. the probability mass inside the extent.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution * self.resolution
    }

    /// `(row, col)` of the largest value; the first one wins on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Binary PGM, log-scaled over six decades below the maximum.
    pub fn to_pgm(&self) -> Vec<u8> {
        const DECADES: f64 = 6.0;
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let data: Vec<u8> = self
            .values
            .iter()
            .map(|&v| {
                if max <= 0.0 || v <= 0.0 {
                    return 0;
                }
                let scaled = 1.0 + (v / max).log10() / DECADES;
                (scaled.clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect();
        encode_pgm(self.width, self.height, &data)
    }

    /// `row,col,x_m,y_m,density` per pixel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,x_m,y_m,density\n");
        for row in 0..self.height {
            for col in 0..self.width {
                let [x, y] = self.pixel_center(row, col);
                let _ = writeln!(out, "{row},{col},{x},{y},{}", self.get(row, col));
            }
        }
        out
    }
}

/// Evaluates the mixture density at every pixel center of `extent`.
pub fn heatmap(params: &MixtureParams, extent: Extent, resolution: f64) -> Result<Heatmap> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidConfig(
            "heatmap resolution must be positive".into(),
        ));
    }
    let width = (extent.width() / resolution).round().max(1.0) as usize;
    let height = (extent.height() / resolution).round().max(1.0) as usize;
    let mut values = Vec::with_capacity(width * height);
    for row in 0..height {
        let y = extent.y_min + (row as f64 + 0.5) * resolution;
        for col in 0..width {
            let x = extent.x_min + (col as f64 + 0.5) * resolution;
            values.push(density(params, [x, y]));
        }
    }
    Ok(Heatmap {
        width,
        height,
        extent,
        resolution,
        values,
    })
}

/// Peak density of a single unit-variance 2-D Gaussian, `1 / (2 pi)`.
pub fn standard_peak_density() -> f64 {
    1.0 / (2.0 * PI)
}
