//! Distinct, confidence-ordered predictions from a mixture via greedy
//! non-maximum suppression.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mixture::MixtureParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmsConfig {
    /// Box half-extent in units of sigma.
    pub alpha: f64,
    pub iou_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            iou_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    /// Weight of the source component.
    pub confidence: f64,
    pub source_cell: usize,
}

/// Predictions in selection order: descending confidence, ties by lower cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn best(&self) -> &Prediction {
        &self.predictions[0]
    }

    /// `rank,mu_x,mu_y,sigma_x,sigma_y,confidence,cell`, rank starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,mu_x,mu_y,sigma_x,sigma_y,confidence,cell\n");
        for (i, p) in self.predictions.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                i + 1,
                p.mu[0],
                p.mu[1],
                p.sigma[0],
                p.sigma[1],
                p.confidence,
                p.source_cell
            );
        }
        out
    }
}

/// Axis-aligned box `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn around(center: [f64; 2], half: [f64; 2]) -> Self {
        Self {
            x0: center[0] - half[0],
            y0: center[1] - half[1],
            x1: center[0] + half[0],
            y1: center[1] + half[1],
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

fn component_box(params: &MixtureParams, j: usize, alpha: f64) -> BoundingBox {
    BoundingBox::around(
        [params.mu_x[j], params.mu_y[j]],
        [alpha * params.sigma_x[j], alpha * params.sigma_y[j]],
    )
}

/// Greedy NMS over all mixture components. Boxes are centered at the means
/// with half-extents `alpha * sigma`; a box is dropped when its IoU with an
/// already kept box exceeds the threshold. At least one prediction is
/// always returned.
pub fn nms(params: &MixtureParams, config: &NmsConfig) -> PredictionSet {
    let k = params.k();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| params.phi[b].total_cmp(&params.phi[a]).then(a.cmp(&b)));

    let boxes: Vec<BoundingBox> = (0..k)
        .map(|j| component_box(params, j, config.alpha))
        .collect();
    let mut kept: Vec<usize> = Vec::new();
    for &j in &order {
        if kept
            .iter()
            .all(|&i| boxes[i].iou(&boxes[j]) <= config.iou_threshold)
        {
            kept.push(j);
        }
    }
    PredictionSet {
        predictions: kept
            .into_iter()
            .map(|j| Prediction {
                mu: [params.mu_x[j], params.mu_y[j]],
                sigma: [params.sigma_x[j], params.sigma_y[j]],
                confidence: params.phi[j],
                source_cell: j,
            })
            .collect(),
    }
}

/// First `min(k, len)` predictions.
pub fn top_k(set: &PredictionSet, k: usize) -> &[Prediction] {
    &set.predictions[..k.min(set.len())]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(phi: [f64; 2], mu1: [f64; 2]) -> MixtureParams {
        MixtureParams {
            phi: phi.to_vec(),
            mu_x: vec![0.0, mu1[0]],
            mu_y: vec![0.0, mu1[1]],
            sigma_x: vec![0.5, 0.5],
            sigma_y: vec![0.5, 0.5],
        }
    }

    #[test]
    fn single_component() {
        let p = MixtureParams::single([3.0, 4.0], [1.0, 2.0]);
        let set = nms(&p, &NmsConfig::default());
        assert_eq!(
            set.predictions,
            vec![Prediction {
                mu: [3.0, 4.0],
                sigma: [1.0, 2.0],
                confidence: 1.0,
                source_cell: 0
            }]
        );
    }

    #[test]
    fn identical_components_collapse() {
        let set = nms(&two([0.3, 0.7], [0.0, 0.0]), &NmsConfig::default());
        assert_eq!(set.len(), 1);
        assert_eq!(set.best().confidence, 0.7);
        assert_eq!(set.best().source_cell, 1);
    }

    #[test]
    fn distant_components_survive_in_order() {
        let set = nms(&two([0.3, 0.7], [50.0, 0.0]), &NmsConfig::default());
        assert_eq!(set.len(), 2);
        assert_eq!(set.predictions[0].source_cell, 1);
        assert_eq!(set.predictions[1].source_cell, 0);
    }

    #[test]
    fn equal_confidence_prefers_lower_cell() {
        let set = nms(&two([0.5, 0.5], [50.0, 0.0]), &NmsConfig::default());
        assert_eq!(set.predictions[0].source_cell, 0);
    }

    #[test]
    fn top_k_prefixes() {
        let set = nms(&two([0.3, 0.7], [50.0, 0.0]), &NmsConfig::default());
        assert_eq!(top_k(&set, 3).len(), 2);
        assert_eq!(top_k(&set, 1), &set.predictions[..1]);
        assert_eq!(top_k(&set, set.len()), set.predictions.as_slice());
    }

    #[test]
    fn iou_basics() {
        let a = BoundingBox::around([0.0, 0.0], [1.0, 1.0]);
        let b = BoundingBox::around([1.0, 0.0], [1.0, 1.0]);
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn csv_has_ranked_rows() {
        let set = nms(&two([0.3, 0.7], [50.0, 0.0]), &NmsConfig::default());
        let csv = set.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "rank,mu_x,mu_y,sigma_x,sigma_y,confidence,cell");
        assert_eq!(lines[1], "1,50,0,0.5,0.5,0.7,1");
        assert_eq!(lines.len(), 3);
    }
}
