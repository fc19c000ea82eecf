use serde::Serialize;

use crate::error::{KittiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMode {
    /// Recall positions {0, 0.1, …, 1}.
    R11,
    /// Recall positions {1/40, 2/40, …, 1}.
    R40,
}

impl ApMode {
    pub fn recall_points(self) -> Vec<f64> {
        match self {
            Self::R11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Self::R40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::R11 => "r11",
            Self::R40 => "r40",
        }
    }
}

/// Precision/recall after each detection of a score-descending sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
    pub total_gt: usize,
}

impl PrCurve {
    /// Builds the curve from true/false-positive flags already sorted by
    /// descending score.
    pub fn from_sweep(is_tp: impl IntoIterator<Item = bool>, total_gt: usize) -> Self {
        let (mut tp, mut fp) = (0usize, 0usize);
        let points = is_tp
            .into_iter()
            .map(|hit| {
                if hit {
                    tp += 1;
                } else {
                    fp += 1;
                }
                let recall = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
                (recall, tp as f64 / (tp + fp) as f64)
            })
            .collect();
        Self { points, total_gt }
    }
}

const RECALL_EPS: f64 = 1e-12;

/// Mean interpolated precision over the mode's recall positions.
pub fn average_precision(curve: &PrCurve, mode: ApMode) -> Result<f64> {
    if curve.total_gt == 0 {
        return Err(KittiError::Contract(
            "average precision is undefined without ground truth".into(),
        ));
    }
    let positions = mode.recall_points();
    let mut total = 0.0;
    for &r in &positions {
        let best = curve
            .points
            .iter()
            .filter(|(rec, _)| *rec >= r - RECALL_EPS)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / positions.len() as f64)
}
