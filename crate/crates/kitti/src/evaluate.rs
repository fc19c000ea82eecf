//! KITTI-style per-category evaluation: greedy matching per frame, a pooled
//! score sweep, then interpolated AP.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::ap::{average_precision, ApMode, PrCurve};
use crate::error::{KittiError, Result};
use crate::geometry::{iou_3d, rotated_bev_iou, Box3D};
use crate::label::{difficulty_of, Difficulty, KittiObjectLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Category {
    Car,
    Pedestrian,
    Cyclist,
}

impl Category {
    pub const ALL: [Category; 3] = [Self::Car, Self::Pedestrian, Self::Cyclist];

    pub fn name(self) -> &'static str {
        match self {
            Self::Car => "Car",
            Self::Pedestrian => "Pedestrian",
            Self::Cyclist => "Cyclist",
        }
    }

    pub fn matches(self, label: &str) -> bool {
        label.eq_ignore_ascii_case(self.name())
    }

    /// Similar classes whose ground truth is neither a hit nor a miss.
    fn neighbour(self, label: &str) -> bool {
        match self {
            Self::Car => label.eq_ignore_ascii_case("Van"),
            Self::Pedestrian => label.eq_ignore_ascii_case("Person_sitting"),
            Self::Cyclist => false,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = KittiError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.matches(s))
            .ok_or_else(|| KittiError::Contract(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bev => "bev",
            Self::ThreeD => "3d",
        }
    }

    pub fn iou(self, a: &KittiObjectLabel, b: &KittiObjectLabel) -> f64 {
        if a.dims.iter().chain(&b.dims).any(|&d| d <= 0.0) {
            return 0.0;
        }
        let (ba, bb) = (Box3D::from_label(a), Box3D::from_label(b));
        match self {
            Self::Bev => rotated_bev_iou(&ba.bev, &bb.bev),
            Self::ThreeD => iou_3d(&ba, &bb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    pub category: Category,
    /// `None` counts every object of the category regardless of its
    /// box height, occlusion or truncation.
    pub difficulty: Option<Difficulty>,
    pub iou_thresh: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    /// Matched only an ignorable ground-truth object.
    Ignored,
}

/// Matching result of one frame: outcome per considered detection with its score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub detections: Vec<(f64, Outcome)>,
    pub valid_gt: usize,
}

fn gt_is_valid(spec: &EvalSpec, g: &KittiObjectLabel) -> bool {
    spec.category.matches(&g.category)
        && spec
            .difficulty
            .map_or(true, |d| d.includes(difficulty_of(g, g.box_height())))
}

/// Greedy matching for one frame: detections in descending score order
/// each take the best-overlapping unmatched valid ground truth.
pub fn match_frame(spec: &EvalSpec, gt: &[KittiObjectLabel], det: &[KittiObjectLabel]) -> FrameMatch {
    let valid: Vec<bool> = gt.iter().map(|g| gt_is_valid(spec, g)).collect();
    let ignorable: Vec<bool> = gt
        .iter()
        .zip(&valid)
        .map(|(g, &v)| {
            !v && (spec.category.matches(&g.category)
                || spec.category.neighbour(&g.category)
                || g.is_dont_care())
        })
        .collect();

    let mut order: Vec<usize> = (0..det.len())
        .filter(|&i| spec.category.matches(&det[i].category))
        .collect();
    let score = |i: usize| det[i].score.unwrap_or(1.0);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));

    let mut taken = vec![false; gt.len()];
    let mut detections = Vec::with_capacity(order.len());
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, g) in gt.iter().enumerate() {
            if !valid[j] && !ignorable[j] {
                continue;
            }
            let iou = spec.metric.iou(&det[i], g);
            if iou < spec.iou_thresh {
                continue;
            }
            if valid[j] {
                if !taken[j] && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            } else {
                hits_ignored = true;
            }
        }
        let outcome = match best {
            Some((j, _)) => {
                taken[j] = true;
                Outcome::TruePositive
            }
            None if hits_ignored => Outcome::Ignored,
            None => Outcome::FalsePositive,
        };
        detections.push((score(i), outcome));
    }
    FrameMatch {
        detections,
        valid_gt: valid.iter().filter(|&&v| v).count(),
    }
}

/// Pools per-frame matches into one score-descending precision/recall sweep.
/// Equal scores keep frame order.
pub fn pooled_curve(frames: &[FrameMatch]) -> PrCurve {
    let mut all: Vec<(f64, bool)> = frames
        .iter()
        .flat_map(|f| f.detections.iter())
        .filter(|(_, o)| *o != Outcome::Ignored)
        .map(|&(s, o)| (s, o == Outcome::TruePositive))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = frames.iter().map(|f| f.valid_gt).sum();
    PrCurve::from_sweep(all.into_iter().map(|(_, tp)| tp), total)
}

pub fn category_curve(
    gt: &[Vec<KittiObjectLabel>],
    det: &[Vec<KittiObjectLabel>],
    spec: &EvalSpec,
) -> Result<PrCurve> {
    if gt.len() != det.len() {
        return Err(KittiError::Contract(format!(
            "{} ground-truth frames but {} detection frames",
            gt.len(),
            det.len()
        )));
    }
    let frames: Vec<FrameMatch> = gt
        .par_iter()
        .zip(det.par_iter())
        .map(|(g, d)| match_frame(spec, g, d))
        .collect();
    Ok(pooled_curve(&frames))
}

/// Average precision for one category over aligned frames.
pub fn evaluate_category(
    gt: &[Vec<KittiObjectLabel>],
    det: &[Vec<KittiObjectLabel>],
    spec: &EvalSpec,
    mode: ApMode,
) -> Result<f64> {
    average_precision(&category_curve(gt, det, spec)?, mode)
}

/// One row of the machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub category: String,
    pub difficulty: String,
    pub metric: String,
    pub mode: String,
    /// `None` when the difficulty level has no ground truth.
    pub ap: Option<f64>,
}
