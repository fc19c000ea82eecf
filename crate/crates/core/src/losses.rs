//! Detection losses split into an appearance group and a localization group.

use std::fmt;
use std::str::FromStr;

use dfr_tensor::{Tape, Tensor, Var};

use crate::error::{CoreError, Result};

/// IoU floor applied before the log in [`box2d_iou_loss`].
pub const IOU_EPS: f64 = 1e-6;

/// Mean smooth-L1 (β = 1) of `pred − target`.
pub fn smooth_l1(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let h = tape.smooth_l1(d)?;
    Ok(tape.mean(h)?)
}

/// `−log softmax(logits)[target]`.
pub fn category_loss(tape: &mut Tape, logits: Var, target: usize) -> Result<Var> {
    let n = tape.value(logits).numel();
    if n < 2 {
        return Err(CoreError::Config(format!("category loss needs at least 2 logits, got {n}")));
    }
    if target >= n {
        return Err(CoreError::Tensor(dfr_tensor::TensorError::Contract(format!(
            "category target {target} out of range for {n} logits"
        ))));
    }
    let flat = tape.reshape(logits, &[n])?;
    let ls = tape.log_softmax(flat, 0)?;
    let picked = tape.gather(ls, &[target])?;
    Ok(tape.scale(picked, -1.0)?)
}

/// Axis-aligned IoU of two `(u1, v1, u2, v2)` boxes built from tape ops.
/// Reversed extents count as zero width.
pub fn box_iou(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let g = |tape: &mut Tape, v: Var, i: usize| tape.gather(v, &[i]);
    let (a0, a1, a2, a3) = (g(tape, a, 0)?, g(tape, a, 1)?, g(tape, a, 2)?, g(tape, a, 3)?);
    let (b0, b1, b2, b3) = (g(tape, b, 0)?, g(tape, b, 1)?, g(tape, b, 2)?, g(tape, b, 3)?);
    let extent = |tape: &mut Tape, lo: Var, hi: Var| -> Result<Var> {
        let d = tape.sub(hi, lo)?;
        Ok(tape.relu(d)?)
    };
    let area_a = {
        let w = extent(tape, a0, a2)?;
        let h = extent(tape, a1, a3)?;
        tape.mul(w, h)?
    };
    let area_b = {
        let w = extent(tape, b0, b2)?;
        let h = extent(tape, b1, b3)?;
        tape.mul(w, h)?
    };
    let inter = {
        let l = tape.maximum(a0, b0)?;
        let r = tape.minimum(a2, b2)?;
        let t = tape.maximum(a1, b1)?;
        let bt = tape.minimum(a3, b3)?;
        let w = extent(tape, l, r)?;
        let h = extent(tape, t, bt)?;
        tape.mul(w, h)?
    };
    let sum = tape.add(area_a, area_b)?;
    let union = tape.sub(sum, inter)?;
    if tape.item(union)? <= 0.0 {
        return Err(CoreError::Domain("both boxes have zero area".into()));
    }
    Ok(tape.div(inter, union)?)
}

/// `−log(max(IoU, 1e-6))`.
pub fn box2d_iou_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let iou = box_iou(tape, pred, target)?;
    let c = tape.clamp_min(iou, IOU_EPS)?;
    let l = tape.log(c)?;
    Ok(tape.scale(l, -1.0)?)
}

/// Smooth-L1 of the yaw residual wrapped into `(−π, π]`.
pub fn rotation_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let w = tape.wrap_angle(d)?;
    let h = tape.smooth_l1(w)?;
    Ok(tape.mean(h)?)
}

/// Which group a movable regression term is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StreamChoice {
    #[default]
    Appearance,
    Localization,
}

impl StreamChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Appearance => "appearance",
            Self::Localization => "localization",
        }
    }
}

impl fmt::Display for StreamChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamChoice {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appearance" | "app" => Ok(Self::Appearance),
            "localization" | "loc" => Ok(Self::Localization),
            _ => Err(CoreError::Config(format!(
                "unknown stream {s:?} (appearance|localization)"
            ))),
        }
    }
}

/// Placement of the rotation and dimension terms. Category always goes to
/// appearance; the 2D box and 3D centre always go to localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClusteringConfig {
    pub rot_stream: StreamChoice,
    pub whl_stream: StreamChoice,
}

impl ClusteringConfig {
    /// The four placements, localization-heavy first.
    pub const ALL: [ClusteringConfig; 4] = {
        use StreamChoice::*;
        [
            Self { rot_stream: Localization, whl_stream: Localization },
            Self { rot_stream: Appearance, whl_stream: Localization },
            Self { rot_stream: Localization, whl_stream: Appearance },
            Self { rot_stream: Appearance, whl_stream: Appearance },
        ]
    };

    pub fn label(&self) -> String {
        format!("rot={},whl={}", self.rot_stream, self.whl_stream)
    }
}

/// Ground truth of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectTarget {
    pub category: usize,
    pub rot: f64,
    /// `(w, h, l)` metres.
    pub dims: [f64; 3],
    pub box2d: [f64; 4],
    /// Camera-frame `(x, y, z)`.
    pub center3d: [f64; 3],
}

impl ObjectTarget {
    pub fn validate(&self) -> Result<()> {
        let b = &self.box2d;
        if !self.dims.iter().all(|&d| d > 0.0) {
            return Err(CoreError::Domain(format!("non-positive dims {:?}", self.dims)));
        }
        if !(b[0] < b[2] && b[1] < b[3]) {
            return Err(CoreError::Domain(format!("box {b:?} is not well ordered")));
        }
        if !self.center3d.iter().chain(b).chain([&self.rot]).all(|v| v.is_finite()) {
            return Err(CoreError::Domain("non-finite target".into()));
        }
        Ok(())
    }
}

/// Decoded prediction handles: logits `[n]`, rot `[1]`, dims `[3]`,
/// box2d `[4]`, center3d `[3]`.
#[derive(Debug, Clone, Copy)]
pub struct PredVars {
    pub logits: Var,
    pub rot: Var,
    pub dims: Var,
    pub box2d: Var,
    pub center3d: Var,
}

/// The five individual terms of one object.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub class: Var,
    pub rot: Var,
    pub whl: Var,
    pub box2d: Var,
    pub xyz: Var,
}

pub fn loss_terms(tape: &mut Tape, p: &PredVars, t: &ObjectTarget) -> Result<LossTerms> {
    t.validate()?;
    let rot_t = tape.constant(Tensor::scalar(t.rot));
    let dims_t = tape.constant(Tensor::from_vec(t.dims.to_vec()));
    let box_t = tape.constant(Tensor::from_vec(t.box2d.to_vec()));
    let xyz_t = tape.constant(Tensor::from_vec(t.center3d.to_vec()));
    Ok(LossTerms {
        class: category_loss(tape, p.logits, t.category)?,
        rot: rotation_loss(tape, p.rot, rot_t)?,
        whl: smooth_l1(tape, p.dims, dims_t)?,
        box2d: box2d_iou_loss(tape, p.box2d, box_t)?,
        xyz: smooth_l1(tape, p.center3d, xyz_t)?,
    })
}

/// Sums the terms into `(l_υ, l_σ)` according to `cfg`.
pub fn group_terms(tape: &mut Tape, terms: &LossTerms, cfg: ClusteringConfig) -> Result<(Var, Var)> {
    let mut app = vec![terms.class];
    let mut loc = vec![terms.box2d, terms.xyz];
    for (term, stream) in [(terms.rot, cfg.rot_stream), (terms.whl, cfg.whl_stream)] {
        match stream {
            StreamChoice::Appearance => app.push(term),
            StreamChoice::Localization => loc.push(term),
        }
    }
    let mut total = |parts: Vec<Var>| -> Result<Var> {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        Ok(acc)
    };
    let a = total(app)?;
    let l = total(loc)?;
    Ok((a, l))
}

pub fn grouped_losses(tape: &mut Tape, p: &PredVars, t: &ObjectTarget, cfg: ClusteringConfig) -> Result<(Var, Var)> {
    let terms = loss_terms(tape, p, t)?;
    group_terms(tape, &terms, cfg)
}

/// Per-sample grouped losses averaged over the batch.
pub fn batch_grouped_losses(
    tape: &mut Tape,
    batch: &[(PredVars, ObjectTarget)],
    cfg: ClusteringConfig,
) -> Result<(Var, Var)> {
    if batch.is_empty() {
        return Err(CoreError::Config("empty batch".into()));
    }
    let mut app = Vec::with_capacity(batch.len());
    let mut loc = Vec::with_capacity(batch.len());
    for (p, t) in batch {
        let (a, l) = grouped_losses(tape, p, t, cfg)?;
        app.push(a);
        loc.push(l);
    }
    let a = tape.concat(&app)?;
    let l = tape.concat(&loc)?;
    Ok((tape.mean(a)?, tape.mean(l)?))
}
