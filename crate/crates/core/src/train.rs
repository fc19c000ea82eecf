//! Seeded SGD training of the toy detector and held-out evaluation.

use dfr_kitti::{evaluate_category, ApMode, Category, EvalSpec, KittiObjectLabel, Metric};
use dfr_tensor::{ParamStore, Sgd, Tape, TensorError, Var};
use rand::Rng;

use crate::detector::{cell_of, ModelConfig, ToyDetector};
use crate::error::{CoreError, Result};
use crate::dit::trading_loss;
use crate::losses::batch_grouped_losses;
use crate::scene::{generate_scene, SyntheticScene};

/// Held-out scene seeds start here; training seeds stay below it.
pub const HELDOUT_SEED_BASE: u64 = 1 << 40;
pub const EVAL_SCENES: usize = 200;
pub const EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Multiplier on the appearance group before trading.
    pub appearance_scale: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Learning rate at step `t` is `lr·(1 − t/steps)^power`; 0 keeps it constant.
    pub lr_decay_power: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
            batch_size: 1,
            appearance_scale: 1.0,
            grad_clip: Some(1.0),
            lr_decay_power: 0.9,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CoreError::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be at least 1".into()));
        }
        for (k, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("appearance_scale", self.appearance_scale),
            ("lr_decay_power", self.lr_decay_power),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Config(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(CoreError::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.lr == 0.0 || self.appearance_scale == 0.0 {
            return Err(CoreError::Config("lr and appearance_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One optimisation step. `l_app` already includes `appearance_scale`;
/// scores are 1 when trading is off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub l_app: f64,
    pub l_loc: f64,
    pub s_app: f64,
    pub s_loc: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub detector: ToyDetector,
    pub history: Vec<HistoryRow>,
}

/// Scene seeds of every training step, drawn from the run seed.
pub fn training_scene_seeds(cfg: &TrainConfig) -> impl Iterator<Item = u64> {
    let mut rng = crate::detector::module_rng(cfg.seed, 5);
    std::iter::repeat_with(move || rng.gen_range(0..HELDOUT_SEED_BASE))
}

pub fn train(cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let mut det = ToyDetector::new(cfg.model, cfg.seed)?;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut seeds = training_scene_seeds(cfg);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut tape = Tape::new();
    for step in 0..cfg.steps {
        opt.lr = scheduled_lr(cfg, step);
        let scenes: Vec<SyntheticScene> = (0..cfg.batch_size)
            .map(|_| generate_scene(seeds.next().expect("endless")))
            .collect();
        let row = train_step(cfg, &mut det, &mut opt, &mut tape, &scenes, step).map_err(|e| match e {
            CoreError::Domain(detail) | CoreError::Tensor(TensorError::Domain { detail, .. }) => {
                CoreError::Diverged { step, detail }
            }
            other => other,
        })?;
        history.push(row);
    }
    Ok(TrainRun { detector: det, history })
}

pub fn scheduled_lr(cfg: &TrainConfig, step: usize) -> f64 {
    cfg.lr * (1.0 - step as f64 / cfg.steps as f64).powf(cfg.lr_decay_power)
}

fn train_step(
    cfg: &TrainConfig,
    det: &mut ToyDetector,
    opt: &mut Sgd,
    tape: &mut Tape,
    scenes: &[SyntheticScene],
    step: usize,
) -> Result<HistoryRow> {
    tape.clear();
    let bound = det.store.bind(tape);
    let mut batch = Vec::with_capacity(scenes.len());
    let mut scores = Vec::new();
    for s in scenes {
        let (u, v) = s.center_pixel();
        let out = det.forward(tape, &bound, &s.image, cell_of(u, v))?;
        scores.extend(det.scores(tape, &bound, &out)?);
        batch.push((out.preds, s.target()));
    }
    let (l_app, l_loc) = batch_grouped_losses(tape, &batch, cfg.model.clustering)?;
    let l_app = tape.scale(l_app, cfg.appearance_scale)?;
    let (total, s_app, s_loc) = if scores.is_empty() {
        (tape.add(l_app, l_loc)?, 1.0, 1.0)
    } else {
        let a: Vec<Var> = scores.iter().map(|p| p.0).collect();
        let l: Vec<Var> = scores.iter().map(|p| p.1).collect();
        let a = tape.concat(&a)?;
        let s_app = tape.mean(a)?;
        let l = tape.concat(&l)?;
        let s_loc = tape.mean(l)?;
        let t = trading_loss(tape, l_app, l_loc, s_app, s_loc)?;
        (t, tape.item(s_app)?, tape.item(s_loc)?)
    };
    let row = HistoryRow {
        step,
        l_app: tape.item(l_app)?,
        l_loc: tape.item(l_loc)?,
        s_app,
        s_loc,
        total: tape.item(total)?,
    };
    if !row.total.is_finite() {
        return Err(CoreError::Domain(format!("total loss {}", row.total)));
    }
    let grads = tape.backward(total)?;
    det.store.absorb(&bound, &grads)?;
    if let Some(c) = cfg.grad_clip {
        clip_grad_norm(&mut det.store, c)?;
    }
    opt.step(&mut det.store)?;
    if let Some(p) = det.store.iter().find(|p| !p.tensor.all_finite()) {
        return Err(CoreError::Domain(format!("parameter `{}` became non-finite", p.name)));
    }
    Ok(row)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> Result<f64> {
    let norm = store
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in store.iter_mut() {
            if let Some(g) = p.tensor.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * k).collect();
                p.tensor.clear_grad();
                p.tensor.accumulate_grad(&scaled)?;
            }
        }
    }
    Ok(norm)
}

pub fn heldout_scenes(n: usize) -> Vec<SyntheticScene> {
    (0..n as u64).map(|i| generate_scene(HELDOUT_SEED_BASE + i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// AP_3D (R40, IoU 0.5) per category; `None` without ground truth.
    pub per_category: Vec<(Category, Option<f64>)>,
    /// Mean over categories that have ground truth.
    pub mean_ap: f64,
    pub accuracy: f64,
}

/// Ground-truth and detection frames for a scene set.
pub fn detection_frames(
    det: &ToyDetector,
    scenes: &[SyntheticScene],
) -> Result<(Vec<Vec<KittiObjectLabel>>, Vec<Vec<KittiObjectLabel>>)> {
    let mut gt = Vec::with_capacity(scenes.len());
    let mut dt = Vec::with_capacity(scenes.len());
    for s in scenes {
        gt.push(vec![s.label.clone()]);
        dt.push(vec![det.detect(s)?.to_label()]);
    }
    Ok((gt, dt))
}

pub fn evaluate(det: &ToyDetector, scenes: &[SyntheticScene]) -> Result<EvalSummary> {
    let (gt, dt) = detection_frames(det, scenes)?;
    let correct = gt.iter().zip(&dt).filter(|(g, d)| g[0].category == d[0].category).count();
    let mut per_category = Vec::new();
    let mut aps = Vec::new();
    for c in Category::ALL {
        let has_gt = gt.iter().flatten().any(|l| c.matches(&l.category));
        let ap = if has_gt {
            let spec = EvalSpec {
                category: c,
                difficulty: None,
                iou_thresh: EVAL_IOU,
                metric: Metric::ThreeD,
            };
            let v = evaluate_category(&gt, &dt, &spec, ApMode::R40)?;
            aps.push(v);
            Some(v)
        } else {
            None
        };
        per_category.push((c, ap));
    }
    Ok(EvalSummary {
        per_category,
        mean_ap: aps.iter().sum::<f64>() / aps.len().max(1) as f64,
        accuracy: correct as f64 / scenes.len().max(1) as f64,
    })
}
