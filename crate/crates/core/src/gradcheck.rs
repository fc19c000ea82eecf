//! Finite-difference cases for the model-level operations.

use dfr_tensor::gradcheck::{contract_to_scalar, uniform, uniform_avoiding, GradCase};
use dfr_tensor::{Tensor, TensorError, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::alfr::{alfr_forward, AlfrConfig, AlfrVars, Flow, PARAM_NAMES};
use crate::detector::{decode, HeadLayout};
use crate::dit::{trading_loss, trading_score, HeadVars};
use crate::error::CoreError;
use crate::losses::{
    box2d_iou_loss, category_loss, grouped_losses, rotation_loss, smooth_l1, ClusteringConfig, ObjectTarget, PredVars,
};
use crate::scene::toy_calib;

fn lift<T>(r: crate::error::Result<T>) -> dfr_tensor::Result<T> {
    r.map_err(|e| match e {
        CoreError::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    })
}

const C: usize = 4;
const R: usize = 2;

/// Block inputs whose separation pre-activations stay positive, so the
/// relu kink is never straddled by the probe.
fn alfr_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut v = vec![uniform(rng, &[C, 3, 3], 0.5, 1.5)];
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        let t = if name.starts_with("sep_") {
            if name.ends_with("weight") {
                uniform(rng, &[C, C, 1, 1], 0.05, 1.0)
            } else {
                uniform(rng, &[C], 0.1, 0.5)
            }
        } else if i < 16 {
            let c_out = if name.starts_with("proj_") { C / R } else { C };
            if name.ends_with("weight") {
                uniform(rng, &[c_out, C, 1, 1], -1.0, 1.0)
            } else {
                uniform(rng, &[c_out], -0.5, 0.5)
            }
        } else {
            uniform(rng, &[1], -1.0, 1.0)
        };
        v.push(t);
    }
    v
}

fn alfr_case(cfg: AlfrConfig) -> GradCase {
    let name = format!(
        "alfr[{}{}]",
        cfg.flow,
        if cfg.self_reflect { "" } else { ",no_self" }
    );
    GradCase::new(name, alfr_inputs, move |t, v| {
        let p = AlfrVars::from_ordered(&v[1..]);
        let o = lift(alfr_forward(t, &p, v[0], cfg))?;
        let both = t.concat(&[o.f_star_app, o.f_star_loc])?;
        contract_to_scalar(t, both)
    })
}

fn score_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    vec![
        uniform(rng, &[C, 3, 3], 0.5, 1.5),
        uniform(rng, &[C / R, C, 1, 1], 0.05, 1.0),
        uniform(rng, &[C / R], 0.1, 0.5),
        uniform(rng, &[1, C / R, 1, 1], -1.0, 1.0),
        uniform(rng, &[1], -0.5, 0.5),
    ]
}

fn pred_vars(v: &[Var]) -> PredVars {
    PredVars {
        logits: v[0],
        rot: v[1],
        dims: v[2],
        box2d: v[3],
        center3d: v[4],
    }
}

fn fixed_target() -> ObjectTarget {
    ObjectTarget {
        category: 1,
        rot: 0.4,
        dims: [1.6, 1.5, 3.9],
        box2d: [4.0, 6.0, 12.0, 11.0],
        center3d: [1.0, 1.6, 18.0],
    }
}

/// Predictions near [`fixed_target`] with every residual clear of the
/// smooth-L1 transition and every box edge clear of its counterpart.
fn pred_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let t = fixed_target();
    let logits = Tensor::from_vec((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let rot = shifted(rng, &[t.rot]);
    let dims = shifted(rng, &t.dims);
    let box2d = shifted(rng, &t.box2d);
    let center = shifted(rng, &t.center3d);
    vec![logits, rot, dims, box2d, center]
}

/// `base` plus offsets of magnitude in [0.1, 0.8] ∪ [1.1, 1.3].
fn shifted(rng: &mut ChaCha8Rng, base: &[f64]) -> Tensor {
    Tensor::from_vec(
        base.iter()
            .map(|b| {
                let m: f64 = rng.gen_range(0.1..0.8);
                let m = if rng.gen_bool(0.3) { m.min(0.2) + 1.1 } else { m };
                if rng.gen_bool(0.5) { b + m } else { b - m }
            })
            .collect(),
    )
}

/// Every model-level case: one per feature-reflecting configuration, the
/// trading score and loss, each loss term, grouped losses per clustering
/// and the head decoder.
pub fn model_cases() -> Vec<GradCase> {
    let mut cases: Vec<GradCase> = Flow::ALL
        .into_iter()
        .map(|flow| alfr_case(AlfrConfig { flow, self_reflect: true }))
        .collect();
    cases.push(alfr_case(AlfrConfig {
        flow: Flow::Both,
        self_reflect: false,
    }));

    cases.push(GradCase::new("dit.trading_score", score_inputs, |t, v| {
        let head = HeadVars::from_ordered(&v[1..]);
        lift(trading_score(t, v[0], &head))
    }));
    cases.push(GradCase::new(
        "dit.trading_loss",
        |rng| {
            vec![
                uniform(rng, &[1], 0.0, 5.0),
                uniform(rng, &[1], 0.0, 5.0),
                uniform(rng, &[1], 0.1, 0.95),
                uniform(rng, &[1], 0.1, 0.95),
            ]
        },
        |t, v| lift(trading_loss(t, v[0], v[1], v[2], v[3])),
    ));

    cases.push(GradCase::new(
        "losses.smooth_l1",
        |rng| {
            vec![
                uniform_avoiding(rng, &[5], -3.0, 3.0, &[-1.0, 1.0], 0.05),
                Tensor::zeros(&[5]),
            ]
        },
        |t, v| lift(smooth_l1(t, v[0], v[1])),
    ));
    cases.push(GradCase::new(
        "losses.category",
        |rng| vec![uniform(rng, &[4], -3.0, 3.0)],
        |t, v| lift(category_loss(t, v[0], 2)),
    ));
    cases.push(GradCase::new(
        "losses.box2d_iou",
        |rng| {
            let all = pred_inputs(rng);
            vec![all[3].clone(), Tensor::from_vec(fixed_target().box2d.to_vec())]
        },
        |t, v| lift(box2d_iou_loss(t, v[0], v[1])),
    ));
    cases.push(GradCase::new(
        "losses.rotation",
        |rng| {
            let target = uniform(rng, &[1], -1.0, 1.0);
            let d = uniform_avoiding(rng, &[1], -2.5, 2.5, &[-1.0, 1.0], 0.05);
            vec![Tensor::from_vec(vec![target.data()[0] + d.data()[0]]), target]
        },
        |t, v| lift(rotation_loss(t, v[0], v[1])),
    ));
    for cfg in ClusteringConfig::ALL {
        cases.push(GradCase::new(
            format!("losses.grouped[{}]", cfg.label()),
            pred_inputs,
            move |t, v| {
                let p = pred_vars(v);
                let (a, l) = lift(grouped_losses(t, &p, &fixed_target(), cfg))?;
                let l2 = t.scale(l, 2.0)?;
                t.add(a, l2)
            },
        ));
    }
    cases.push(GradCase::new(
        "detector.decode",
        |rng| {
            let layout = HeadLayout::new(ClusteringConfig::default());
            vec![
                uniform(rng, &[layout.n_app], -1.0, 1.0),
                uniform(rng, &[layout.n_loc], -1.0, 1.0),
            ]
        },
        |t, v| {
            let layout = HeadLayout::new(ClusteringConfig::default());
            let p = lift(decode(t, &layout, v[0], v[1], (3, 5), &toy_calib()))?;
            let all = t.concat(&[p.logits, p.rot, p.dims, p.box2d, p.center3d])?;
            contract_to_scalar(t, all)
        },
    ));
    cases
}
