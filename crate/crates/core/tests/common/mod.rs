//! Invariant checks shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use dfr_core::alfr::{alfr_forward, combine, init_tensors, mutual_reflect, self_reflect, AlfrConfig, AlfrVars, Flow};
use dfr_core::dit::{score_variant, trading_loss, DitParams, DitVariant};
use dfr_core::losses::{grouped_losses, loss_terms, ClusteringConfig, ObjectTarget, PredVars};
use dfr_tensor::gradcheck::uniform;
use dfr_tensor::{seeded_rng, ParamStore, Sgd, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every reflecting configuration a sweep can produce.
pub fn alfr_configs() -> Vec<AlfrConfig> {
    let mut v: Vec<AlfrConfig> = Flow::ALL
        .into_iter()
        .map(|flow| AlfrConfig { flow, self_reflect: true })
        .collect();
    v.push(AlfrConfig {
        flow: Flow::Both,
        self_reflect: false,
    });
    v
}

/// Block parameters with random mixing and residual scalars.
pub fn random_block(rng: &mut ChaCha8Rng, tape: &mut Tape, c: usize, r: usize) -> AlfrVars {
    let mut ts = init_tensors(rng, c, r).expect("valid widths");
    let n = ts.len();
    for t in &mut ts[n - 4..] {
        *t = Tensor::scalar(rng.gen_range(-3.0..3.0));
    }
    let v: Vec<Var> = ts.into_iter().map(|t| tape.constant(t)).collect();
    AlfrVars::from_ordered(&v)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AttentionStats {
    pub maps: usize,
    pub max_row_error: f64,
    pub min_entry: f64,
    pub max_entry: f64,
}

impl AttentionStats {
    fn add(&mut self, w: &Tensor) {
        let s = w.shape();
        let (rows, cols) = (s[0], s[1]);
        if self.maps == 0 {
            self.min_entry = f64::INFINITY;
            self.max_entry = f64::NEG_INFINITY;
        }
        self.maps += 1;
        for i in 0..rows {
            let row = &w.data()[i * cols..(i + 1) * cols];
            let sum: f64 = row.iter().sum();
            self.max_row_error = self.max_row_error.max((sum - 1.0).abs());
            for &x in row {
                self.min_entry = self.min_entry.min(x);
                self.max_entry = self.max_entry.max(x);
            }
        }
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.maps > 0 && self.max_row_error <= tol && self.min_entry >= 0.0 && self.max_entry <= 1.0
    }
}

/// Runs `forwards` random blocks under `cfg`, checking the two final maps
/// and a self, a mutual and a mixed map built from the same projections.
pub fn attention_stats(cfg: AlfrConfig, forwards: usize, seed: u64) -> AttentionStats {
    let mut rng = seeded_rng(seed);
    let mut stats = AttentionStats::default();
    for _ in 0..forwards {
        let (c, r) = [(4, 2), (8, 4), (8, 2)][rng.gen_range(0..3)];
        let (h, w) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let scale = [1.0, 10.0][rng.gen_range(0..2)];
        let mut tape = Tape::new();
        let p = random_block(&mut rng, &mut tape, c, r);
        let x = tape.constant(uniform(&mut rng, &[c, h, w], -scale, scale));
        let out = alfr_forward(&mut tape, &p, x, cfg).expect("valid block");
        stats.add(tape.value(out.w_app));
        stats.add(tape.value(out.w_loc));

        let n = h * w;
        let mut proj = || tape.constant(uniform(&mut rng, &[c / r, n], -scale, scale));
        let (f1, f2, g1) = (proj(), proj(), proj());
        let ws = self_reflect(&mut tape, f1, f2).unwrap();
        let wm = mutual_reflect(&mut tape, g1, f2).unwrap();
        let mix = tape.scalar_constant(rng.gen_range(-5.0..5.0));
        let wc = combine(&mut tape, ws, wm, mix).unwrap();
        for m in [ws, wm, wc] {
            stats.add(tape.value(m));
        }
    }
    stats
}

/// Number of inputs, out of `n`, on which a freshly initialised block is not
/// bitwise the identity for some configuration.
pub fn identity_failures(n: usize, seed: u64) -> usize {
    let mut rng = seeded_rng(seed);
    let mut failures = 0;
    for _ in 0..n {
        let (c, r) = [(4, 2), (8, 4), (16, 4)][rng.gen_range(0..3)];
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let ts = init_tensors(&mut rng, c, r).unwrap();
        let x = uniform(&mut rng, &[c, h, w], -5.0, 5.0);
        let ok = alfr_configs().into_iter().all(|cfg| {
            let mut tape = Tape::new();
            let v: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
            let p = AlfrVars::from_ordered(&v);
            let xv = tape.constant(x.clone());
            let out = alfr_forward(&mut tape, &p, xv, cfg).unwrap();
            tape.value(out.f_star_app).data() == x.data() && tape.value(out.f_star_loc).data() == x.data()
        });
        failures += usize::from(!ok);
    }
    failures
}

/// Trains only the two free score scalars against constant group losses
/// `(l, l)`. Returns the appearance score after each step.
pub fn optimise_scores(l: f64, steps: usize) -> Vec<f64> {
    let mut store = ParamStore::new();
    let dit = DitParams::init(&mut store, "dit", &mut seeded_rng(0), DitVariant::Init, 1, 1, [0.0, 0.0]).unwrap();
    let mut opt = Sgd::new(0.1, 0.9, 0.0);
    let mut tape = Tape::new();
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        tape.clear();
        let bound = store.bind(&mut tape);
        let dummy = tape.constant(Tensor::zeros(&[1, 1, 1]));
        let (sa, sl) = score_variant(&mut tape, &dit.vars(&bound), DitVariant::Init, dummy, dummy, dummy).unwrap();
        let lv = tape.scalar_constant(l);
        let total = trading_loss(&mut tape, lv, lv, sa, sl).unwrap();
        let g = tape.backward(total).unwrap();
        store.absorb(&bound, &g).unwrap();
        opt.step(&mut store).unwrap();
        let raw = store.tensor(dit.ids()[0]).data()[0];
        trace.push(1.0 / (1.0 + (-raw).exp()));
    }
    trace
}

pub fn random_target(rng: &mut ChaCha8Rng) -> ObjectTarget {
    let u = rng.gen_range(0.0..20.0);
    let v = rng.gen_range(0.0..20.0);
    ObjectTarget {
        category: rng.gen_range(0..3),
        rot: rng.gen_range(-3.0..3.0),
        dims: [rng.gen_range(0.4..2.0), rng.gen_range(1.0..2.0), rng.gen_range(0.5..5.0)],
        box2d: [u, v, u + rng.gen_range(1.0..10.0), v + rng.gen_range(1.0..10.0)],
        center3d: [rng.gen_range(-10.0..10.0), rng.gen_range(1.0..2.0), rng.gen_range(8.0..40.0)],
    }
}

pub fn random_preds(rng: &mut ChaCha8Rng, tape: &mut Tape) -> PredVars {
    let mut c = |v: Vec<f64>| tape.constant(Tensor::from_vec(v));
    let u = rng.gen_range(0.0..20.0);
    let v = rng.gen_range(0.0..20.0);
    PredVars {
        logits: c((0..4).map(|_| rng.gen_range(-5.0..5.0)).collect()),
        rot: c(vec![rng.gen_range(-7.0..7.0)]),
        dims: c((0..3).map(|_| rng.gen_range(-1.0..6.0)).collect()),
        box2d: c(vec![u, v, u + rng.gen_range(0.5..12.0), v + rng.gen_range(0.5..12.0)]),
        center3d: c((0..3).map(|_| rng.gen_range(-20.0..50.0)).collect()),
    }
}

/// Largest `|(l_υ + l_σ) − Σ terms|` over `n` random sets and every clustering.
pub fn regroup_max_error(n: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mut tape = Tape::new();
        let p = random_preds(&mut rng, &mut tape);
        let t = random_target(&mut rng);
        let terms = loss_terms(&mut tape, &p, &t).unwrap();
        let reference: f64 = [terms.class, terms.rot, terms.whl, terms.box2d, terms.xyz]
            .iter()
            .map(|&v| tape.item(v).unwrap())
            .sum();
        for cfg in ClusteringConfig::ALL {
            let (a, l) = grouped_losses(&mut tape, &p, &t, cfg).unwrap();
            let sum = tape.item(a).unwrap() + tape.item(l).unwrap();
            worst = worst.max((sum - reference).abs());
        }
    }
    worst
}
