//! Small single-object monocular detector: conv encoder, optional feature
//! reflecting block, pointwise task heads read at the object-centre cell,
//! and optional trading-score heads.

use dfr_kitti::{CalibP2, KittiObjectLabel};
use dfr_tensor::{seeded_rng, Bound, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::alfr::{alfr_forward, AlfrConfig, AlfrParams};
use crate::dit::{score_variant, DitParams, DitVariant};
use crate::error::{CoreError, Result};
use crate::losses::{ClusteringConfig, PredVars, StreamChoice};
use crate::nn::{conv, pointwise, ConvParams};
use crate::scene::{class_category, toy_calib, SyntheticScene, IMAGE_SIZE, NUM_CLASSES};

/// Heads are read per pixel of the full-resolution feature map.
pub const GRID: usize = IMAGE_SIZE;
/// The reflecting block runs on the feature map average-pooled by this
/// factor; its change is upsampled back onto the full-resolution map.
pub const ALFR_POOL: usize = 4;
/// Pixel scale of box half-extents.
pub const BOX_SCALE: f64 = 8.0;
/// Pixel scale of the projected-centre offset from the read-out pixel.
pub const CENTER_SCALE: f64 = 1.0;
/// Inverse depth is `INV_DEPTH_SCALE·softplus(o + INV_DEPTH_SHIFT)`: close to
/// linear in `o` over the scene depth range, positive everywhere.
pub const INV_DEPTH_SCALE: f64 = 0.025;
pub const INV_DEPTH_SHIFT: f64 = 2.0;
/// `(w, h, l)` added to the raw dimension outputs.
pub const DIM_PRIOR: [f64; 3] = [1.0, 1.65, 2.4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub reduction: usize,
    pub use_alfr: bool,
    pub alfr: AlfrConfig,
    pub use_dit: bool,
    pub dit_variant: DitVariant,
    pub clustering: ClusteringConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            reduction: 4,
            use_alfr: true,
            alfr: AlfrConfig::default(),
            use_dit: true,
            dit_variant: DitVariant::Learned,
            clustering: ClusteringConfig::default(),
        }
    }
}

/// Output channel layout of the two heads for a clustering choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub n_app: usize,
    pub n_loc: usize,
    /// `(head, offset)` of the yaw output.
    pub rot: (StreamChoice, usize),
    /// `(head, offset)` of the three dimension outputs.
    pub whl: (StreamChoice, usize),
}

impl HeadLayout {
    pub const LOGITS: usize = NUM_CLASSES + 1;
    /// Box edges then projected centre and depth.
    pub const LOC_FIXED: usize = 7;

    pub fn new(c: ClusteringConfig) -> Self {
        let mut n = [Self::LOGITS, Self::LOC_FIXED];
        let mut place = |s: StreamChoice, width: usize| {
            let k = (s == StreamChoice::Localization) as usize;
            let off = n[k];
            n[k] += width;
            (s, off)
        };
        let rot = place(c.rot_stream, 1);
        let whl = place(c.whl_stream, 3);
        Self {
            n_app: n[0],
            n_loc: n[1],
            rot,
            whl,
        }
    }
}

/// Independent generator for one parameter group, so adding a module never
/// shifts the initial values of the others.
pub fn module_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct ToyDetector {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub layout: HeadLayout,
    conv1: ConvParams,
    conv2: ConvParams,
    head_app: ConvParams,
    head_loc: ConvParams,
    alfr: Option<AlfrParams>,
    dit: Option<DitParams>,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs {
    pub preds: PredVars,
    pub f_shared: Var,
    pub f_star_app: Var,
    pub f_star_loc: Var,
    pub raw_app: Var,
    pub raw_loc: Var,
}

/// Pixel `(row, col)` containing image point `(u, v)`.
pub fn cell_of(u: f64, v: f64) -> (usize, usize) {
    let clamp = |p: f64| (p.floor().max(0.0) as usize).min(GRID - 1);
    (clamp(v), clamp(u))
}

/// Image point at the centre of pixel `(row, col)`.
pub fn cell_center(cell: (usize, usize)) -> (f64, f64) {
    (cell.1 as f64 + 0.5, cell.0 as f64 + 0.5)
}

impl ToyDetector {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let c = cfg.channels;
        if c == 0 || cfg.reduction == 0 || c / cfg.reduction == 0 {
            return Err(CoreError::Config(format!(
                "channels {c} with reduction {} leaves no hidden width",
                cfg.reduction
            )));
        }
        if cfg.use_alfr {
            cfg.alfr.validate()?;
        }
        let layout = HeadLayout::new(cfg.clustering);
        let mut store = ParamStore::new();
        let mut enc = module_rng(seed, 1);
        let conv1 = ConvParams::init(&mut store, "encoder.conv1", &mut enc, 3, c, 3)?;
        let conv2 = ConvParams::init(&mut store, "encoder.conv2", &mut enc, c, c, 3)?;
        let mut heads = module_rng(seed, 2);
        let head_app = ConvParams::init(&mut store, "head_app", &mut heads, c, layout.n_app, 1)?;
        let head_loc = ConvParams::init(&mut store, "head_loc", &mut heads, c, layout.n_loc, 1)?;
        let alfr = if cfg.use_alfr {
            Some(AlfrParams::init(&mut store, "alfr", &mut module_rng(seed, 3), c, cfg.reduction)?)
        } else {
            None
        };
        let dit = if cfg.use_dit {
            Some(DitParams::init(
                &mut store,
                "dit",
                &mut module_rng(seed, 4),
                cfg.dit_variant,
                c,
                cfg.reduction,
                [0.0, 0.0],
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            store,
            layout,
            conv1,
            conv2,
            head_app,
            head_loc,
            alfr,
            dit,
        })
    }

    /// Shared `C × GRID × GRID` feature.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, image: Var) -> Result<Var> {
        let h = conv(tape, self.conv1.vars(bound), image)?;
        let h = tape.relu(h)?;
        let h = conv(tape, self.conv2.vars(bound), h)?;
        Ok(tape.relu(h)?)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, image: &Tensor, cell: (usize, usize)) -> Result<ForwardOutputs> {
        let x = tape.constant(image.clone());
        let f_shared = self.encode(tape, bound, x)?;
        let (f_star_app, f_star_loc) = match &self.alfr {
            Some(a) => {
                let pooled = tape.avg_pool2d(f_shared, ALFR_POOL)?;
                let o = alfr_forward(tape, &a.vars(bound), pooled, self.cfg.alfr)?;
                (
                    add_upsampled_change(tape, f_shared, pooled, o.f_star_app)?,
                    add_upsampled_change(tape, f_shared, pooled, o.f_star_loc)?,
                )
            }
            None => (f_shared, f_shared),
        };
        let at_app = read_cell(tape, f_star_app, cell)?;
        let at_loc = read_cell(tape, f_star_loc, cell)?;
        let raw_app = pointwise(tape, self.head_app.vars(bound), at_app)?;
        let raw_loc = pointwise(tape, self.head_loc.vars(bound), at_loc)?;
        let preds = decode(tape, &self.layout, raw_app, raw_loc, cell, &toy_calib())?;
        Ok(ForwardOutputs {
            preds,
            f_shared,
            f_star_app,
            f_star_loc,
            raw_app,
            raw_loc,
        })
    }

    /// `(s_υ, s_σ)` when trading is enabled.
    pub fn scores(&self, tape: &mut Tape, bound: &Bound, out: &ForwardOutputs) -> Result<Option<(Var, Var)>> {
        match &self.dit {
            None => Ok(None),
            Some(d) => score_variant(
                tape,
                &d.vars(bound),
                d.variant,
                out.f_star_app,
                out.f_star_loc,
                out.f_shared,
            )
            .map(Some),
        }
    }

    /// Runs the model on a scene, reading the heads at its centre cell.
    pub fn detect(&self, scene: &SyntheticScene) -> Result<Detection> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let (u, v) = scene.center_pixel();
        let out = self.forward(&mut tape, &bound, &scene.image, cell_of(u, v))?;
        Detection::from_preds(&tape, &out.preds)
    }
}

/// `full + upsample(reflected − pooled)` with nearest-neighbour upsampling,
/// so an unchanged pooled map leaves `full` bitwise intact.
pub fn add_upsampled_change(tape: &mut Tape, full: Var, pooled: Var, reflected: Var) -> Result<Var> {
    let delta = tape.sub(reflected, pooled)?;
    let s = tape.shape(full).to_vec();
    let (h, w) = (s[1], s[2]);
    let (ph, pw) = (h / ALFR_POOL, w / ALFR_POOL);
    let idx: Vec<usize> = (0..s[0] * h * w)
        .map(|k| {
            let (ch, i, j) = (k / (h * w), k / w % h, k % w);
            (ch * ph + i / ALFR_POOL) * pw + j / ALFR_POOL
        })
        .collect();
    let up = tape.gather(delta, &idx)?;
    let up = tape.reshape(up, &s)?;
    Ok(tape.add(full, up)?)
}

/// `C`-vector of a `C × H × W` map at `cell`.
pub fn read_cell(tape: &mut Tape, f: Var, cell: (usize, usize)) -> Result<Var> {
    let s = tape.shape(f).to_vec();
    let (h, w) = (s[1], s[2]);
    let idx: Vec<usize> = (0..s[0]).map(|c| (c * h + cell.0) * w + cell.1).collect();
    Ok(tape.gather(f, &idx)?)
}

fn range(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

/// Turns raw head outputs into metric predictions.
///
/// Box edges sit at `p ∓ 8·exp(o)` around the pixel centre `p`; the projected
/// centre is `p + o`; inverse depth is `0.025·softplus(o + 2)`; `x`, `y` follow by
/// back-projection through `calib`.
pub fn decode(
    tape: &mut Tape,
    layout: &HeadLayout,
    raw_app: Var,
    raw_loc: Var,
    cell: (usize, usize),
    calib: &CalibP2,
) -> Result<PredVars> {
    let (pu, pv) = cell_center(cell);
    let head = |s: StreamChoice| if s == StreamChoice::Appearance { raw_app } else { raw_loc };
    let logits = tape.gather(raw_app, &range(0, HeadLayout::LOGITS))?;
    let rot = tape.gather(head(layout.rot.0), &[layout.rot.1])?;
    let dims = {
        let d = tape.gather(head(layout.whl.0), &range(layout.whl.1, 3))?;
        let prior = tape.constant(Tensor::from_vec(DIM_PRIOR.to_vec()));
        tape.add(d, prior)?
    };
    let box2d = {
        let o = tape.gather(raw_loc, &range(0, 4))?;
        let e = tape.exp(o)?;
        let sign = tape.constant(Tensor::from_vec(vec![-BOX_SCALE, -BOX_SCALE, BOX_SCALE, BOX_SCALE]));
        let off = tape.mul(e, sign)?;
        let centre = tape.constant(Tensor::from_vec(vec![pu, pv, pu, pv]));
        tape.add(off, centre)?
    };
    let center3d = {
        let p = calib.p2;
        let (f, cu, cv) = (p[0][0], p[0][2], p[1][2]);
        let o = tape.gather(raw_loc, &[4, 5])?;
        let o = tape.scale(o, CENTER_SCALE)?;
        // Offsets relative to the principal point.
        let rel = tape.constant(Tensor::from_vec(vec![pu - cu, pv - cv]));
        let uv = tape.add(o, rel)?;
        let z = {
            let o = tape.gather(raw_loc, &[6])?;
            let shift = tape.scalar_constant(INV_DEPTH_SHIFT);
            let o = tape.add(o, shift)?;
            let e = tape.exp(o)?;
            let one = tape.scalar_constant(1.0);
            let sp = tape.add(e, one)?;
            let sp = tape.log(sp)?;
            let inv = tape.scale(sp, INV_DEPTH_SCALE)?;
            tape.div(one, inv)?
        };
        let xy = tape.scalar_mul(z, uv)?;
        let xy = tape.scale(xy, 1.0 / f)?;
        tape.concat(&[xy, z])?
    };
    Ok(PredVars {
        logits,
        rot,
        dims,
        box2d,
        center3d,
    })
}

/// Decoded output of one scene as plain numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: usize,
    pub score: f64,
    pub probs: Vec<f64>,
    pub rot: f64,
    /// `(w, h, l)`.
    pub dims: [f64; 3],
    pub box2d: [f64; 4],
    pub center3d: [f64; 3],
}

impl Detection {
    pub fn from_preds(tape: &Tape, p: &PredVars) -> Result<Self> {
        let logits = tape.value(p.logits).data().to_vec();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let probs: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
        let class = (0..NUM_CLASSES)
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
            .expect("at least one class");
        let arr = |v: Var| tape.value(v).data().to_vec();
        let (d, b, c) = (arr(p.dims), arr(p.box2d), arr(p.center3d));
        let det = Self {
            class,
            score: probs[class],
            probs,
            rot: dfr_tensor::wrap_angle(tape.item(p.rot)?),
            dims: [d[0], d[1], d[2]],
            box2d: [b[0], b[1], b[2], b[3]],
            center3d: [c[0], c[1], c[2]],
        };
        if !det.dims.iter().chain(&det.box2d).chain(&det.center3d).all(|v| v.is_finite()) {
            return Err(CoreError::Domain("non-finite prediction".into()));
        }
        Ok(det)
    }

    /// KITTI result record; non-positive dimensions are kept and simply
    /// never overlap anything.
    pub fn to_label(&self) -> KittiObjectLabel {
        let [w, h, l] = self.dims;
        let [x, _, z] = self.center3d;
        KittiObjectLabel {
            category: class_category(self.class).name().to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha: dfr_tensor::wrap_angle(self.rot - x.atan2(z)),
            box2d: self.box2d,
            dims: [h, w, l],
            location: self.center3d,
            rotation_y: self.rot,
            score: Some(self.score),
        }
    }
}
