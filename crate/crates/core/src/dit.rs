//! Dynamic intra-trading: per-task confidence scores that reweight the two
//! task losses, with a `−log` term that keeps them from collapsing to zero.

use std::fmt;
use std::str::FromStr;

use dfr_tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::{conv_tensors, pointwise, ConvVars};

/// How the two trading scores are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DitVariant {
    /// Each score from its own warped stream feature.
    #[default]
    Learned,
    /// Free trainable scalars squashed by a sigmoid; no features involved.
    Init,
    /// Each score predicted from the other stream's feature.
    Cross,
    /// Both scores from the shared feature, separate heads.
    Shared,
}

impl DitVariant {
    pub const ALL: [DitVariant; 4] = [Self::Learned, Self::Init, Self::Cross, Self::Shared];

    pub fn name(self) -> &'static str {
        match self {
            Self::Learned => "learned",
            Self::Init => "init",
            Self::Cross => "cross",
            Self::Shared => "shared",
        }
    }
}

impl fmt::Display for DitVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DitVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown trading variant {s:?} (learned|init|cross|shared)")))
    }
}

/// Two-layer score head `C → C/r → 1`.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub hidden: ConvVars,
    pub out: ConvVars,
}

/// `[w1, b1, w2, b2]` for one head; weights uniform, biases zero.
pub fn head_tensors(rng: &mut impl Rng, channels: usize, reduction: usize) -> Result<Vec<Tensor>> {
    let hidden = channels / reduction.max(1);
    if hidden == 0 {
        return Err(CoreError::Config(format!(
            "score head hidden width {channels}/{reduction} is zero"
        )));
    }
    let mut v = conv_tensors(rng, channels, hidden, 1).to_vec();
    v.extend(conv_tensors(rng, hidden, 1, 1));
    Ok(v)
}

impl HeadVars {
    pub fn from_ordered(v: &[Var]) -> Self {
        assert_eq!(v.len(), 4, "a score head has four tensors");
        Self {
            hidden: ConvVars {
                weight: v[0],
                bias: v[1],
            },
            out: ConvVars {
                weight: v[2],
                bias: v[3],
            },
        }
    }
}

/// `sigmoid(w2 · relu(w1 · gap(f) + b1) + b2)`, shape `[1]`.
pub fn trading_score(tape: &mut Tape, f_star: Var, head: &HeadVars) -> Result<Var> {
    let pooled = tape.global_avg_pool(f_star)?;
    let h = pointwise(tape, head.hidden, pooled)?;
    let h = tape.relu(h)?;
    let o = pointwise(tape, head.out, h)?;
    Ok(tape.sigmoid(o)?)
}

/// `s_υ·l_υ + s_σ·l_σ − log(s_υ·s_σ)`. Scores must lie in (0, 1].
pub fn trading_loss(tape: &mut Tape, l_app: Var, l_loc: Var, s_app: Var, s_loc: Var) -> Result<Var> {
    for (name, s) in [("appearance", s_app), ("localization", s_loc)] {
        let v = tape.item(s)?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(CoreError::Domain(format!("{name} trading score {v} outside (0, 1]")));
        }
    }
    let a = tape.mul(s_app, l_app)?;
    let b = tape.mul(s_loc, l_loc)?;
    let weighted = tape.add(a, b)?;
    let prod = tape.mul(s_app, s_loc)?;
    let reg = tape.log(prod)?;
    Ok(tape.sub(weighted, reg)?)
}

/// Plain-number version of [`trading_loss`].
pub fn trading_loss_value(l_app: f64, l_loc: f64, s_app: f64, s_loc: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = [l_app, l_loc, s_app, s_loc].map(|x| tape.scalar_constant(x));
    let out = trading_loss(&mut tape, v[0], v[1], v[2], v[3])?;
    Ok(tape.item(out)?)
}

#[derive(Debug, Clone)]
pub struct DitParams {
    pub variant: DitVariant,
    ids: Vec<ParamId>,
}

/// Bound handles: two heads, or two raw scalars for [`DitVariant::Init`].
#[derive(Debug, Clone, Copy)]
pub enum DitVars {
    Heads { app: HeadVars, loc: HeadVars },
    Free { app: Var, loc: Var },
}

/// Parameter tensors of a variant in registration order.
pub fn dit_tensors(
    rng: &mut impl Rng,
    variant: DitVariant,
    channels: usize,
    reduction: usize,
    init_raw: [f64; 2],
) -> Result<Vec<(String, Tensor)>> {
    if variant == DitVariant::Init {
        return Ok(vec![
            ("score_app_raw".into(), Tensor::scalar(init_raw[0])),
            ("score_loc_raw".into(), Tensor::scalar(init_raw[1])),
        ]);
    }
    let names = ["hidden.weight", "hidden.bias", "out.weight", "out.bias"];
    let mut out = Vec::new();
    for stream in ["app", "loc"] {
        for (n, t) in names.iter().zip(head_tensors(rng, channels, reduction)?) {
            out.push((format!("head_{stream}.{n}"), t));
        }
    }
    Ok(out)
}

impl DitVars {
    pub fn from_ordered(variant: DitVariant, v: &[Var]) -> Self {
        match variant {
            DitVariant::Init => Self::Free { app: v[0], loc: v[1] },
            _ => Self::Heads {
                app: HeadVars::from_ordered(&v[..4]),
                loc: HeadVars::from_ordered(&v[4..8]),
            },
        }
    }
}

impl DitParams {
    /// The `Init` variant's scalars start at `init_raw` (0 gives scores of 0.5).
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
        variant: DitVariant,
        channels: usize,
        reduction: usize,
        init_raw: [f64; 2],
    ) -> Result<Self> {
        let ids = dit_tensors(rng, variant, channels, reduction, init_raw)?
            .into_iter()
            .map(|(n, t)| store.insert(format!("{prefix}.{n}"), t))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { variant, ids })
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn vars(&self, bound: &Bound) -> DitVars {
        let v: Vec<Var> = self.ids.iter().map(|&id| bound[id]).collect();
        DitVars::from_ordered(self.variant, &v)
    }
}

/// `(s_υ, s_σ)` for the chosen variant.
pub fn score_variant(
    tape: &mut Tape,
    vars: &DitVars,
    variant: DitVariant,
    f_star_app: Var,
    f_star_loc: Var,
    f_shared: Var,
) -> Result<(Var, Var)> {
    match (*vars, variant) {
        (DitVars::Free { app, loc }, DitVariant::Init) => Ok((tape.sigmoid(app)?, tape.sigmoid(loc)?)),
        (DitVars::Heads { app, loc }, v) if v != DitVariant::Init => {
            let (src_app, src_loc) = match v {
                DitVariant::Learned => (f_star_app, f_star_loc),
                DitVariant::Cross => (f_star_loc, f_star_app),
                _ => (f_shared, f_shared),
            };
            Ok((
                trading_score(tape, src_app, &app)?,
                trading_score(tape, src_loc, &loc)?,
            ))
        }
        _ => Err(CoreError::Config(format!(
            "trading parameters do not match variant `{variant}`"
        ))),
    }
}
