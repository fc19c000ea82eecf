//! Appearance/localization feature reflecting.
//!
//! The shared map is split into an appearance stream (υ) and a localization
//! stream (σ). Each stream builds a self-reflect affinity from its own two
//! projections and a mutual-reflect affinity that borrows the first
//! projection of the other stream. The two maps are mixed, used to warp a
//! value transform of the shared map, and the result is added back through a
//! learnable residual scale that starts at zero.

use std::fmt;
use std::str::FromStr;

use dfr_tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::{conv, conv_tensors, ConvVars};

/// Which mutual-reflect directions are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Flow {
    #[default]
    Both,
    /// Appearance informs localization: only the σ stream's mutual map.
    AppToLoc,
    /// Localization informs appearance: only the υ stream's mutual map.
    LocToApp,
    None,
}

impl Flow {
    pub const ALL: [Flow; 4] = [Flow::None, Flow::AppToLoc, Flow::LocToApp, Flow::Both];

    pub fn name(self) -> &'static str {
        match self {
            Self::Both => "both",
            Self::AppToLoc => "app_to_loc",
            Self::LocToApp => "loc_to_app",
            Self::None => "none",
        }
    }

    fn app_mutual(self) -> bool {
        matches!(self, Self::Both | Self::LocToApp)
    }

    fn loc_mutual(self) -> bool {
        matches!(self, Self::Both | Self::AppToLoc)
    }
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Flow {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown flow {s:?} (both|app_to_loc|loc_to_app|none)")))
    }
}

/// Switches of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlfrConfig {
    pub flow: Flow,
    /// With `false` only the mutual maps are used (λ fixed at 0). Every
    /// stream then needs its mutual map, so only `Flow::Both` is accepted.
    pub self_reflect: bool,
}

impl AlfrConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.self_reflect && self.flow != Flow::Both {
            return Err(CoreError::Config(format!(
                "without self-reflect every stream needs a mutual map; flow `{}` leaves one empty",
                self.flow
            )));
        }
        Ok(())
    }
}

impl Default for AlfrConfig {
    fn default() -> Self {
        Self {
            flow: Flow::Both,
            self_reflect: true,
        }
    }
}

/// Parameter names in registration order; [`AlfrVars::from_ordered`] relies on it.
pub const PARAM_NAMES: [&str; 20] = [
    "sep_app.weight",
    "sep_app.bias",
    "sep_loc.weight",
    "sep_loc.bias",
    "proj_app1.weight",
    "proj_app1.bias",
    "proj_app2.weight",
    "proj_app2.bias",
    "proj_loc1.weight",
    "proj_loc1.bias",
    "proj_loc2.weight",
    "proj_loc2.bias",
    "value_app.weight",
    "value_app.bias",
    "value_loc.weight",
    "value_loc.bias",
    "mix_app",
    "mix_loc",
    "res_app",
    "res_loc",
];

/// All learnable tensors of a block, in [`PARAM_NAMES`] order.
/// Transforms are 1×1; mixing and residual scalars start at 0.
pub fn init_tensors(rng: &mut impl Rng, channels: usize, reduction: usize) -> Result<Vec<Tensor>> {
    if reduction == 0 || channels % reduction != 0 {
        return Err(CoreError::Config(format!(
            "channel count {channels} is not divisible by reduction ratio {reduction}"
        )));
    }
    let c = channels;
    let cr = c / reduction;
    let mut out = Vec::with_capacity(PARAM_NAMES.len());
    for c_out in [c, c, cr, cr, cr, cr, c, c] {
        out.extend(conv_tensors(rng, c, c_out, 1));
    }
    out.extend((0..4).map(|_| Tensor::scalar(0.0)));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AlfrParams {
    ids: Vec<ParamId>,
    pub channels: usize,
    pub reduction: usize,
}

impl AlfrParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let tensors = init_tensors(rng, channels, reduction)?;
        let ids = PARAM_NAMES
            .iter()
            .zip(tensors)
            .map(|(n, t)| store.insert(format!("{prefix}.{n}"), t))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            ids,
            channels,
            reduction,
        })
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| self.ids[i])
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn vars(&self, bound: &Bound) -> AlfrVars {
        let v: Vec<Var> = self.ids.iter().map(|&id| bound[id]).collect();
        AlfrVars::from_ordered(&v)
    }
}

/// Tape handles of every block parameter.
#[derive(Debug, Clone, Copy)]
pub struct AlfrVars {
    pub sep_app: ConvVars,
    pub sep_loc: ConvVars,
    pub proj_app1: ConvVars,
    pub proj_app2: ConvVars,
    pub proj_loc1: ConvVars,
    pub proj_loc2: ConvVars,
    pub value_app: ConvVars,
    pub value_loc: ConvVars,
    pub mix_app: Var,
    pub mix_loc: Var,
    pub res_app: Var,
    pub res_loc: Var,
}

impl AlfrVars {
    /// Builds the handle set from vars in [`PARAM_NAMES`] order.
    pub fn from_ordered(v: &[Var]) -> Self {
        assert_eq!(v.len(), PARAM_NAMES.len(), "expected one var per block parameter");
        let cv = |i: usize| ConvVars {
            weight: v[i],
            bias: v[i + 1],
        };
        Self {
            sep_app: cv(0),
            sep_loc: cv(2),
            proj_app1: cv(4),
            proj_app2: cv(6),
            proj_loc1: cv(8),
            proj_loc2: cv(10),
            value_app: cv(12),
            value_loc: cv(14),
            mix_app: v[16],
            mix_loc: v[17],
            res_app: v[18],
            res_loc: v[19],
        }
    }
}

/// Everything a forward pass produces, handles into the tape.
#[derive(Debug, Clone, Copy)]
pub struct StreamOutputs {
    pub f_star_app: Var,
    pub f_star_loc: Var,
    /// Final `N×N` attention of each stream.
    pub w_app: Var,
    pub w_loc: Var,
}

/// Task-specific maps `act(sep(f_s))` for both streams.
pub fn separate(tape: &mut Tape, p: &AlfrVars, f_s: Var) -> Result<(Var, Var)> {
    let a = conv(tape, p.sep_app, f_s)?;
    let l = conv(tape, p.sep_loc, f_s)?;
    Ok((tape.relu(a)?, tape.relu(l)?))
}

fn flatten(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(CoreError::Tensor(dfr_tensor::TensorError::Dimension {
            op: "flatten",
            lhs: s,
            rhs: vec![0, 0, 0],
        }));
    }
    Ok(tape.reshape(x, &[s[0], s[1] * s[2]])?)
}

/// Row-normalised affinity `softmax_j((f1ᵀ f2)[i, j])` of two `C'×N` maps.
pub fn self_reflect(tape: &mut Tape, f1: Var, f2: Var) -> Result<Var> {
    let t = tape.transpose(f1)?;
    let a = tape.matmul(t, f2)?;
    Ok(tape.softmax(a, 1)?)
}

/// Cross-stream affinity: the first operand comes from the other stream.
/// Same arithmetic as [`self_reflect`].
pub fn mutual_reflect(tape: &mut Tape, f_other1: Var, f_self2: Var) -> Result<Var> {
    self_reflect(tape, f_other1, f_self2)
}

/// `λ·w_s + (1 − λ)·w_m` with `λ = sigmoid(mix_raw)`.
pub fn combine(tape: &mut Tape, w_s: Var, w_m: Var, mix_raw: Var) -> Result<Var> {
    let lam = tape.sigmoid(mix_raw)?;
    let one = tape.scalar_constant(1.0);
    let rest = tape.sub(one, lam)?;
    let a = tape.scalar_mul(lam, w_s)?;
    let b = tape.scalar_mul(rest, w_m)?;
    Ok(tape.add(a, b)?)
}

/// `f_s + res · reshape(F_vs · wᵀ)` where `value` is the value transform of `f_s`.
pub fn warp_and_residual(tape: &mut Tape, f_s: Var, w: Var, value: Var, res: Var) -> Result<Var> {
    let shape = tape.shape(f_s).to_vec();
    let fv = flatten(tape, value)?;
    let wt = tape.transpose(w)?;
    let warped = tape.matmul(fv, wt)?;
    let warped = tape.reshape(warped, &shape)?;
    let scaled = tape.scalar_mul(res, warped)?;
    Ok(tape.add(f_s, scaled)?)
}

/// Full block on a `C×H×W` shared map.
pub fn alfr_forward(tape: &mut Tape, p: &AlfrVars, f_s: Var, cfg: AlfrConfig) -> Result<StreamOutputs> {
    cfg.validate()?;
    let (f_app, f_loc) = separate(tape, p, f_s)?;
    let proj = |tape: &mut Tape, c: ConvVars, x: Var| -> Result<Var> {
        let y = conv(tape, c, x)?;
        flatten(tape, y)
    };
    let a1 = proj(tape, p.proj_app1, f_app)?;
    let a2 = proj(tape, p.proj_app2, f_app)?;
    let l1 = proj(tape, p.proj_loc1, f_loc)?;
    let l2 = proj(tape, p.proj_loc2, f_loc)?;

    let w_app = stream_attention(tape, cfg, (a1, a2), l1, cfg.flow.app_mutual(), p.mix_app)?;
    let w_loc = stream_attention(tape, cfg, (l1, l2), a1, cfg.flow.loc_mutual(), p.mix_loc)?;

    let v_app = conv(tape, p.value_app, f_s)?;
    let v_loc = conv(tape, p.value_loc, f_s)?;
    Ok(StreamOutputs {
        f_star_app: warp_and_residual(tape, f_s, w_app, v_app, p.res_app)?,
        f_star_loc: warp_and_residual(tape, f_s, w_loc, v_loc, p.res_loc)?,
        w_app,
        w_loc,
    })
}

fn stream_attention(
    tape: &mut Tape,
    cfg: AlfrConfig,
    (own1, own2): (Var, Var),
    other1: Var,
    mutual_on: bool,
    mix: Var,
) -> Result<Var> {
    match (cfg.self_reflect, mutual_on) {
        (true, true) => {
            let ws = self_reflect(tape, own1, own2)?;
            let wm = mutual_reflect(tape, other1, own2)?;
            combine(tape, ws, wm, mix)
        }
        (true, false) => self_reflect(tape, own1, own2),
        (false, true) => mutual_reflect(tape, other1, own2),
        (false, false) => Err(CoreError::Config(
            "feature reflecting needs self-reflect or at least one mutual flow".into(),
        )),
    }
}
