//! Parameter bundles for the small layers the models are built from.

use dfr_tensor::{uniform_init, Bound, ParamId, ParamStore, Padding, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Convolution weight `[out × in × k × k]` plus per-channel bias.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Tape handles of a bound [`ConvParams`].
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

/// Weight uniform in ±1/√fan_in, bias zero.
pub fn conv_tensors(rng: &mut impl Rng, c_in: usize, c_out: usize, kernel: usize) -> [Tensor; 2] {
    let fan_in = c_in * kernel * kernel;
    [
        uniform_init(rng, &[c_out, c_in, kernel, kernel], fan_in),
        Tensor::zeros(&[c_out]),
    ]
}

impl ConvParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        rng: &mut impl Rng,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        let [w, b] = conv_tensors(rng, c_in, c_out, kernel);
        Ok(Self {
            weight: store.insert(format!("{name}.weight"), w)?,
            bias: store.insert(format!("{name}.bias"), b)?,
        })
    }

    pub fn vars(&self, bound: &Bound) -> ConvVars {
        ConvVars {
            weight: bound[self.weight],
            bias: bound[self.bias],
        }
    }
}

/// Same-padded convolution followed by the bias.
pub fn conv(tape: &mut Tape, p: ConvVars, x: Var) -> Result<Var> {
    let y = tape.conv2d(x, p.weight, Padding::Same)?;
    Ok(tape.add_bias(y, p.bias)?)
}

/// Affine map of a length-`C` vector with a `[out × C × 1 × 1]` kernel;
/// identical to a 1×1 convolution evaluated at a single pixel.
pub fn pointwise(tape: &mut Tape, p: ConvVars, v: Var) -> Result<Var> {
    let ws = tape.shape(p.weight).to_vec();
    let w = tape.reshape(p.weight, &[ws[0], ws[1]])?;
    let col = tape.reshape(v, &[ws[1], 1])?;
    let y = tape.matmul(w, col)?;
    let y = tape.reshape(y, &[ws[0]])?;
    Ok(tape.add(y, p.bias)?)
}
