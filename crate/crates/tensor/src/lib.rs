//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The engine covers exactly what the detection head needs: matrix products,
//! softmax, a handful of elementwise maps, patch-unrolled convolution, pooling,
//! reductions and gathers. There is no broadcasting apart from
//! [`Tape::scalar_mul`] and the explicit per-channel [`Tape::add_bias`].
//!
//! ```
//! use dfr_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![3.0]).with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x), Some(&[6.0][..]));
//! ```

mod error;
pub mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::Sgd;
pub use param::{seeded_rng, uniform_init, Bound, ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, wrap_angle, Gradients, OpKind, Padding, Tape, Var};
pub use tensor::Tensor;
