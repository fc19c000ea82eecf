//! Central finite differences and the per-op gradient suite.
//!
//! A [`GradCase`] knows how to draw random inputs and how to build a scalar
//! loss from them. [`check_case`] compares the tape gradient against
//! [`finite_difference_grad`] for every input element.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::seeded_rng;
use crate::tape::{OpKind, Padding, Tape, Var};
use crate::tensor::Tensor;

/// Central-difference estimate `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every element.
pub fn finite_difference_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), out).expect("same shape as input")
}

pub type InputFn = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor> + Send + Sync>;
pub type BuildFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync>;

/// One entry of the gradient suite.
pub struct GradCase {
    pub name: String,
    pub inputs: InputFn,
    pub build: BuildFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + Send + Sync + 'static,
        build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs: Box::new(inputs),
            build: Box::new(build),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub step: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-4,
            abs: 1e-6,
            step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub trials: usize,
    /// Largest relative error among elements whose gradient or error
    /// exceeds the absolute floor.
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub passed: bool,
}

fn eval_loss(case: &GradCase, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = (case.build)(&mut tape, &vars)?;
    tape.item(loss)
}

/// Runs `trials` random draws of `case`, optionally with a corrupted adjoint.
pub fn check_case(
    case: &GradCase,
    seed: u64,
    trials: usize,
    tol: Tolerance,
    fault: Option<OpKind>,
) -> Result<CaseReport> {
    let mut rng = seeded_rng(seed);
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut passed = true;
    for _ in 0..trials {
        let inputs = (case.inputs)(&mut rng);
        let mut tape = Tape::new();
        tape.inject_fault(fault);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
            .collect();
        let loss = (case.build)(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;

        for (j, x) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[j]).expect("tracked leaf");
            let mut failure = None;
            let numeric = finite_difference_grad(
                |probe| {
                    let mut trial = inputs.clone();
                    trial[j] = probe.clone();
                    eval_loss(case, &trial).unwrap_or_else(|e| {
                        failure = Some(e);
                        f64::NAN
                    })
                },
                x,
                tol.step,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            for (&a, &n) in analytic.iter().zip(numeric.data()) {
                let abs = (a - n).abs();
                let scale = a.abs().max(n.abs());
                let rel = abs / scale;
                worst_abs = worst_abs.max(abs);
                if scale > tol.abs || abs > tol.abs {
                    worst_rel = worst_rel.max(rel);
                }
                if abs > tol.abs && (rel >= tol.rel || !abs.is_finite()) {
                    passed = false;
                }
            }
        }
    }
    Ok(CaseReport {
        name: case.name.clone(),
        trials,
        worst_rel,
        worst_abs,
        passed,
    })
}

/// Reduces any variable to a scalar with fixed, non-uniform weights so that
/// every output element contributes a distinct coefficient.
pub fn contract_to_scalar(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (0.7 * i as f64 + 0.3).cos() + 0.25).collect();
    let w = tape.constant(Tensor::new(&shape, w)?);
    let prod = tape.mul(v, w)?;
    tape.sum(prod)
}

/// Uniform draw in `[lo, hi]`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..=hi)).collect()).expect("shape")
}

/// Uniform draw that keeps every element at least `margin` away from each kink.
pub fn uniform_avoiding(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    lo: f64,
    hi: f64,
    kinks: &[f64],
    margin: f64,
) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..=hi);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Shuffled values at least 0.05 apart, so window maxima are never tied.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| -2.0 + 4.0 * i as f64 / n as f64 + rng.gen_range(0.0..0.02))
        .collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, v).expect("product of shape")
}

fn pair_apart(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<Tensor> {
    let a = uniform(rng, shape, -2.0, 2.0);
    let mut b = uniform(rng, shape, -2.0, 2.0);
    for (bv, av) in b.data_mut().iter_mut().zip(a.data()) {
        if (*bv - av).abs() < 1e-2 {
            *bv = av + 0.5;
        }
    }
    vec![a, b]
}

fn elementwise(
    name: &str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + Send + Sync + 'static,
    op: fn(&mut Tape, Var) -> Result<Var>,
) -> GradCase {
    GradCase::new(name, inputs, move |t, v| {
        let y = op(t, v[0])?;
        contract_to_scalar(t, y)
    })
}

fn binary(
    name: &str,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + Send + Sync + 'static,
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> GradCase {
    GradCase::new(name, inputs, move |t, v| {
        let y = op(t, v[0], v[1])?;
        contract_to_scalar(t, y)
    })
}

/// One case per differentiable tape operation, plus the composed `conv2d`.
pub fn tensor_cases() -> Vec<GradCase> {
    let u = |shape: &'static [usize]| move |r: &mut ChaCha8Rng| vec![uniform(r, shape, -2.0, 2.0)];
    let u2 = |sa: &'static [usize], sb: &'static [usize]| {
        move |r: &mut ChaCha8Rng| vec![uniform(r, sa, -2.0, 2.0), uniform(r, sb, -2.0, 2.0)]
    };
    let distinct = |shape: &'static [usize]| move |r: &mut ChaCha8Rng| vec![spaced(r, shape)];
    let seams = [-3.0 * PI, -PI, PI, 3.0 * PI];

    let mut cases = Vec::new();
    for kind in OpKind::DIFFERENTIABLE {
        let name = kind.name();
        let case = match kind {
            OpKind::MatMul => binary(name, u2(&[3, 4], &[4, 2]), Tape::matmul),
            OpKind::Transpose => elementwise(name, u(&[3, 2]), Tape::transpose),
            OpKind::Reshape => elementwise(name, u(&[2, 3]), |t, x| t.reshape(x, &[3, 2])),
            OpKind::Softmax => elementwise(name, u(&[3, 4]), |t, x| t.softmax(x, 1)),
            OpKind::LogSoftmax => elementwise(name, u(&[2, 5]), |t, x| t.log_softmax(x, 1)),
            OpKind::Add => binary(name, u2(&[2, 3], &[2, 3]), Tape::add),
            OpKind::Sub => binary(name, u2(&[2, 3], &[2, 3]), Tape::sub),
            OpKind::Mul => binary(name, u2(&[2, 3], &[2, 3]), Tape::mul),
            OpKind::Div => binary(
                name,
                |r| {
                    let a = uniform(r, &[2, 3], -2.0, 2.0);
                    let mut b = uniform(r, &[2, 3], 0.5, 2.0);
                    for v in b.data_mut() {
                        if r.gen_bool(0.5) {
                            *v = -*v;
                        }
                    }
                    vec![a, b]
                },
                Tape::div,
            ),
            OpKind::ScalarMul => binary(name, u2(&[1], &[2, 3]), Tape::scalar_mul),
            OpKind::Scale => elementwise(name, u(&[4]), |t, x| t.scale(x, -1.7)),
            OpKind::Sigmoid => elementwise(name, u(&[5]), Tape::sigmoid),
            OpKind::Exp => elementwise(name, u(&[5]), Tape::exp),
            OpKind::Log => elementwise(name, |r| vec![uniform(r, &[5], 0.2, 2.0)], Tape::log),
            OpKind::Relu => elementwise(
                name,
                |r| vec![uniform_avoiding(r, &[6], -2.0, 2.0, &[0.0], 1e-3)],
                Tape::relu,
            ),
            OpKind::SmoothL1 => elementwise(
                name,
                |r| vec![uniform_avoiding(r, &[6], -2.0, 2.0, &[-1.0, 1.0], 1e-3)],
                Tape::smooth_l1,
            ),
            OpKind::WrapAngle => elementwise(
                name,
                move |r| vec![uniform_avoiding(r, &[6], -8.0, 8.0, &seams, 1e-3)],
                Tape::wrap_angle,
            ),
            OpKind::ClampMin => elementwise(
                name,
                |r| vec![uniform_avoiding(r, &[6], -2.0, 2.0, &[0.3], 1e-3)],
                |t, x| t.clamp_min(x, 0.3),
            ),
            OpKind::Minimum => binary(name, |r| pair_apart(r, &[2, 3]), Tape::minimum),
            OpKind::Maximum => binary(name, |r| pair_apart(r, &[2, 3]), Tape::maximum),
            OpKind::Im2Col => elementwise(name, u(&[2, 4, 3]), |t, x| t.im2col(x, 3, Padding::Same)),
            OpKind::AddBias => binary(name, u2(&[3, 2, 2], &[3]), Tape::add_bias),
            OpKind::AvgPool2d => elementwise(name, u(&[2, 4, 4]), |t, x| t.avg_pool2d(x, 2)),
            OpKind::MaxPool2d => elementwise(name, distinct(&[2, 4, 4]), |t, x| t.max_pool2d(x, 2)),
            OpKind::GlobalAvgPool => elementwise(name, u(&[3, 2, 3]), Tape::global_avg_pool),
            OpKind::Sum => GradCase::new(name, u(&[2, 3]), |t, v| t.sum(v[0])),
            OpKind::Mean => GradCase::new(name, u(&[2, 3]), |t, v| t.mean(v[0])),
            OpKind::Gather => elementwise(name, u(&[6]), |t, x| t.gather(x, &[4, 1, 4, 0])),
            OpKind::Concat => binary(name, u2(&[2], &[2, 2]), |t, a, b| t.concat(&[a, b])),
            OpKind::Leaf => unreachable!("leaves have no adjoint"),
        };
        cases.push(case);
    }
    cases.push(binary("conv2d", u2(&[2, 5, 4], &[3, 2, 3, 3]), |t, x, k| {
        t.conv2d(x, k, Padding::Same)
    }));
    cases.push(binary("conv2d_valid_1x1", u2(&[3, 2, 3], &[2, 3, 1, 1]), |t, x, k| {
        t.conv2d(x, k, Padding::Valid)
    }));
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_linear_sum_is_ones() {
        let x = Tensor::from_vec(vec![0.3, -4.0, 12.5]);
        let g = finite_difference_grad(|t| t.data().iter().sum(), &x, 1e-4);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fd_of_half_square() {
        let x = Tensor::from_vec(vec![2.0, -1.0]);
        let g = finite_difference_grad(
            |t| 0.5 * t.data().iter().map(|v| v * v).sum::<f64>(),
            &x,
            1e-4,
        );
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn registry_covers_each_op_once() {
        let cases = tensor_cases();
        for k in OpKind::DIFFERENTIABLE {
            assert_eq!(cases.iter().filter(|c| c.name == k.name()).count(), 1, "{k}");
        }
    }

    #[test]
    fn every_tensor_op_passes() {
        for case in tensor_cases() {
            let r = check_case(&case, 11, 20, Tolerance::default(), None).unwrap();
            assert!(r.passed, "{} worst rel {:e}", r.name, r.worst_rel);
        }
    }

    #[test]
    fn corrupted_adjoint_is_caught() {
        let cases = tensor_cases();
        for kind in [OpKind::MatMul, OpKind::Softmax, OpKind::Im2Col, OpKind::Gather] {
            let case = cases.iter().find(|c| c.name == kind.name()).unwrap();
            let r = check_case(case, 5, 3, Tolerance::default(), Some(kind)).unwrap();
            assert!(!r.passed, "{kind} fault went unnoticed");
        }
    }
}
