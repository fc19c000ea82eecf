use crate::error::{Result, TensorError};
use crate::param::ParamStore;

/// Stochastic gradient descent with classical momentum and L2 weight decay.
///
/// `v ← momentum·v + (grad + weight_decay·param)`, `param ← param − lr·v`.
/// Gradients are cleared after every step.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(TensorError::Contract(format!(
                "parameter `{}` has no gradient",
                p.name
            )));
        }
        if self.velocity.len() < params.len() {
            for p in params.iter().skip(self.velocity.len()) {
                self.velocity.push(vec![0.0; p.tensor.numel()]);
            }
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let data = p.tensor.data_mut();
            for ((x, vi), g) in data.iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = self.momentum * *vi + (g + self.weight_decay * *x);
                *x -= self.lr * *vi;
            }
            p.tensor.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(value: f64) -> (ParamStore, crate::param::ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(value)).unwrap();
        (s, id)
    }

    #[test]
    fn plain_step() {
        let (mut s, id) = store_with(0.0);
        s.tensor_mut(id).accumulate_grad(&[1.0]).unwrap();
        Sgd::new(0.1, 0.0, 0.0).step(&mut s).unwrap();
        assert!((s.tensor(id).data()[0] + 0.1).abs() < 1e-15);
        assert!(s.tensor(id).grad().is_none());
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let (mut s, id) = store_with(0.7);
        s.tensor_mut(id).accumulate_grad(&[0.0]).unwrap();
        Sgd::new(0.1, 0.9, 0.0).step(&mut s).unwrap();
        assert_eq!(s.tensor(id).data()[0], 0.7);
    }

    #[test]
    fn momentum_unrolls() {
        let (mut s, id) = store_with(0.0);
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        s.tensor_mut(id).accumulate_grad(&[1.0]).unwrap();
        opt.step(&mut s).unwrap();
        assert!((s.tensor(id).data()[0] + 0.1).abs() < 1e-15);
        s.tensor_mut(id).accumulate_grad(&[1.0]).unwrap();
        opt.step(&mut s).unwrap();
        assert!((s.tensor(id).data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut s, _) = store_with(1.0);
        assert!(matches!(
            Sgd::new(0.1, 0.0, 0.0).step(&mut s),
            Err(TensorError::Contract(_))
        ));
    }
}
