use super::{AutodiffError, ParamGrads, ParamStore, Result, Tensor};

/// One momentum-SGD update of a single tensor: `v ← μ·v + g; p ← p − lr·v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || velocity.len() != param.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "sgd_step",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    for ((p, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "sgd",
                reason: format!("learning rate {} must be non-negative", self.lr),
            });
        }
        if grads.len() != store.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "sgd",
                reason: format!("{} gradients for {} parameters", grads.len(), store.len()),
            });
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            sgd_step(
                store.get_mut(id),
                grads.get(id),
                &mut self.velocity[id.index()],
                self.lr,
                self.momentum,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut p = Tensor::scalar(0.0);
        let mut v = vec![0.0];
        sgd_step(&mut p, &Tensor::scalar(1.0), &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p.item(), -0.1);
    }

    #[test]
    fn zero_grad_leaves_param() {
        let mut p = Tensor::vector(vec![0.7, -2.0]);
        let mut v = vec![0.0; 2];
        for _ in 0..5 {
            sgd_step(&mut p, &Tensor::zeros(&[2]), &mut v, 0.5, 0.9).unwrap();
        }
        assert_eq!(p.data(), &[0.7, -2.0]);
    }

    #[test]
    fn two_momentum_steps_match_recurrence() {
        // v1 = 2, p1 = 1 - 0.1*2 = 0.8; v2 = 0.9*2 + 3 = 4.8, p2 = 0.8 - 0.48 = 0.32
        let mut p = Tensor::scalar(1.0);
        let mut v = vec![0.0];
        sgd_step(&mut p, &Tensor::scalar(2.0), &mut v, 0.1, 0.9).unwrap();
        sgd_step(&mut p, &Tensor::scalar(3.0), &mut v, 0.1, 0.9).unwrap();
        assert!((v[0] - 4.8).abs() < 1e-15);
        assert!((p.item() - 0.32).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut v = vec![0.0; 2];
        assert!(sgd_step(&mut p, &Tensor::scalar(1.0), &mut v, 0.1, 0.0).is_err());
    }
}
