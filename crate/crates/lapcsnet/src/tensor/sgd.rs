//! SGD with momentum and L2 weight decay.

use crate::error::{Error, Result};

use super::{Parameter, Scalar};

/// One optimizer step over all parameters:
///
/// ```text
/// buf   <- momentum * buf + (grad + weight_decay * value)
/// value <- value - lr * buf
/// ```
///
/// Gradients must have been populated by a backward pass; they are left in
/// place (call [`zero_grads`] before the next accumulation).
pub fn sgd_step<T: Scalar>(
    params: &mut [Parameter<T>],
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    for param in params.iter_mut() {
        if param.tensor().grad().is_none() {
            return Err(Error::State(format!(
                "parameter {} has no gradient; run backward before sgd_step",
                param.name()
            )));
        }
        let n = param.tensor().numel();
        for i in 0..n {
            let value = param.tensor().values()[i];
            let grad = param.tensor().grad().expect("checked above")[i];
            let buf = momentum * param.momentum()[i] + (grad + weight_decay * value);
            param.momentum_mut()[i] = buf;
            param.tensor_mut().values_mut()[i] = value - lr * buf;
        }
    }
    Ok(())
}

/// Clear the gradient buffer of every parameter.
pub fn zero_grads<T: Scalar>(params: &mut [Parameter<T>]) {
    for param in params {
        param.tensor_mut().clear_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param_with_grad(value: f64, grad: f64) -> Parameter<f64> {
        let mut p = Parameter::new("p", Tensor::scalar(value));
        p.tensor_mut().accumulate_grad(&[grad]);
        p
    }

    #[test]
    fn zero_lr_leaves_values_unchanged() {
        let mut params = vec![param_with_grad(1.5, 2.0)];
        sgd_step(&mut params, 0.0, 0.9, 1e-4).unwrap();
        assert_eq!(params[0].tensor().values()[0], 1.5);
    }

    #[test]
    fn first_step_without_decay_moves_by_lr_times_grad() {
        let mut params = vec![param_with_grad(1.0, 3.0)];
        sgd_step(&mut params, 0.1, 0.9, 0.0).unwrap();
        assert!((params[0].tensor().values()[0] - (1.0 - 0.1 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_is_a_state_error() {
        let mut params = vec![Parameter::new("p", Tensor::<f32>::scalar(1.0))];
        assert!(matches!(
            sgd_step(&mut params, 0.1, 0.9, 0.0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn three_step_trajectory_matches_scalar_recurrence() {
        // Minimize f(x) = x^2 / 2 (grad = x) from x0 = 1 and compare with
        // an independent scalar evaluation of the same recurrence.
        let (lr, momentum, wd) = (0.1, 0.9, 1e-4);
        let mut params = vec![Parameter::new("x", Tensor::scalar(1.0f64))];

        let (mut x, mut buf) = (1.0f64, 0.0f64);
        for _ in 0..3 {
            let grad = params[0].tensor().values()[0];
            params[0].tensor_mut().clear_grad();
            params[0].tensor_mut().accumulate_grad(&[grad]);
            sgd_step(&mut params, lr, momentum, wd).unwrap();

            let g = x;
            buf = momentum * buf + (g + wd * x);
            x -= lr * buf;
            assert!(
                (params[0].tensor().values()[0] - x).abs() < 1e-12,
                "trajectory diverged: {} vs {x}",
                params[0].tensor().values()[0]
            );
        }
    }
}
