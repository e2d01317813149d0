use indexmap::IndexMap;

use super::graph::{GradSet, ParamSet};
use super::{Real, Tensor};

/// SGD hyperparameters for one step.
#[derive(Clone, Copy, Debug)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Per-parameter momentum buffers, created lazily on first update.
#[derive(Clone, Debug, Default)]
pub struct SgdState<T> {
    velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    pub fn new() -> Self {
        Self {
            velocity: IndexMap::new(),
        }
    }
}

/// One SGD-with-momentum update:
/// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
///
/// Only parameters present in `grads` are touched; running statistics never
/// appear there.
pub fn sgd_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &GradSet<T>,
    state: &mut SgdState<T>,
    cfg: &SgdConfig,
) {
    let lr = T::from_f64(cfg.lr);
    let momentum = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);

    for (name, grad) in grads {
        let param = params
            .get_mut(name)
            .expect("gradient for unknown parameter");
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        for ((pv, gv), vv) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data().iter())
            .zip(v.data_mut().iter_mut())
        {
            *vv = momentum * *vv + *gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn setup(grad: f32) -> (ParamSet<f32>, GradSet<f32>) {
        let mut params = ParamSet::new();
        params.insert("w", ParamKind::Trainable, Tensor::filled(&[2], 1.0f32));
        let mut grads = GradSet::new();
        grads.insert("w".into(), Tensor::filled(&[2], grad));
        (params, grads)
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (mut params, grads) = setup(3.0);
        let mut state = SgdState::new();
        sgd_step(
            &mut params,
            &grads,
            &mut state,
            &SgdConfig { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 },
        );
        assert_eq!(params.get("w").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn vanilla_step_is_param_minus_lr_grad() {
        let (mut params, grads) = setup(2.0);
        let mut state = SgdState::new();
        sgd_step(
            &mut params,
            &grads,
            &mut state,
            &SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 },
        );
        let expect = 1.0 - 0.1 * 2.0;
        assert_eq!(params.get("w").unwrap().data(), &[expect, expect]);
    }

    #[test]
    fn two_momentum_steps_expand_the_recurrence() {
        // v1 = g, delta1 = lr*g; v2 = 0.9g + g = 1.9g, delta2 = lr*1.9g;
        // total delta = lr*g*(1 + 1.9).
        let (mut params, grads) = setup(1.0);
        let mut state = SgdState::new();
        let cfg = SgdConfig { lr: 0.01, momentum: 0.9, weight_decay: 0.0 };
        sgd_step(&mut params, &grads, &mut state, &cfg);
        sgd_step(&mut params, &grads, &mut state, &cfg);
        let expect = 1.0 - 0.01 * (1.0 + 1.9);
        let got = params.get("w").unwrap().data()[0];
        assert!((got - expect).abs() < 1e-6, "got {got}, expect {expect}");
    }
}
