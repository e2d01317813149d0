//! Minimal deterministic tensor and reverse-mode differentiation engine.
//!
//! Everything here is plain `Vec`-backed row-major storage and explicit
//! loops. Training runs in `f32`; the same code instantiated at `f64` is used
//! for gradient verification only.

mod batchnorm;
mod conv;
mod dense;
mod error;
mod graph;
mod pool;
mod rng;
mod sgd;
mod shortcut;
mod softmax;
mod tensor;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BnStats};
pub use conv::{conv2d_backward, conv2d_forward, conv_out_extent, ConvAlgo};
pub use dense::{dense_backward, dense_forward};
pub use error::NnError;
pub use graph::{
    ForwardPass, GradSet, Graph, Mode, Node, NodeId, NodeOp, ParamKind, ParamSet, StatUpdate,
};
pub use pool::{global_avg_pool_backward, global_avg_pool_forward};
pub use rng::SplitRng;
pub use sgd::{sgd_step, SgdConfig, SgdState};
pub use shortcut::{shortcut_a_backward, shortcut_a_forward};
pub use softmax::{accuracy, softmax_xent, XentResult};
pub use tensor::{Real, Tensor};

/// Adds two equal-shape tensors elementwise. The join of every skip
/// connection; its backward is the identity into both operands.
pub fn add_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if a.shape() != b.shape() {
        let axis = a
            .shape()
            .iter()
            .zip(b.shape().iter())
            .position(|(x, y)| x != y)
            .unwrap_or(a.shape().len().min(b.shape().len()));
        return Err(NnError::DimMismatch {
            axis,
            left: a.shape().get(axis).copied().unwrap_or(0),
            right: b.shape().get(axis).copied().unwrap_or(0),
            context: "add: operand shapes must be identical".into(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Rectified linear unit.
pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu_forward`]: masks the upstream gradient by the sign of
/// the forward input.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), dy.shape());
    let data = x
        .data()
        .iter()
        .zip(dy.data().iter())
        .map(|(&xi, &di)| if xi > T::zero() { di } else { T::zero() })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}
