use super::{NnError, Real, Tensor};

/// Global average pooling: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if x.shape().len() != 4 {
        return Err(NnError::RankMismatch {
            expected: 4,
            shape: x.shape().to_vec(),
            context: "global average pool input".into(),
        });
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let mut acc = T::zero();
            for &v in &xd[base..base + plane] {
                acc += v;
            }
            out[ni * c + ci] = acc * inv;
        }
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Backward of [`global_avg_pool_forward`]: spreads each upstream element
/// uniformly over its spatial plane.
pub fn global_avg_pool_backward<T: Real>(dy: &Tensor<T>, in_shape: &[usize]) -> Tensor<T> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    debug_assert_eq!(dy.shape(), &[n, c]);
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    let mut dx = vec![T::zero(); n * c * plane];
    for ni in 0..n {
        for ci in 0..c {
            let g = dy.data()[ni * c + ci] * inv;
            let base = (ni * c + ci) * plane;
            for v in &mut dx[base..base + plane] {
                *v = g;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}
