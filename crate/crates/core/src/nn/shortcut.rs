use super::{NnError, Real, Tensor};

/// Parameter-free downsampling shortcut ("option A"): subsamples the spatial
/// grid by `stride` (keeping offset 0) and zero-pads the channel dimension up
/// to `out_channels` (new channels appended).
///
/// With `stride == 1` and `out_channels == C` this is the identity.
pub fn shortcut_a_forward<T: Real>(
    x: &Tensor<T>,
    out_channels: usize,
    stride: usize,
) -> Result<Tensor<T>, NnError> {
    if x.shape().len() != 4 {
        return Err(NnError::RankMismatch {
            expected: 4,
            shape: x.shape().to_vec(),
            context: "shortcut input".into(),
        });
    }
    if stride != 1 && stride != 2 {
        return Err(NnError::BadStride { stride });
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if out_channels < c {
        return Err(NnError::DimMismatch {
            axis: 1,
            left: out_channels,
            right: c,
            context: "shortcut: cannot drop channels".into(),
        });
    }
    let (ho, wo) = ((h + stride - 1) / stride, (w + stride - 1) / stride);
    let mut out = vec![T::zero(); n * out_channels * ho * wo];
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    out[((ni * out_channels + ci) * ho + oh) * wo + ow] =
                        x.at4(ni, ci, oh * stride, ow * stride);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, out_channels, ho, wo], out))
}

/// Backward of [`shortcut_a_forward`]: scatters upstream gradient back to the
/// sampled positions; padded channels contribute nothing.
pub fn shortcut_a_backward<T: Real>(
    dy: &Tensor<T>,
    in_shape: &[usize],
    stride: usize,
) -> Tensor<T> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (ho, wo) = (dy.dim(2), dy.dim(3));
    let mut dx = Tensor::zeros(in_shape);
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let off = dx.idx4(ni, ci, oh * stride, ow * stride);
                    dx.data_mut()[off] = dy.at4(ni, ci, oh, ow);
                }
            }
        }
    }
    let _ = (h, w);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_shapes_match() {
        let x = Tensor::<f32>::from_fn(&[1, 2, 4, 4], |i| i as f32);
        let y = shortcut_a_forward(&x, 2, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn stride_two_subsamples_and_pads_channels() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let y = shortcut_a_forward(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        // kept positions: (0,0) (0,2) (2,0) (2,2)
        assert_eq!(&y.data()[..4], &[0.0, 2.0, 8.0, 10.0]);
        // padded channel is all zeros
        assert!(y.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_inverts_scatter() {
        let dy = Tensor::<f32>::from_fn(&[1, 2, 2, 2], |i| (i + 1) as f32);
        let dx = shortcut_a_backward(&dy, &[1, 1, 4, 4], 2);
        assert_eq!(dx.at4(0, 0, 0, 0), 1.0);
        assert_eq!(dx.at4(0, 0, 0, 2), 2.0);
        assert_eq!(dx.at4(0, 0, 2, 0), 3.0);
        assert_eq!(dx.at4(0, 0, 2, 2), 4.0);
        assert_eq!(dx.at4(0, 0, 1, 1), 0.0);
    }
}
