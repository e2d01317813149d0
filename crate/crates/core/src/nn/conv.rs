use rayon::prelude::*;

use super::{NnError, Real, Tensor};

/// Which forward implementation to run. `Direct` is the reference
/// seven-loop form; `Im2col` lowers each image to a patch matrix and runs a
/// small matmul. The two must agree elementwise to 1e-5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvAlgo {
    Direct,
    Im2col,
}

/// Output spatial extent of a convolution: `floor((in + 2*pad - k)/stride) + 1`.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

fn validate<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize), NnError> {
    if x.shape().len() != 4 {
        return Err(NnError::RankMismatch {
            expected: 4,
            shape: x.shape().to_vec(),
            context: "conv2d input".into(),
        });
    }
    if w.shape().len() != 4 {
        return Err(NnError::RankMismatch {
            expected: 4,
            shape: w.shape().to_vec(),
            context: "conv2d kernel".into(),
        });
    }
    if stride != 1 && stride != 2 {
        return Err(NnError::BadStride { stride });
    }
    let (n, c, h, win) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (k, wc, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    if c != wc {
        return Err(NnError::DimMismatch {
            axis: 1,
            left: c,
            right: wc,
            context: "conv2d: input channels vs kernel channels".into(),
        });
    }
    if kh != kw {
        return Err(NnError::DimMismatch {
            axis: 2,
            left: kh,
            right: kw,
            context: "conv2d: kernels must be square".into(),
        });
    }
    let _ = (n, h, win, k);
    Ok((n, c, h, win, k, kh))
}

/// 2-D cross-correlation with zero padding, no bias.
///
/// `x` is `[N, C, H, W]`, `w` is `[K, C, kh, kw]`; output is `[N, K, H', W']`
/// with the extent rule of [`conv_out_extent`].
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    algo: ConvAlgo,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, win, k, kk) = validate(x, w, stride)?;
    if h + 2 * pad < kk || win + 2 * pad < kk {
        return Err(NnError::DimMismatch {
            axis: 2,
            left: h + 2 * pad,
            right: kk,
            context: "conv2d: padded input smaller than kernel".into(),
        });
    }
    let ho = conv_out_extent(h, kk, stride, pad);
    let wo = conv_out_extent(win, kk, stride, pad);

    let mut out = vec![T::zero(); n * k * ho * wo];
    let per_image = k * ho * wo;
    // Each image's output slab is owned by exactly one task, so the result is
    // bit-identical regardless of thread count.
    out.par_chunks_mut(per_image)
        .enumerate()
        .for_each(|(img, out_img)| match algo {
            ConvAlgo::Direct => {
                direct_image(x, w, img, stride, pad, ho, wo, out_img);
            }
            ConvAlgo::Im2col => {
                let col = im2col_image(x, img, kk, stride, pad, ho, wo);
                matmul_into(w.data(), &col, out_img, k, c * kk * kk, ho * wo);
            }
        });
    Ok(Tensor::from_parts(vec![n, k, ho, wo], out))
}

#[allow(clippy::too_many_arguments)]
fn direct_image<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    img: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out_img: &mut [T],
) {
    let (c, h, win) = (x.dim(1), x.dim(2), x.dim(3));
    let (k, kk) = (w.dim(0), w.dim(2));
    for ko in 0..k {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = T::zero();
                for ci in 0..c {
                    for kh in 0..kk {
                        let ih = (oh * stride + kh) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kw in 0..kk {
                            let iw = (ow * stride + kw) as isize - pad as isize;
                            if iw < 0 || iw >= win as isize {
                                continue;
                            }
                            acc += x.at4(img, ci, ih as usize, iw as usize)
                                * w.at4(ko, ci, kh, kw);
                        }
                    }
                }
                out_img[(ko * ho + oh) * wo + ow] = acc;
            }
        }
    }
}

/// Patch matrix for one image: `[C*kh*kw, H'*W']`, zero-filled outside the
/// padded frame.
fn im2col_image<T: Real>(
    x: &Tensor<T>,
    img: usize,
    kk: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let (c, h, win) = (x.dim(1), x.dim(2), x.dim(3));
    let cols = ho * wo;
    let mut col = vec![T::zero(); c * kk * kk * cols];
    let xd = x.data();
    let img_base = img * c * h * win;
    let mut row = 0usize;
    for ci in 0..c {
        for kh in 0..kk {
            for kw in 0..kk {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oh in 0..ho {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src_row = img_base + (ci * h + ih as usize) * win;
                    for ow in 0..wo {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        if iw < 0 || iw >= win as isize {
                            continue;
                        }
                        dst[oh * wo + ow] = xd[src_row + iw as usize];
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Scatter a patch-matrix gradient back to image layout. Inverse of
/// [`im2col_image`] under accumulation.
fn col2im_image<T: Real>(
    dcol: &[T],
    c: usize,
    h: usize,
    win: usize,
    kk: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx_img: &mut [T],
) {
    let cols = ho * wo;
    let mut row = 0usize;
    for ci in 0..c {
        for kh in 0..kk {
            for kw in 0..kk {
                let src = &dcol[row * cols..(row + 1) * cols];
                for oh in 0..ho {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + ih as usize) * win;
                    for ow in 0..wo {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        if iw < 0 || iw >= win as isize {
                            continue;
                        }
                        dx_img[dst_row + iw as usize] += src[oh * wo + ow];
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out[m][n] = sum_k a[m][k] * b[k][n]`, accumulating into `out` (assumed
/// zeroed). Row-major everywhere; the k-inner ordering keeps `b` streaming.
fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, kdim: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * kdim..(i + 1) * kdim];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, &bkn) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bkn;
            }
        }
    }
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
///
/// Returns `(dx, dw)`. Internally uses the im2col lowering; per-image partial
/// kernel gradients are reduced in image order so the result does not depend
/// on thread count.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let (n, c, h, win, k, kk) = validate(x, w, stride)?;
    let ho = conv_out_extent(h, kk, stride, pad);
    let wo = conv_out_extent(win, kk, stride, pad);
    if dy.shape() != [n, k, ho, wo] {
        return Err(NnError::DimMismatch {
            axis: 0,
            left: dy.numel(),
            right: n * k * ho * wo,
            context: "conv2d backward: upstream gradient shape".into(),
        });
    }

    let patch = c * kk * kk;
    let cols = ho * wo;
    let per_in = c * h * win;

    let partials: Vec<(Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|img| {
            let col = im2col_image(x, img, kk, stride, pad, ho, wo);
            let dy_img = &dy.data()[img * k * cols..(img + 1) * k * cols];

            // dw_img[ko][p] = sum_q dy[ko][q] * col[p][q]
            let mut dw_img = vec![T::zero(); k * patch];
            for ko in 0..k {
                let dyrow = &dy_img[ko * cols..(ko + 1) * cols];
                let dwrow = &mut dw_img[ko * patch..(ko + 1) * patch];
                for p in 0..patch {
                    let crow = &col[p * cols..(p + 1) * cols];
                    let mut acc = T::zero();
                    for (dv, cv) in dyrow.iter().zip(crow.iter()) {
                        acc += *dv * *cv;
                    }
                    dwrow[p] = acc;
                }
            }

            // dcol[p][q] = sum_ko w[ko][p] * dy[ko][q]
            let mut dcol = vec![T::zero(); patch * cols];
            for ko in 0..k {
                let wrow = &w.data()[ko * patch..(ko + 1) * patch];
                let dyrow = &dy_img[ko * cols..(ko + 1) * cols];
                for (p, &wkp) in wrow.iter().enumerate() {
                    if wkp == T::zero() {
                        continue;
                    }
                    let drow = &mut dcol[p * cols..(p + 1) * cols];
                    for (d, &dv) in drow.iter_mut().zip(dyrow.iter()) {
                        *d += wkp * dv;
                    }
                }
            }
            let mut dx_img = vec![T::zero(); per_in];
            col2im_image(&dcol, c, h, win, kk, stride, pad, ho, wo, &mut dx_img);
            (dx_img, dw_img)
        })
        .collect();

    let mut dx = vec![T::zero(); n * per_in];
    let mut dw = vec![T::zero(); k * patch];
    for (img, (dx_img, dw_img)) in partials.into_iter().enumerate() {
        dx[img * per_in..(img + 1) * per_in].copy_from_slice(&dx_img);
        for (acc, v) in dw.iter_mut().zip(dw_img.iter()) {
            *acc += *v;
        }
    }
    Ok((
        Tensor::from_parts(vec![n, c, h, win], dx),
        Tensor::from_parts(vec![k, c, kk, kk], dw),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_counts_neighbourhood() {
        // 3x3 input of ones, 3x3 kernel of ones, stride 1, pad 1: the centre
        // sees all nine taps, the corners only four.
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0f32);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0f32);
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let y = conv2d_forward(&x, &w, 1, 1, algo).unwrap();
            assert_eq!(y.shape(), &[1, 1, 3, 3]);
            assert_eq!(y.at4(0, 0, 1, 1), 9.0);
            assert_eq!(y.at4(0, 0, 0, 0), 4.0);
            assert_eq!(y.at4(0, 0, 2, 2), 4.0);
            assert_eq!(y.at4(0, 0, 0, 1), 6.0);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 5, 5], |i| i as f32 * 0.3 - 2.0);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // centre tap
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let y = conv2d_forward(&x, &w, 1, 1, algo).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn stride_two_output_shape() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 8, 8], |i| ((i * 37) % 11) as f32 - 5.0);
        let w = Tensor::<f32>::from_fn(&[4, 3, 3, 3], |i| ((i * 13) % 7) as f32 * 0.5 - 1.5);
        let y = conv2d_forward(&x, &w, 2, 1, ConvAlgo::Im2col).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        match conv2d_forward(&x, &w, 1, 1, ConvAlgo::Direct).unwrap_err() {
            NnError::DimMismatch { axis, left, right, .. } => {
                assert_eq!((axis, left, right), (1, 3, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn stride_three_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &w, 3, 1, ConvAlgo::Direct),
            Err(NnError::BadStride { stride: 3 })
        ));
    }
}
