use super::{NnError, Real, Tensor};

/// Fully connected layer: `y = x W^T + b` with `x: [N, F_in]`,
/// `w: [F_out, F_in]`, `b: [F_out]`.
pub fn dense_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if x.shape().len() != 2 {
        return Err(NnError::RankMismatch {
            expected: 2,
            shape: x.shape().to_vec(),
            context: "dense input".into(),
        });
    }
    let (n, fin) = (x.dim(0), x.dim(1));
    let (fout, wfin) = (w.dim(0), w.dim(1));
    if fin != wfin {
        return Err(NnError::DimMismatch {
            axis: 1,
            left: fin,
            right: wfin,
            context: "dense: input features vs weight columns".into(),
        });
    }
    if b.numel() != fout {
        return Err(NnError::DimMismatch {
            axis: 0,
            left: b.numel(),
            right: fout,
            context: "dense: bias length vs output features".into(),
        });
    }
    let mut out = vec![T::zero(); n * fout];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    for ni in 0..n {
        let xrow = &xd[ni * fin..(ni + 1) * fin];
        let orow = &mut out[ni * fout..(ni + 1) * fout];
        for fo in 0..fout {
            let wrow = &wd[fo * fin..(fo + 1) * fin];
            let mut acc = bd[fo];
            for (xv, wv) in xrow.iter().zip(wrow.iter()) {
                acc += *xv * *wv;
            }
            orow[fo] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![n, fout], out))
}

/// Backward of [`dense_forward`]. Returns `(dx, dw, db)`.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin) = (x.dim(0), x.dim(1));
    let fout = w.dim(0);
    debug_assert_eq!(dy.shape(), &[n, fout]);

    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); n * fin];
    let mut dw = vec![T::zero(); fout * fin];
    let mut db = vec![T::zero(); fout];

    for ni in 0..n {
        let xrow = &xd[ni * fin..(ni + 1) * fin];
        let dyrow = &dyd[ni * fout..(ni + 1) * fout];
        let dxrow = &mut dx[ni * fin..(ni + 1) * fin];
        for fo in 0..fout {
            let g = dyrow[fo];
            if g == T::zero() {
                continue;
            }
            db[fo] += g;
            let wrow = &wd[fo * fin..(fo + 1) * fin];
            let dwrow = &mut dw[fo * fin..(fo + 1) * fin];
            for i in 0..fin {
                dxrow[i] += g * wrow[i];
                dwrow[i] += g * xrow[i];
            }
        }
    }
    (
        Tensor::from_parts(vec![n, fin], dx),
        Tensor::from_parts(vec![fout, fin], dw),
        Tensor::from_parts(vec![fout], db),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_hand_computation() {
        let x = Tensor::from_parts(vec![1, 2], vec![1.0f32, 2.0]);
        let w = Tensor::from_parts(vec![2, 2], vec![1.0f32, 0.0, 0.5, -1.0]);
        let b = Tensor::from_parts(vec![2], vec![0.1f32, 0.2]);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.1, -1.3]);
    }

    #[test]
    fn bias_gradient_sums_over_batch() {
        let x = Tensor::filled(&[3, 2], 1.0f32);
        let w = Tensor::filled(&[1, 2], 1.0f32);
        let dy = Tensor::filled(&[3, 1], 1.0f32);
        let (_, _, db) = dense_backward(&x, &w, &dy);
        assert_eq!(db.data(), &[3.0]);
    }
}
