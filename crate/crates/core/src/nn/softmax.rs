use super::{NnError, Real, Tensor};

/// Loss and gradient of mean softmax cross-entropy over a batch.
#[derive(Clone, Debug)]
pub struct XentResult<T> {
    pub loss: T,
    /// d(loss)/d(logits) = (softmax - onehot) / N, shape `[N, C]`.
    pub dlogits: Tensor<T>,
    /// Argmax class per sample.
    pub predictions: Vec<usize>,
}

/// Mean cross-entropy of `logits: [N, C]` against integer labels, computed
/// with max-subtraction so large logits stay finite.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<XentResult<T>, NnError> {
    if logits.shape().len() != 2 {
        return Err(NnError::RankMismatch {
            expected: 2,
            shape: logits.shape().to_vec(),
            context: "softmax cross-entropy logits".into(),
        });
    }
    let (n, c) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(NnError::DimMismatch {
            axis: 0,
            left: labels.len(),
            right: n,
            context: "softmax cross-entropy: labels vs batch".into(),
        });
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(NnError::LabelOutOfRange {
                label: l,
                classes: c,
                sample: i,
            });
        }
    }

    let ld = logits.data();
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut dlogits = vec![T::zero(); n * c];
    let mut predictions = Vec::with_capacity(n);
    let mut loss = T::zero();

    for ni in 0..n {
        let row = &ld[ni * c..(ni + 1) * c];
        let mut max = row[0];
        let mut argmax = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > max {
                max = v;
                argmax = j;
            }
        }
        predictions.push(argmax);

        let mut sum_exp = T::zero();
        let drow = &mut dlogits[ni * c..(ni + 1) * c];
        for (d, &v) in drow.iter_mut().zip(row.iter()) {
            let e = (v - max).exp();
            *d = e;
            sum_exp += e;
        }
        // loss_i = log(sum_exp) - (logit_y - max)
        loss += sum_exp.ln() - (row[labels[ni]] - max);
        let inv_sum = T::one() / sum_exp;
        for d in drow.iter_mut() {
            *d = *d * inv_sum * inv_n;
        }
        drow[labels[ni]] -= inv_n;
    }

    Ok(XentResult {
        loss: loss * inv_n,
        dlogits: Tensor::from_parts(vec![n, c], dlogits),
        predictions,
    })
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::<f64>::zeros(&[3, 10]);
        let r = softmax_xent(&logits, &[0, 5, 9]).unwrap();
        assert!((r.loss - (10.0f64).ln()).abs() < 1e-12);
        // gradient rows sum to zero
        for ni in 0..3 {
            let s: f64 = r.dlogits.data()[ni * 10..(ni + 1) * 10].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = Tensor::from_parts(vec![1, 3], vec![1e4f32, 0.0, -1e4]);
        let r = softmax_xent(&logits, &[1]).unwrap();
        assert!(r.loss.is_finite());
        assert!(r.dlogits.all_finite());
        // picking the big logit as the label gives ~zero loss
        let r2 = softmax_xent(&logits, &[0]).unwrap();
        assert!(r2.loss.is_finite());
        assert!(r2.loss >= 0.0);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 4]);
        assert!(matches!(
            softmax_xent(&logits, &[0, 4]),
            Err(NnError::LabelOutOfRange { label: 4, classes: 4, sample: 1 })
        ));
    }
}
