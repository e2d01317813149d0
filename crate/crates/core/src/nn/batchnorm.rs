use super::graph::Mode;
use super::{NnError, Real, Tensor};

/// Per-channel statistics produced by a train-mode forward pass: the batch
/// statistics themselves plus the updated running values.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub new_running_mean: Vec<T>,
    pub new_running_var: Vec<T>,
}

/// Saved forward state needed by the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub mode: Mode,
    /// Normalized input, same shape as x.
    pub xhat: Tensor<T>,
    /// Per-channel 1/sqrt(var + eps) actually used to normalize.
    pub inv_std: Vec<T>,
}

/// Batch normalization over `[N, C, H, W]`, normalizing per channel.
///
/// Train mode uses batch statistics (biased variance) and reports running
/// stats updated as `r <- (1 - momentum) * r + momentum * batch`; eval mode
/// normalizes with the provided running stats and reports no update.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<(Tensor<T>, BnCache<T>, Option<BnStats<T>>), NnError> {
    if x.shape().len() != 4 {
        return Err(NnError::RankMismatch {
            expected: 4,
            shape: x.shape().to_vec(),
            context: "batchnorm input".into(),
        });
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    for (param, name) in [
        (gamma, "gamma"),
        (beta, "beta"),
        (running_mean, "running_mean"),
        (running_var, "running_var"),
    ] {
        if param.numel() != c {
            return Err(NnError::DimMismatch {
                axis: 1,
                left: param.numel(),
                right: c,
                context: format!("batchnorm: {name} length vs channel count"),
            });
        }
    }
    if mode == Mode::Train && n < 2 {
        return Err(NnError::BatchTooSmall { batch: n });
    }

    let m = n * h * w;
    let eps = T::from_f64(eps);
    let plane = h * w;
    let xd = x.data();

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            let inv_m = T::one() / T::from_f64(m as f64);
            for ci in 0..c {
                let mut sum = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for &v in &xd[base..base + plane] {
                        sum += v;
                    }
                }
                let mu = sum * inv_m;
                let mut sq = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for &v in &xd[base..base + plane] {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = sq * inv_m;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(running_mean.data());
            var.copy_from_slice(running_var.data());
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let (gd, bd) = (gamma.data(), beta.data());
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (mu, istd, g, b) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
            for off in base..base + plane {
                let xh = (xd[off] - mu) * istd;
                xhat[off] = xh;
                out[off] = g * xh + b;
            }
        }
    }

    let stats = match mode {
        Mode::Train => {
            let mom = T::from_f64(momentum);
            let keep = T::one() - mom;
            Some(BnStats {
                new_running_mean: running_mean
                    .data()
                    .iter()
                    .zip(mean.iter())
                    .map(|(&r, &b)| keep * r + mom * b)
                    .collect(),
                new_running_var: running_var
                    .data()
                    .iter()
                    .zip(var.iter())
                    .map(|(&r, &b)| keep * r + mom * b)
                    .collect(),
            })
        }
        Mode::Eval => None,
    };

    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        BnCache {
            mode,
            xhat: Tensor::from_parts(x.shape().to_vec(), xhat),
            inv_std,
        },
        stats,
    ))
}

/// Backward of [`batchnorm_forward`]. Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let plane = h * w;
    let m = T::from_f64((n * plane) as f64);
    let dyd = dy.data();
    let xh = cache.xhat.data();

    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        let mut dg = T::zero();
        let mut db = T::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for off in base..base + plane {
                dg += dyd[off] * xh[off];
                db += dyd[off];
            }
        }
        dgamma[ci] = dg;
        dbeta[ci] = db;
    }

    let mut dx = vec![T::zero(); dy.numel()];
    match cache.mode {
        Mode::Train => {
            // dx = gamma*inv_std/m * (m*dy - dbeta - xhat*dgamma)
            for ci in 0..c {
                let scale = gamma.data()[ci] * cache.inv_std[ci] / m;
                let (dg, db) = (dgamma[ci], dbeta[ci]);
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for off in base..base + plane {
                        dx[off] = scale * (m * dyd[off] - db - xh[off] * dg);
                    }
                }
            }
        }
        Mode::Eval => {
            // Running stats are constants: dx = dy * gamma * inv_std.
            for ci in 0..c {
                let scale = gamma.data()[ci] * cache.inv_std[ci];
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for off in base..base + plane {
                        dx[off] = dyd[off] * scale;
                    }
                }
            }
        }
    }

    (
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn_args(c: usize) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>, Tensor<f32>) {
        (
            Tensor::filled(&[c], 1.0),
            Tensor::zeros(&[c]),
            Tensor::zeros(&[c]),
            Tensor::filled(&[c], 1.0),
        )
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::filled(&[4, 3, 2, 2], 5.0f32);
        let (g, b, rm, rv) = bn_args(3);
        let (y, _, _) =
            batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Train, 1e-5, 0.1).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::<f32>::from_fn(&[4, 2, 3, 3], |i| i as f32 * 0.1);
        let g = Tensor::zeros(&[2]);
        let b = Tensor::filled(&[2], 3.5f32);
        let rm = Tensor::zeros(&[2]);
        let rv = Tensor::filled(&[2], 1.0f32);
        let (y, _, _) =
            batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Train, 1e-5, 0.1).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn train_output_statistics_are_standardized() {
        // Recompute mean/variance of the output independently.
        let mut rng = crate::nn::SplitRng::new(11);
        let x: Tensor<f32> = rng.normal_tensor(&[8, 3, 5, 5], 2.0);
        let (g, b, rm, rv) = bn_args(3);
        let (y, _, _) =
            batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Train, 1e-5, 0.1).unwrap();
        let (n, c, h, w) = (8, 3, 5, 5);
        for ci in 0..c {
            let mut vals = Vec::new();
            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        vals.push(y.at4(ni, ci, hi, wi) as f64);
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4, "channel {ci} mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "channel {ci} var {v}");
        }
    }

    #[test]
    fn train_batch_of_one_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let (g, b, rm, rv) = bn_args(2);
        assert!(matches!(
            batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Train, 1e-5, 0.1),
            Err(NnError::BatchTooSmall { batch: 1 })
        ));
        // Eval mode with batch 1 is fine.
        assert!(batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Eval, 1e-5, 0.1).is_ok());
    }

    #[test]
    fn running_stats_blend_by_momentum() {
        let x = Tensor::filled(&[2, 1, 1, 1], 4.0f32);
        let g = Tensor::filled(&[1], 1.0f32);
        let b = Tensor::zeros(&[1]);
        let rm = Tensor::filled(&[1], 1.0f32);
        let rv = Tensor::filled(&[1], 1.0f32);
        let (_, _, stats) =
            batchnorm_forward(&x, &g, &b, &rm, &rv, Mode::Train, 1e-5, 0.1).unwrap();
        let stats = stats.unwrap();
        // batch mean 4, batch var 0
        assert!((stats.new_running_mean[0] - (0.9 * 1.0 + 0.1 * 4.0)).abs() < 1e-6);
        assert!((stats.new_running_var[0] - 0.9).abs() < 1e-6);
    }
}
