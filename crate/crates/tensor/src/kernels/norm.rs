use crate::{Scalar, Tensor};

/// Per-channel statistics of one training-mode normalization pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance (divides by the element count), as used for normalizing.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Element count per channel (`n * h * w`).
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    /// Unbiased variance, the quantity tracked by running estimates.
    pub fn unbiased_var(&self) -> Vec<T> {
        let m = T::from_usize_lossy(self.count);
        let corr = if self.count > 1 { m / (m - T::one()) } else { T::one() };
        self.var.iter().map(|&v| v * corr).collect()
    }
}

fn channel_iter<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize) {
    let (n, c, h, w) = x.dims4();
    (n, c, h * w)
}

/// Normalize with batch statistics: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, BatchStats<T>) {
    let (n, c, hw) = channel_iter(x);
    let count = n * hw;
    let m = T::from_usize_lossy(count);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in mean.iter_mut().enumerate() {
            let s = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            *acc += s.iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for b in 0..n {
        for ch in 0..c {
            let s = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let mu = mean[ch];
            var[ch] += s.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut y = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for (o, &v) in y.data_mut()[off..off + hw].iter_mut().zip(&x.data()[off..off + hw]) {
                *o = (v - mu) * is * g + bt;
            }
        }
    }
    (
        y,
        BatchStats {
            mean,
            var,
            inv_std,
            count,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)` for [`batch_norm_train`].
pub fn batch_norm_train_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &BatchStats<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, hw) = channel_iter(x);
    let m = T::from_usize_lossy(stats.count);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (mu, is) = (stats.mean[ch], stats.inv_std[ch]);
            for (&g, &v) in dy.data()[off..off + hw].iter().zip(&x.data()[off..off + hw]) {
                dbeta[ch] += g;
                dgamma[ch] += g * (v - mu) * is;
            }
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (mu, is, g) = (stats.mean[ch], stats.inv_std[ch], gamma.data()[ch]);
            let k = g * is / m;
            for ((o, &d), &v) in dx.data_mut()[off..off + hw]
                .iter_mut()
                .zip(&dy.data()[off..off + hw])
                .zip(&x.data()[off..off + hw])
            {
                let xhat = (v - mu) * is;
                *o = k * (m * d - dbeta[ch] - xhat * dgamma[ch]);
            }
        }
    }
    (dx, Tensor::from_vec(&[c], dgamma), Tensor::from_vec(&[c], dbeta))
}

/// Normalize with fixed running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let (n, c, hw) = channel_iter(x);
    let mut y = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let scale = gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt();
            let shift = beta.data()[ch] - running_mean.data()[ch] * scale;
            for (o, &v) in y.data_mut()[off..off + hw].iter_mut().zip(&x.data()[off..off + hw]) {
                *o = v * scale + shift;
            }
        }
    }
    y
}
