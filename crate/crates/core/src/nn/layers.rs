//! Stateless layer kernels with their backward passes.

use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::{gemm_acc, transpose_into, Scalar, SeededRng, Tensor};

/// Forward-pass mode. Training carries the rng that drives dropout.
pub enum Mode<'a> {
    Train(&'a mut SeededRng),
    Infer,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[inline]
pub(crate) fn leaky<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

/// Derivative of leaky-ReLU expressed through its output `y`; `y` has the
/// sign of the input, and the derivative at zero is taken as 1.
#[inline]
pub(crate) fn leaky_grad_from_output<T: Scalar>(y: T, slope: T) -> T {
    if y >= T::zero() {
        T::one()
    } else {
        slope
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| leaky(v, slope))
}

pub fn leaky_relu_backward<T: Scalar>(
    x: &Tensor<T>,
    grad: &Tensor<T>,
    slope: T,
) -> Result<Tensor<T>> {
    if x.shape() != grad.shape() {
        return shape_err("leaky_relu backward: shape mismatch");
    }
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| g * leaky_grad_from_output(v, slope))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Learnable scale/shift plus the running statistics used at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BnParams<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            scale: Tensor::create(&[channels], crate::tensor::Init::Constant(1.0))?,
            shift: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::create(&[channels], crate::tensor::Init::Constant(1.0))?,
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Exponential moving average toward the batch statistics in `cache`:
    /// `running = momentum·running + (1−momentum)·batch`. The variance uses
    /// the unbiased batch estimate.
    pub fn update_running(&mut self, cache: &BnCache<T>, momentum: f64) {
        let m = T::of(momentum);
        let one_m = T::one() - m;
        let n = cache.count as f64;
        let unbias = if n > 1.0 {
            T::of(n / (n - 1.0))
        } else {
            T::one()
        };
        for c in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = m * *rm + one_m * cache.mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = m * *rv + one_m * cache.var[c] * unbias;
        }
    }
}

/// Per-channel statistics and normalised activations kept for backward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub x_hat: Vec<T>,
    /// Elements per channel (batch × spatial).
    pub count: usize,
}

fn bn_dims<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let shape = x.shape();
    if shape.len() < 2 || shape[1] != channels {
        return shape_err(format!(
            "batch norm over {channels} channels got input {shape:?}"
        ));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Normalises `[B, C, S]` data per channel with batch statistics.
pub(crate) fn bn_train_slice<T: Scalar>(
    x: &[T],
    b: usize,
    c: usize,
    s: usize,
    scale: &[T],
    shift: &[T],
    eps: T,
    out: &mut [T],
) -> BnCache<T> {
    let count = b * s;
    let n = T::of(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for bi in 0..b {
            let base = (bi * c + ch) * s;
            for &v in &x[base..base + s] {
                acc = acc + v;
            }
        }
        mean[ch] = acc / n;
        let mut acc = T::zero();
        for bi in 0..b {
            let base = (bi * c + ch) * s;
            for &v in &x[base..base + s] {
                let d = v - mean[ch];
                acc = acc + d * d;
            }
        }
        var[ch] = acc / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * s;
            for i in base..base + s {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = h;
                out[i] = h * scale[ch] + shift[ch];
            }
        }
    }
    BnCache {
        mean,
        var,
        inv_std,
        x_hat,
        count,
    }
}

pub(crate) fn bn_infer_slice<T: Scalar>(
    x: &[T],
    b: usize,
    c: usize,
    s: usize,
    p: &BnParams<T>,
    eps: T,
    out: &mut [T],
) {
    for ch in 0..c {
        let inv = T::one() / (p.running_var.data()[ch] + eps).sqrt();
        let mu = p.running_mean.data()[ch];
        let (g, sh) = (p.scale.data()[ch], p.shift.data()[ch]);
        for bi in 0..b {
            let base = (bi * c + ch) * s;
            for i in base..base + s {
                out[i] = (x[i] - mu) * inv * g + sh;
            }
        }
    }
}

/// Returns input gradient; accumulates scale and shift gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward_slice<T: Scalar>(
    grad: &[T],
    b: usize,
    c: usize,
    s: usize,
    scale: &[T],
    cache: &BnCache<T>,
    grad_scale: &mut [T],
    grad_shift: &mut [T],
) -> Vec<T> {
    let n = T::of(cache.count as f64);
    let mut dx = vec![T::zero(); grad.len()];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for bi in 0..b {
            let base = (bi * c + ch) * s;
            for i in base..base + s {
                sum_dy = sum_dy + grad[i];
                sum_dy_xhat = sum_dy_xhat + grad[i] * cache.x_hat[i];
            }
        }
        grad_shift[ch] = grad_shift[ch] + sum_dy;
        grad_scale[ch] = grad_scale[ch] + sum_dy_xhat;
        let k = scale[ch] * cache.inv_std[ch] / n;
        for bi in 0..b {
            let base = (bi * c + ch) * s;
            for i in base..base + s {
                dx[i] = k * (n * grad[i] - sum_dy - cache.x_hat[i] * sum_dy_xhat);
            }
        }
    }
    dx
}

/// Batch normalisation of a `[B, C, ...]` tensor. Training mode uses batch
/// statistics and returns the cache; apply [`BnParams::update_running`] with
/// it to advance the running statistics. Inference mode uses the running
/// statistics only.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    params: &BnParams<T>,
    eps: f64,
    train: bool,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    let c = params.channels();
    let (b, s) = bn_dims(x, c)?;
    let mut out = vec![T::zero(); x.len()];
    if train {
        if b < 2 {
            return config_err("batch norm in training mode needs a batch of at least 2");
        }
        let cache = bn_train_slice(
            x.data(),
            b,
            c,
            s,
            params.scale.data(),
            params.shift.data(),
            T::of(eps),
            &mut out,
        );
        Ok((Tensor::from_vec(x.shape(), out)?, Some(cache)))
    } else {
        bn_infer_slice(x.data(), b, c, s, params, T::of(eps), &mut out);
        Ok((Tensor::from_vec(x.shape(), out)?, None))
    }
}

/// Returns `(grad_input, grad_scale, grad_shift)`.
pub fn batch_norm_backward<T: Scalar>(
    grad: &Tensor<T>,
    params: &BnParams<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = params.channels();
    let (b, s) = bn_dims(grad, c)?;
    let mut gs = Tensor::zeros(&[c])?;
    let mut gb = Tensor::zeros(&[c])?;
    let dx = bn_backward_slice(
        grad.data(),
        b,
        c,
        s,
        params.scale.data(),
        cache,
        gs.data_mut(),
        gb.data_mut(),
    );
    Ok((Tensor::from_vec(grad.shape(), dx)?, gs, gb))
}

/// Inverted dropout mask: each entry is 0 with probability `p`, else `1/(1−p)`.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut SeededRng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect()
}

/// Inverted dropout. Returns the output and, in training mode, the
/// multiplicative mask that backward must reuse.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: &mut Mode<'_>,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return config_err(format!("dropout rate {p} outside [0,1)"));
    }
    match mode {
        Mode::Infer => Ok((x.clone(), None)),
        Mode::Train(_) if p == 0.0 => Ok((x.clone(), Some(vec![T::one(); x.len()]))),
        Mode::Train(rng) => {
            let mask = dropout_mask(x.len(), p, rng);
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Ok((Tensor::from_vec(x.shape(), data)?, Some(mask)))
        }
    }
}

/// Affine map `x·W + b` for `x: [B,F]`, `W: [F,U]`, `b: [U]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [bsz, f] = x.dims2()?;
    let [f2, u] = weight.dims2()?;
    if f != f2 || bias.shape() != [u] {
        return shape_err(format!(
            "dense: x {:?}, W {:?}, b {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        ));
    }
    let mut out = vec![T::zero(); bsz * u];
    dense_forward_slice(x.data(), bsz, f, weight.data(), bias.data(), u, &mut out);
    Tensor::from_vec(&[bsz, u], out)
}

pub(crate) fn dense_forward_slice<T: Scalar>(
    x: &[T],
    b: usize,
    f: usize,
    w: &[T],
    bias: &[T],
    u: usize,
    out: &mut [T],
) {
    for row in out.chunks_mut(u) {
        row.copy_from_slice(bias);
    }
    gemm_acc(x, w, out, b, f, u);
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy`; returns `dx = dy·Wᵀ` when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward_slice<T: Scalar>(
    x: &[T],
    b: usize,
    f: usize,
    w: &[T],
    u: usize,
    grad_y: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let mut x_t = vec![T::zero(); f * b];
    transpose_into(x, b, f, &mut x_t);
    gemm_acc(&x_t, grad_y, grad_w, f, b, u);
    for row in grad_y.chunks(u) {
        for (g, &d) in grad_b.iter_mut().zip(row) {
            *g = *g + d;
        }
    }
    want_dx.then(|| {
        let mut w_t = vec![T::zero(); u * f];
        transpose_into(w, f, u, &mut w_t);
        let mut dx = vec![T::zero(); b * f];
        gemm_acc(grad_y, &w_t, &mut dx, b, u, f);
        dx
    })
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, f] = x.dims2()?;
    let [f2, u] = weight.dims2()?;
    if f != f2 || grad_y.shape() != [b, u] {
        return shape_err("dense backward: shape mismatch");
    }
    let mut gw = Tensor::zeros_like(weight);
    let mut gb = Tensor::zeros(&[u])?;
    let dx = dense_backward_slice(
        x.data(),
        b,
        f,
        weight.data(),
        u,
        grad_y.data(),
        gw.data_mut(),
        gb.data_mut(),
        true,
    )
    .expect("requested");
    Ok((Tensor::from_vec(&[b, f], dx)?, gw, gb))
}

pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, o) in logits.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (oi, &l) in o.iter_mut().zip(row) {
            *oi = (l - max).exp();
            z = z + *oi;
        }
        for oi in o.iter_mut() {
            *oi = *oi / z;
        }
    }
    out
}

/// Row-wise softmax of `[B, K]` logits, stabilised by max subtraction.
pub fn softmax_head<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2()?;
    if k < 2 {
        return shape_err("softmax head needs at least 2 classes");
    }
    Tensor::from_vec(logits.shape(), softmax_rows(logits.data(), k))
}

fn check_labels(labels: &[usize], b: usize, k: usize) -> Result<()> {
    if labels.len() != b {
        return shape_err(format!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label(format!(
            "label {l} at batch position {i} outside [0,{k})"
        )));
    }
    Ok(())
}

/// Mean over the batch of `−ln p(true class)`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let [b, k] = probs.dims2()?;
    check_labels(labels, b, k)?;
    let tiny = T::min_positive_value();
    let total = labels.iter().enumerate().fold(T::zero(), |acc, (i, &l)| {
        acc - probs.data()[i * k + l].max(tiny).ln()
    });
    Ok(total / T::of(b as f64))
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `(probs − onehot) / B`.
pub fn cross_entropy_grad<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let [b, k] = probs.dims2()?;
    check_labels(labels, b, k)?;
    let inv_b = T::one() / T::of(b as f64);
    let mut g = probs.data().to_vec();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] = g[i * k + l] - T::one();
    }
    for v in &mut g {
        *v = *v * inv_b;
    }
    Tensor::from_vec(probs.shape(), g)
}

/// `λ·l_user + (1−λ)·l_posture`.
pub fn combined_loss(l_user: f64, l_posture: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * l_user + (1.0 - lambda) * l_posture)
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return config_err(format!("lambda {lambda} outside [0,1]"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Init;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn leaky_values() {
        let x = t(&[3], vec![1.0, -1.0, 0.0]);
        assert_eq!(leaky_relu(&x, 0.2).data(), &[1.0, -0.2, 0.0]);
        let g = leaky_relu_backward(&x, &t(&[3], vec![1.0; 3]), 0.2).unwrap();
        assert_eq!(g.data(), &[1.0, 0.2, 1.0]);
    }

    #[test]
    fn batch_norm_zero_variance_channel_yields_shift() {
        let mut p = BnParams::<f64>::new(2).unwrap();
        p.shift.data_mut().copy_from_slice(&[0.7, -0.3]);
        p.scale.data_mut().copy_from_slice(&[2.0, 3.0]);
        // channel 0 constant, channel 1 varying
        let x = t(&[2, 2, 2], vec![5.0, 5.0, 1.0, 2.0, 5.0, 5.0, 3.0, 4.0]);
        let (y, _) = batch_norm(&x, &p, 1e-5, true).unwrap();
        for bi in 0..2 {
            for s in 0..2 {
                assert_eq!(y.at(&[bi, 0, s]), 0.7);
            }
        }
    }

    #[test]
    fn batch_norm_standardises() {
        let mut rng = SeededRng::new(4);
        let x = Tensor::<f64>::create(
            &[6, 3, 5],
            Init::Gaussian {
                mean: 2.0,
                std: 3.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let p = BnParams::new(3).unwrap();
        let (_, cache) = batch_norm(&x, &p, 1e-5, true).unwrap();
        let cache = cache.unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..6)
                .flat_map(|b| (0..5).map(move |s| (b, s)))
                .map(|(b, s)| cache.x_hat[(b * 3 + ch) * 5 + s])
                .collect();
            let m = vals.iter().sum::<f64>() / 30.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 30.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_infer_matches_hand_computation() {
        let mut p = BnParams::<f64>::new(1).unwrap();
        p.running_mean.data_mut()[0] = 0.5;
        p.running_var.data_mut()[0] = 4.0;
        p.scale.data_mut()[0] = 1.5;
        p.shift.data_mut()[0] = -1.0;
        let x = t(&[1, 1, 2], vec![2.5, -1.5]);
        let (y, cache) = batch_norm(&x, &p, 1e-5, false).unwrap();
        assert!(cache.is_none());
        let expect = |v: f64| (v - 0.5) / (4.0f64 + 1e-5).sqrt() * 1.5 - 1.0;
        assert_eq!(y.data(), &[expect(2.5), expect(-1.5)]);
    }

    #[test]
    fn batch_norm_rejects_singleton_batch() {
        let p = BnParams::<f32>::new(1).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 4]).unwrap();
        assert!(matches!(
            batch_norm(&x, &p, 1e-5, true),
            Err(Error::Config(_))
        ));
        assert!(batch_norm(&x, &p, 1e-5, false).is_ok());
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut rng = SeededRng::new(8);
        let x = Tensor::<f64>::create(
            &[4, 2, 3],
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let w = Tensor::<f64>::create(
            &[4, 2, 3],
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let mut p = BnParams::new(2).unwrap();
        p.scale.data_mut().copy_from_slice(&[1.3, 0.6]);
        p.shift.data_mut().copy_from_slice(&[0.1, -0.2]);
        let loss = |x: &Tensor<f64>, p: &BnParams<f64>| -> f64 {
            let (y, _) = batch_norm(x, p, 1e-5, true).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = batch_norm(&x, &p, 1e-5, true).unwrap();
        let (dx, ds, db) = batch_norm_backward(&w, &p, &cache.unwrap()).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let num = (loss(&xp, &p) - loss(&xm, &p)) / (2.0 * h);
            assert!(
                (num - dx.data()[i]).abs() < 1e-6,
                "{num} vs {}",
                dx.data()[i]
            );
        }
        for c in 0..2 {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.scale.data_mut()[c] += h;
            pm.scale.data_mut()[c] -= h;
            let num = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
            assert!((num - ds.data()[c]).abs() < 1e-6);
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.shift.data_mut()[c] += h;
            pm.shift.data_mut()[c] -= h;
            let num = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
            assert!((num - db.data()[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_modes() {
        let x = Tensor::<f64>::create(&[10], Init::Constant(3.0)).unwrap();
        let mut rng = SeededRng::new(1);
        let (y, _) = dropout(&x, 0.0, &mut Mode::Train(&mut rng)).unwrap();
        assert_eq!(y, x);
        let (y, mask) = dropout(&x, 0.7, &mut Mode::Infer).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        assert!(matches!(
            dropout(&x, 1.0, &mut Mode::Train(&mut rng)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_monte_carlo() {
        let n = 10_000;
        let mut rng = SeededRng::new(2024);
        let x = Tensor::<f64>::create(
            &[n],
            Init::Gaussian {
                mean: 1.0,
                std: 0.5,
                rng: &mut SeededRng::new(7),
            },
        )
        .unwrap();
        let (y, mask) = dropout(&x, 0.5, &mut Mode::Train(&mut rng)).unwrap();
        let survivors = mask.unwrap().iter().filter(|&&m| m > 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "survivor fraction {frac}");
        let mean_in = x.data().iter().sum::<f64>() / n as f64;
        let mean_out = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean_in - mean_out).abs() < 0.05, "{mean_in} vs {mean_out}");
    }

    #[test]
    fn dense_cases() {
        let x = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let id = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let zero_b = t(&[2], vec![0.0, 0.0]);
        assert_eq!(dense(&x, &id, &zero_b).unwrap(), x);

        let zw = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = t(&[3], vec![0.5, -1.0, 2.0]);
        let y = dense(&x, &zw, &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);

        let mut rng = SeededRng::new(12);
        let mut g = |s: &[usize]| {
            Tensor::<f64>::create(
                s,
                Init::Gaussian {
                    mean: 0.0,
                    std: 1.0,
                    rng: &mut rng,
                },
            )
            .unwrap()
        };
        let (x, w, b) = (g(&[3, 4]), g(&[4, 5]), g(&[5]));
        let y = dense(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = b.data()[j];
                for k in 0..4 {
                    s += x.at(&[i, k]) * w.at(&[k, j]);
                }
                assert!((y.at(&[i, j]) - s).abs() < 1e-12);
            }
        }
        assert!(dense(&x, &w, &t(&[4], vec![0.0; 4])).is_err());
    }

    #[test]
    fn softmax_properties() {
        let uniform = Tensor::<f64>::zeros(&[1, 17]).unwrap();
        let p = softmax_head(&uniform).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 17.0).abs() < 1e-15));

        let l = t(&[2, 3], vec![0.1, -2.0, 3.0, 1.0, 1.5, -0.5]);
        let shifted = l.map(|v| v + 123.0);
        let (a, b) = (softmax_head(&l).unwrap(), softmax_head(&shifted).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let big = t(&[1, 2], vec![1000.0, 0.0]);
        let p = softmax_head(&big).unwrap();
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] < 1e-300);
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = softmax_head(&Tensor::<f64>::zeros(&[3, 17]).unwrap()).unwrap();
        let l = cross_entropy(&uniform, &[0, 5, 16]).unwrap();
        assert!((l - 17f64.ln()).abs() < 1e-12);
        assert!((l - 2.8332).abs() < 1e-4);

        let sure = t(&[1, 2], vec![1.0 - 1e-15, 1e-15]);
        assert!(cross_entropy(&sure, &[0]).unwrap() < 1e-14);

        assert!(matches!(
            cross_entropy(&uniform, &[0, 1, 17]),
            Err(Error::Label(_))
        ));

        let mut rng = SeededRng::new(31);
        let logits = Tensor::<f64>::create(
            &[5, 4],
            Init::Gaussian {
                mean: 0.0,
                std: 2.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let probs = softmax_head(&logits).unwrap();
        let labels = [3, 0, 2, 2, 1];
        let hand: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| -probs.at(&[i, c]).ln())
            .sum::<f64>()
            / 5.0;
        assert!((cross_entropy(&probs, &labels).unwrap() - hand).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = SeededRng::new(77);
        let logits = Tensor::<f64>::create(
            &[3, 4],
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        let labels = [1, 3, 0];
        let f = |l: &Tensor<f64>| cross_entropy(&softmax_head(l).unwrap(), &labels).unwrap();
        let g = cross_entropy_grad(&softmax_head(&logits).unwrap(), &labels).unwrap();
        for i in 0..logits.len() {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[i] += 1e-6;
            m.data_mut()[i] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn combined_loss_algebra() {
        assert_eq!(combined_loss(2.0, 4.0, 0.0).unwrap(), 4.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0).unwrap(), 2.0);
        assert_eq!(combined_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!(matches!(
            combined_loss(1.0, 1.0, 1.5),
            Err(Error::Config(_))
        ));
        assert!(combined_loss(1.0, 1.0, -0.1).is_err());
    }
}
