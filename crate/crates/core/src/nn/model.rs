//! The dual-head network: four conv blocks, two dense layers, and parallel
//! subject and posture softmax regressors sharing that backbone.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    conv_backward_slice, conv_forward_slice, maxpool_backward_slice, maxpool_forward_slice,
    ConvGeom, Init, Scalar, SeededRng, Tensor,
};

use super::config::{ModelConfig, KERNEL, POOL_WINDOW};
use super::layers::{
    bn_backward_slice, bn_infer_slice, bn_train_slice, check_lambda, cross_entropy,
    dense_backward_slice, dense_forward_slice, dropout_mask, leaky, leaky_grad_from_output,
    softmax_rows, BnCache, BnParams, Mode,
};

#[derive(Clone, Debug)]
pub struct DenseParams<T> {
    /// `[fan_in, units]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub(crate) fn init(fan_in: usize, units: usize, gain: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            weight: Tensor::create(
                &[fan_in, units],
                Init::Gaussian {
                    mean: 0.0,
                    std: gain / (fan_in as f64).sqrt(),
                    rng,
                },
            )?,
            bias: Tensor::zeros(&[units])?,
        })
    }

    fn units(&self) -> usize {
        self.bias.len()
    }

    fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// All trainable tensors plus batch-norm running statistics.
///
/// Conv layers carry no bias: each is followed by batch norm, whose shift
/// plays that role.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    config: ModelConfig,
    /// `[Cout, Cin, 3, 3]` per block.
    pub conv: Vec<Tensor<T>>,
    pub bn: Vec<BnParams<T>>,
    pub dense: Vec<DenseParams<T>>,
    pub subject_head: DenseParams<T>,
    pub posture_head: DenseParams<T>,
    version: u64,
}

/// Gradients in [`ModelParams::trainable`] order.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub user: f64,
    pub posture: f64,
    pub combined: f64,
    pub l2: f64,
    pub total: f64,
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled gaussian weights (gain matched to the leaky slope for
    /// layers followed by leaky-ReLU, unit gain for the heads), zero biases.
    pub fn init(config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let gain = (2.0 / (1.0 + config.leaky_slope.powi(2))).sqrt();
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        let mut cin = 1;
        for &cout in &config.conv_channels {
            let fan_in = cin * KERNEL * KERNEL;
            conv.push(Tensor::create(
                &[cout, cin, KERNEL, KERNEL],
                Init::Gaussian {
                    mean: 0.0,
                    std: gain / (fan_in as f64).sqrt(),
                    rng,
                },
            )?);
            bn.push(BnParams::new(cout)?);
            cin = cout;
        }
        let flat = config.flat_features()?;
        let w = config.dense_width;
        let dense = vec![
            DenseParams::init(flat, w, gain, rng)?,
            DenseParams::init(w, w, gain, rng)?,
        ];
        let subject_head = DenseParams::init(w, config.num_subjects, 1.0, rng)?;
        let posture_head = DenseParams::init(w, config.num_postures, 1.0, rng)?;
        Ok(Self {
            config: config.clone(),
            conv,
            bn,
            dense,
            subject_head,
            posture_head,
            version: 0,
        })
    }

    /// Assembles parameters from tensors in [`Self::trainable`] order followed
    /// by running mean/variance per batch-norm layer; shapes are checked
    /// against `config`.
    pub fn from_parts(
        config: &ModelConfig,
        trainable: Vec<Tensor<T>>,
        buffers: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let mut template = Self::init(config, &mut SeededRng::new(0))?;
        let slots = template.trainable_mut();
        if slots.len() != trainable.len() {
            return shape_err(format!(
                "expected {} trainable tensors, got {}",
                slots.len(),
                trainable.len()
            ));
        }
        for (slot, t) in slots.into_iter().zip(trainable) {
            if slot.shape() != t.shape() {
                return shape_err(format!(
                    "tensor {:?} where {:?} expected",
                    t.shape(),
                    slot.shape()
                ));
            }
            *slot = t;
        }
        if buffers.len() != 2 * template.bn.len() {
            return shape_err("running statistics count mismatch");
        }
        let mut it = buffers.into_iter();
        for bn in &mut template.bn {
            let (m, v) = (it.next().unwrap(), it.next().unwrap());
            if m.shape() != bn.running_mean.shape() || v.shape() != bn.running_var.shape() {
                return shape_err("running statistics shape mismatch");
            }
            bn.running_mean = m;
            bn.running_var = v;
        }
        template.version = 0;
        Ok(template)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Trainable tensors in a fixed order: per conv block (kernel, bn scale,
    /// bn shift), then per dense layer (weight, bias), then subject head,
    /// then posture head.
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for (k, bn) in self.conv.iter().zip(&self.bn) {
            out.extend([k, &bn.scale, &bn.shift]);
        }
        for d in self
            .dense
            .iter()
            .chain([&self.subject_head, &self.posture_head])
        {
            out.extend([&d.weight, &d.bias]);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.version += 1;
        let mut out = Vec::new();
        for (k, bn) in self.conv.iter_mut().zip(self.bn.iter_mut()) {
            out.push(k);
            out.push(&mut bn.scale);
            out.push(&mut bn.shift);
        }
        for d in self
            .dense
            .iter_mut()
            .chain([&mut self.subject_head, &mut self.posture_head])
        {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.conv.len() {
            out.push(format!("conv{}.kernel", i + 1));
            out.push(format!("bn{}.scale", i + 1));
            out.push(format!("bn{}.shift", i + 1));
        }
        for i in 0..self.dense.len() {
            out.push(format!("dense{}.weight", i + 1));
            out.push(format!("dense{}.bias", i + 1));
        }
        out.extend(
            [
                "subject_head.weight",
                "subject_head.bias",
                "posture_head.weight",
                "posture_head.bias",
            ]
            .map(String::from),
        );
        out
    }

    /// Which trainable tensors carry the L2 penalty: conv kernels and dense
    /// weights (heads included), never biases or batch-norm parameters.
    pub fn l2_mask(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for _ in &self.conv {
            out.extend([true, false, false]);
        }
        for _ in 0..self.dense.len() + 2 {
            out.extend([true, false]);
        }
        out
    }

    /// Running mean then running variance for each batch-norm layer.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.bn
            .iter()
            .flat_map(|b| [&b.running_mean, &b.running_var])
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.trainable()
            .iter()
            .chain(self.buffers().iter())
            .all(|t| t.is_finite())
            && self
                .bn
                .iter()
                .all(|b| b.running_var.data().iter().all(|&v| v > T::zero()))
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let momentum = self.config.bn_momentum;
        for (bn, block) in self.bn.iter_mut().zip(&cache.blocks) {
            bn.update_running(&block.bn, momentum);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let d = |p: &DenseParams<T>| DenseParams {
            weight: p.weight.cast(),
            bias: p.bias.cast(),
        };
        ModelParams {
            config: self.config.clone(),
            conv: self.conv.iter().map(|t| t.cast()).collect(),
            bn: self
                .bn
                .iter()
                .map(|b| BnParams {
                    scale: b.scale.cast(),
                    shift: b.shift.cast(),
                    running_mean: b.running_mean.cast(),
                    running_var: b.running_var.cast(),
                })
                .collect(),
            dense: self.dense.iter().map(d).collect(),
            subject_head: d(&self.subject_head),
            posture_head: d(&self.posture_head),
            version: 0,
        }
    }
}

/// `σ·Σw²` over the L2-penalised tensors.
pub fn l2_penalty<T: Scalar>(params: &ModelParams<T>, sigma: f64) -> f64 {
    params
        .trainable()
        .iter()
        .zip(params.l2_mask())
        .filter(|(_, m)| *m)
        .map(|(t, _)| {
            t.data()
                .iter()
                .map(|&w| w.to_f64().unwrap().powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        * sigma
}

#[derive(Clone, Debug)]
struct PoolCache {
    argmax: Vec<usize>,
    h: usize,
    w: usize,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    input: Vec<T>,
    geom: ConvGeom,
    bn: BnCache<T>,
    pool: Option<PoolCache>,
    act: Vec<T>,
    mask: Vec<T>,
}

#[derive(Clone, Debug)]
struct DenseCache<T> {
    input: Vec<T>,
    act: Vec<T>,
    mask: Vec<T>,
}

/// Activations, masks and argmax maps recorded by a training-mode forward.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    version: u64,
    batch: usize,
    blocks: Vec<BlockCache<T>>,
    dense: Vec<DenseCache<T>>,
    head_input: Vec<T>,
    subject_probs: Vec<T>,
    posture_probs: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

pub struct ForwardOutput<T> {
    /// `[B, M]`
    pub subject_probs: Tensor<T>,
    /// `[B, N]`
    pub posture_probs: Tensor<T>,
    /// Present exactly when the forward ran in training mode.
    pub cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn cache(&self) -> Result<&ForwardCache<T>> {
        self.cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward needs a training-mode forward cache".into()))
    }
}

fn apply_mask<T: Scalar>(act: &[T], mask: &[T]) -> Vec<T> {
    act.iter().zip(mask).map(|(&a, &m)| a * m).collect()
}

/// Runs a `[B, 1, H, W]` batch through the network.
///
/// Block order: conv → batch norm → (max pool, leading blocks) → leaky-ReLU →
/// dropout. Then flatten → (dense → leaky-ReLU → dropout) ×2 → both heads.
pub fn model_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ModelParams<T>,
    mut mode: Mode<'_>,
) -> Result<ForwardOutput<T>> {
    let cfg = &params.config;
    let (b, h0, w0) = match input.shape()[..] {
        [b, 1, h, w] => (b, h, w),
        _ => {
            return shape_err(format!(
                "model input must be [B,1,H,W], got {:?}",
                input.shape()
            ))
        }
    };
    if h0 != cfg.input_height || w0 != cfg.input_width {
        return shape_err(format!(
            "model built for {}x{} frames, got {h0}x{w0}",
            cfg.input_height, cfg.input_width
        ));
    }
    let train = mode.is_train();
    if train && b < 2 {
        return Err(Error::Config(
            "training batches need at least 2 samples".into(),
        ));
    }
    let slope = T::of(cfg.leaky_slope);
    let eps = T::of(cfg.bn_eps);

    let mut blocks = Vec::new();
    let mut a = input.data().to_vec();
    let (mut cin, mut h, mut w) = (1, h0, w0);
    let mut scratch = Vec::new();
    for (i, &cout) in cfg.conv_channels.iter().enumerate() {
        let geom = ConvGeom::new(cin, h, w, cout, KERNEL, KERNEL)?;
        let (oh, ow) = (geom.oh(), geom.ow());
        let mut z = vec![T::zero(); b * geom.out_len()];
        conv_forward_slice(&geom, b, &a, params.conv[i].data(), &mut z, &mut scratch);
        let bnp = &params.bn[i];
        let mut n = vec![T::zero(); z.len()];
        let bn_cache = if train {
            Some(bn_train_slice(
                &z,
                b,
                cout,
                oh * ow,
                bnp.scale.data(),
                bnp.shift.data(),
                eps,
                &mut n,
            ))
        } else {
            bn_infer_slice(&z, b, cout, oh * ow, bnp, eps, &mut n);
            None
        };
        drop(z);
        let (p, pool, ph, pw) = if i < cfg.pooled_blocks {
            let ph = (oh - POOL_WINDOW) / cfg.pool_stride + 1;
            let pw = (ow - POOL_WINDOW) / cfg.pool_stride + 1;
            let per = cout * ph * pw;
            let mut p = vec![T::zero(); b * per];
            let mut argmax = vec![0; b * per];
            for ((x, o), am) in n
                .chunks(cout * oh * ow)
                .zip(p.chunks_mut(per))
                .zip(argmax.chunks_mut(per))
            {
                maxpool_forward_slice(x, cout, oh, ow, POOL_WINDOW, cfg.pool_stride, o, am);
            }
            (
                p,
                Some(PoolCache {
                    argmax,
                    h: oh,
                    w: ow,
                }),
                ph,
                pw,
            )
        } else {
            (n, None, oh, ow)
        };
        let act: Vec<T> = p.iter().map(|&v| leaky(v, slope)).collect();
        let next_in = match &mut mode {
            Mode::Train(rng) => {
                let rate = cfg.conv_dropout[i];
                let mask = if rate > 0.0 {
                    dropout_mask(act.len(), rate, rng)
                } else {
                    vec![T::one(); act.len()]
                };
                let out = apply_mask(&act, &mask);
                let input = std::mem::replace(&mut a, Vec::new());
                blocks.push(BlockCache {
                    input,
                    geom,
                    bn: bn_cache.expect("train mode"),
                    pool,
                    act,
                    mask,
                });
                out
            }
            Mode::Infer => act,
        };
        a = next_in;
        cin = cout;
        h = ph;
        w = pw;
    }

    let mut dense = Vec::new();
    let mut f = cin * h * w;
    for layer in &params.dense {
        let u = layer.units();
        let mut z = vec![T::zero(); b * u];
        dense_forward_slice(&a, b, f, layer.weight.data(), layer.bias.data(), u, &mut z);
        let act: Vec<T> = z.iter().map(|&v| leaky(v, slope)).collect();
        a = match &mut mode {
            Mode::Train(rng) => {
                let rate = cfg.dense_dropout;
                let mask = if rate > 0.0 {
                    dropout_mask(act.len(), rate, rng)
                } else {
                    vec![T::one(); act.len()]
                };
                let out = apply_mask(&act, &mask);
                dense.push(DenseCache {
                    input: std::mem::take(&mut a),
                    act,
                    mask,
                });
                out
            }
            Mode::Infer => act,
        };
        f = u;
    }

    let head = |p: &DenseParams<T>| {
        let k = p.units();
        let mut logits = vec![T::zero(); b * k];
        dense_forward_slice(&a, b, f, p.weight.data(), p.bias.data(), k, &mut logits);
        softmax_rows(&logits, k)
    };
    let sp = head(&params.subject_head);
    let pp = head(&params.posture_head);
    let subject_probs = Tensor::from_vec(&[b, cfg.num_subjects], sp.clone())?;
    let posture_probs = Tensor::from_vec(&[b, cfg.num_postures], pp.clone())?;
    let cache = train.then(|| ForwardCache {
        version: params.version,
        batch: b,
        blocks,
        dense,
        head_input: a,
        subject_probs: sp,
        posture_probs: pp,
    });
    Ok(ForwardOutput {
        subject_probs,
        posture_probs,
        cache,
    })
}

/// Gradients of `λ·L_user + (1−λ)·L_posture + σ·Σw²` with respect to every
/// trainable tensor, from a training-mode cache of the same batch.
pub fn model_backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    subject_labels: &[usize],
    posture_labels: &[usize],
    lambda: f64,
) -> Result<(Gradients<T>, LossBreakdown)> {
    check_lambda(lambda)?;
    if cache.version != params.version {
        return Err(Error::Usage(
            "forward cache is stale: parameters changed since the forward pass".into(),
        ));
    }
    let cfg = &params.config;
    let b = cache.batch;
    let (m, n) = (cfg.num_subjects, cfg.num_postures);
    let sp = Tensor::from_vec(&[b, m], cache.subject_probs.clone())?;
    let pp = Tensor::from_vec(&[b, n], cache.posture_probs.clone())?;
    let l_user = cross_entropy(&sp, subject_labels)?.to_f64().unwrap();
    let l_posture = cross_entropy(&pp, posture_labels)?.to_f64().unwrap();
    let sigma = cfg.l2_sigma;
    let l2 = l2_penalty(params, sigma);
    let combined = lambda * l_user + (1.0 - lambda) * l_posture;
    let losses = LossBreakdown {
        user: l_user,
        posture: l_posture,
        combined,
        l2,
        total: combined + l2,
    };

    let slope = T::of(cfg.leaky_slope);
    let inv_b = T::one() / T::of(b as f64);
    let head_grad = |probs: &[T], labels: &[usize], k: usize, weight: T| {
        let mut g = probs.to_vec();
        for (i, &l) in labels.iter().enumerate() {
            g[i * k + l] = g[i * k + l] - T::one();
        }
        g.iter_mut().for_each(|v| *v = *v * inv_b * weight);
        g
    };
    let d_sub = head_grad(&cache.subject_probs, subject_labels, m, T::of(lambda));
    let d_pos = head_grad(&cache.posture_probs, posture_labels, n, T::of(1.0 - lambda));

    let mut grads: Vec<Tensor<T>> = params
        .trainable()
        .iter()
        .map(|t| Tensor::zeros_like(t))
        .collect();
    let nb = params.conv.len();
    let nd = params.dense.len();
    let head_base = 3 * nb + 2 * nd;
    let u = cfg.dense_width;

    let mut dh = vec![T::zero(); b * u];
    for (hi, (p, d, k)) in [
        (&params.subject_head, &d_sub, m),
        (&params.posture_head, &d_pos, n),
    ]
    .into_iter()
    .enumerate()
    {
        let (gw, rest) = grads[head_base + 2 * hi..].split_at_mut(1);
        let dx = dense_backward_slice(
            &cache.head_input,
            b,
            u,
            p.weight.data(),
            k,
            d,
            gw[0].data_mut(),
            rest[0].data_mut(),
            true,
        )
        .expect("requested");
        for (a, v) in dh.iter_mut().zip(dx) {
            *a = *a + v;
        }
    }

    let mut grad = dh;
    for li in (0..nd).rev() {
        let layer = &params.dense[li];
        let c = &cache.dense[li];
        let dz: Vec<T> = grad
            .iter()
            .zip(&c.mask)
            .zip(&c.act)
            .map(|((&g, &mk), &y)| g * mk * leaky_grad_from_output(y, slope))
            .collect();
        let (gw, rest) = grads[3 * nb + 2 * li..].split_at_mut(1);
        grad = dense_backward_slice(
            &c.input,
            b,
            layer.fan_in(),
            layer.weight.data(),
            layer.units(),
            &dz,
            gw[0].data_mut(),
            rest[0].data_mut(),
            true,
        )
        .expect("requested");
    }

    let mut scratch = Vec::new();
    for bi in (0..nb).rev() {
        let c = &cache.blocks[bi];
        let g = c.geom;
        let (oh, ow) = (g.oh(), g.ow());
        let dp: Vec<T> = grad
            .iter()
            .zip(&c.mask)
            .zip(&c.act)
            .map(|((&gv, &mk), &y)| gv * mk * leaky_grad_from_output(y, slope))
            .collect();
        let dn = match &c.pool {
            Some(pc) => {
                let per_in = g.cout * pc.h * pc.w;
                let per_out = dp.len() / b;
                let mut dn = vec![T::zero(); b * per_in];
                for s in 0..b {
                    maxpool_backward_slice(
                        &dp[s * per_out..(s + 1) * per_out],
                        &pc.argmax[s * per_out..(s + 1) * per_out],
                        &mut dn[s * per_in..(s + 1) * per_in],
                    );
                }
                dn
            }
            None => dp,
        };
        let (gk, rest) = grads[3 * bi..].split_at_mut(1);
        let (gs, gsh) = rest.split_at_mut(1);
        let dz = bn_backward_slice(
            &dn,
            b,
            g.cout,
            oh * ow,
            params.bn[bi].scale.data(),
            &c.bn,
            gs[0].data_mut(),
            gsh[0].data_mut(),
        );
        let mut d_in = if bi > 0 {
            vec![T::zero(); b * g.in_len()]
        } else {
            Vec::new()
        };
        let di = (bi > 0).then_some(&mut d_in[..]);
        conv_backward_slice(
            &g,
            b,
            &c.input,
            params.conv[bi].data(),
            &dz,
            gk[0].data_mut(),
            di,
            &mut scratch,
        );
        grad = d_in;
    }

    let two_sigma = T::of(2.0 * sigma);
    for ((g, w), decayed) in grads
        .iter_mut()
        .zip(params.trainable())
        .zip(params.l2_mask())
    {
        if decayed && sigma != 0.0 {
            for (gv, &wv) in g.data_mut().iter_mut().zip(w.data()) {
                *gv = *gv + two_sigma * wv;
            }
        }
    }
    Ok((Gradients { tensors: grads }, losses))
}

/// Inference-mode class predictions `(subject, posture)` per sample.
pub fn predict<T: Scalar>(
    input: &Tensor<T>,
    params: &ModelParams<T>,
) -> Result<Vec<(usize, usize)>> {
    let out = model_forward(input, params, Mode::Infer)?;
    Ok(
        argmax_rows(out.subject_probs.data(), params.config.num_subjects)
            .into_iter()
            .zip(argmax_rows(
                out.posture_probs.data(),
                params.config.num_postures,
            ))
            .collect(),
    )
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(data: &[T], k: usize) -> Vec<usize> {
    data.chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
