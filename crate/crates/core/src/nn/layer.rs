use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::LayerSpec;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// A layer with its parameters. All inputs and outputs carry a leading batch
/// dimension.
#[derive(Debug, Clone)]
pub(super) enum Layer<S: Scalar> {
    Conv2d {
        /// [kh, kw, in_channels, out_channels]
        weight: Tensor<S>,
        bias: Tensor<S>,
        kernel: (usize, usize),
    },
    MaxPool2d,
    BatchNorm {
        gamma: Tensor<S>,
        beta: Tensor<S>,
        running_mean: Tensor<S>,
        running_var: Tensor<S>,
    },
    Relu,
    Flatten,
    Dense {
        /// [in_features, out_features]
        weight: Tensor<S>,
        bias: Tensor<S>,
    },
}

/// Intermediate values retained by a training-mode forward pass.
#[derive(Debug, Clone)]
pub(super) enum LayerCache<S: Scalar> {
    Conv {
        input: Tensor<S>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<u32>,
    },
    BatchNorm {
        normalized: Tensor<S>,
        inv_std: Vec<S>,
    },
    Relu {
        active: Vec<bool>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<S>,
    },
}

impl<S: Scalar> Layer<S> {
    /// Build a layer with fan-in-scaled uniform weight initialization.
    pub(super) fn build<R: Rng>(spec: &LayerSpec, input_shape: &[usize], rng: &mut R) -> Layer<S> {
        match spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel: (kh, kw),
            } => {
                let in_ch = input_shape[2];
                let fan_in = kh * kw * in_ch;
                Layer::Conv2d {
                    weight: init_uniform(&[*kh, *kw, in_ch, *out_channels], fan_in, rng),
                    bias: Tensor::zeros(&[*out_channels]),
                    kernel: (*kh, *kw),
                }
            }
            LayerSpec::MaxPool2d => Layer::MaxPool2d,
            LayerSpec::BatchNorm => {
                let ch = input_shape[2];
                Layer::BatchNorm {
                    gamma: Tensor::filled(&[ch], S::one()),
                    beta: Tensor::zeros(&[ch]),
                    running_mean: Tensor::zeros(&[ch]),
                    running_var: Tensor::filled(&[ch], S::one()),
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units } => {
                let fan_in = input_shape[0];
                Layer::Dense {
                    weight: init_uniform(&[fan_in, *units], fan_in, rng),
                    bias: Tensor::zeros(&[*units]),
                }
            }
        }
    }

    /// Forward pass retaining the cache needed by `backward`. Batch
    /// normalization uses batch statistics and updates its running estimates.
    pub(super) fn forward_train(&mut self, input: &Tensor<S>) -> (Tensor<S>, LayerCache<S>) {
        match self {
            Layer::Conv2d {
                weight,
                bias,
                kernel,
            } => {
                let out = conv_forward(input, weight, bias, *kernel);
                (
                    out,
                    LayerCache::Conv {
                        input: input.clone(),
                    },
                )
            }
            Layer::MaxPool2d => {
                let (out, argmax) = maxpool_forward(input);
                (
                    out,
                    LayerCache::MaxPool {
                        input_shape: input.shape().to_vec(),
                        argmax,
                    },
                )
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (out, normalized, inv_std) =
                    batchnorm_forward_train(input, gamma, beta, running_mean, running_var);
                (out, LayerCache::BatchNorm { normalized, inv_std })
            }
            Layer::Relu => {
                let active: Vec<bool> = input.data().iter().map(|&x| x > S::zero()).collect();
                let out = input.map(|x| if x > S::zero() { x } else { S::zero() });
                (out, LayerCache::Relu { active })
            }
            Layer::Flatten => {
                let n = input.shape()[0];
                let rest: usize = input.shape()[1..].iter().product();
                let out = input.reshaped(&[n, rest]).expect("flatten preserves length");
                (
                    out,
                    LayerCache::Flatten {
                        input_shape: input.shape().to_vec(),
                    },
                )
            }
            Layer::Dense { weight, bias } => {
                let out = dense_forward(input, weight, bias);
                (
                    out,
                    LayerCache::Dense {
                        input: input.clone(),
                    },
                )
            }
        }
    }

    /// Forward pass without caching. Batch normalization uses running
    /// statistics, so this is deterministic given parameters and input.
    pub(super) fn infer(&self, input: &Tensor<S>) -> Tensor<S> {
        match self {
            Layer::Conv2d {
                weight,
                bias,
                kernel,
            } => conv_forward(input, weight, bias, *kernel),
            Layer::MaxPool2d => maxpool_forward(input).0,
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => batchnorm_infer(input, gamma, beta, running_mean, running_var),
            Layer::Relu => input.map(|x| if x > S::zero() { x } else { S::zero() }),
            Layer::Flatten => {
                let n = input.shape()[0];
                let rest: usize = input.shape()[1..].iter().product();
                input.reshaped(&[n, rest]).expect("flatten preserves length")
            }
            Layer::Dense { weight, bias } => dense_forward(input, weight, bias),
        }
    }

    /// Backward pass: parameter gradients (in `params()` order) and the
    /// gradient with respect to the layer input.
    pub(super) fn backward(
        &self,
        cache: &LayerCache<S>,
        grad_out: &Tensor<S>,
    ) -> Result<(Vec<Tensor<S>>, Tensor<S>)> {
        match (self, cache) {
            (
                Layer::Conv2d {
                    weight,
                    kernel,
                    ..
                },
                LayerCache::Conv { input },
            ) => {
                let (dw, db, din) = conv_backward(input, weight, grad_out, *kernel);
                Ok((vec![dw, db], din))
            }
            (Layer::MaxPool2d, LayerCache::MaxPool { input_shape, argmax }) => {
                let mut din = Tensor::zeros(input_shape);
                for (i, &src) in argmax.iter().enumerate() {
                    let d = din.data_mut();
                    d[src as usize] = d[src as usize] + grad_out.data()[i];
                }
                Ok((vec![], din))
            }
            (
                Layer::BatchNorm { gamma, .. },
                LayerCache::BatchNorm { normalized, inv_std },
            ) => {
                let (dgamma, dbeta, din) = batchnorm_backward(gamma, normalized, inv_std, grad_out);
                Ok((vec![dgamma, dbeta], din))
            }
            (Layer::Relu, LayerCache::Relu { active }) => {
                let mut din = grad_out.clone();
                for (d, &a) in din.data_mut().iter_mut().zip(active.iter()) {
                    if !a {
                        *d = S::zero();
                    }
                }
                Ok((vec![], din))
            }
            (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                Ok((vec![], grad_out.reshaped(input_shape)?))
            }
            (Layer::Dense { weight, .. }, LayerCache::Dense { input }) => {
                let (dw, db, din) = dense_backward(input, weight, grad_out);
                Ok((vec![dw, db], din))
            }
            _ => Err(Error::NoForwardCache),
        }
    }

    /// (name, tensor, weight-decay flag) for each trainable parameter.
    pub(super) fn params(&self) -> Vec<(&'static str, &Tensor<S>, bool)> {
        match self {
            Layer::Conv2d { weight, bias, .. } => {
                vec![("weight", weight, true), ("bias", bias, false)]
            }
            Layer::BatchNorm { gamma, beta, .. } => {
                vec![("gamma", gamma, false), ("beta", beta, false)]
            }
            Layer::Dense { weight, bias } => {
                vec![("weight", weight, true), ("bias", bias, false)]
            }
            _ => vec![],
        }
    }

    pub(super) fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>, bool)> {
        match self {
            Layer::Conv2d { weight, bias, .. } => {
                vec![("weight", weight, true), ("bias", bias, false)]
            }
            Layer::BatchNorm { gamma, beta, .. } => {
                vec![("gamma", gamma, false), ("beta", beta, false)]
            }
            Layer::Dense { weight, bias } => {
                vec![("weight", weight, true), ("bias", bias, false)]
            }
            _ => vec![],
        }
    }

    /// All tensors belonging in checkpoints: trainable parameters plus
    /// non-trainable state such as the batchnorm running statistics.
    pub(super) fn tensors(&self) -> Vec<(&'static str, &Tensor<S>)> {
        match self {
            Layer::Conv2d { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
            Layer::Dense { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => vec![],
        }
    }

    pub(super) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        match self {
            Layer::Conv2d { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
            Layer::Dense { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => vec![],
        }
    }

    pub(super) fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool2d => "maxpool2d",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }
}

fn init_uniform<S: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let limit = (3.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = S::from_f64(rng.gen_range(-limit..limit));
    }
    t
}

fn conv_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    (kh, kw): (usize, usize),
) -> Tensor<S> {
    let (n, h, w, ci) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let oc = bias.len();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(&[n, oh, ow, oc]);
    let in_d = input.data();
    let w_d = weight.data();
    let b_d = bias.data();
    let out_d = out.data_mut();
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let o_base = (((b * oh) + y) * ow + x) * oc;
                out_d[o_base..o_base + oc].copy_from_slice(b_d);
                for ky in 0..kh {
                    let i_row = (((b * h) + (y + ky)) * w + x) * ci;
                    for kx in 0..kw {
                        let i_base = i_row + kx * ci;
                        let w_base = ((ky * kw) + kx) * ci * oc;
                        for c in 0..ci {
                            let v = in_d[i_base + c];
                            let w_row = &w_d[w_base + c * oc..w_base + (c + 1) * oc];
                            for (o, &wv) in w_row.iter().enumerate() {
                                out_d[o_base + o] = out_d[o_base + o] + v * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
    (kh, kw): (usize, usize),
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, h, w, ci) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow, oc) = (
        grad_out.shape()[1],
        grad_out.shape()[2],
        grad_out.shape()[3],
    );
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[oc]);
    let mut din = Tensor::zeros(input.shape());
    let in_d = input.data();
    let w_d = weight.data();
    let go_d = grad_out.data();
    {
        let db_d = db.data_mut();
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    let g_base = (((b * oh) + y) * ow + x) * oc;
                    for o in 0..oc {
                        db_d[o] = db_d[o] + go_d[g_base + o];
                    }
                }
            }
        }
    }
    let dw_d = dw.data_mut();
    let din_d = din.data_mut();
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                let g_base = (((b * oh) + y) * ow + x) * oc;
                let g_row = &go_d[g_base..g_base + oc];
                for ky in 0..kh {
                    let i_row = (((b * h) + (y + ky)) * w + x) * ci;
                    for kx in 0..kw {
                        let i_base = i_row + kx * ci;
                        let w_base = ((ky * kw) + kx) * ci * oc;
                        for c in 0..ci {
                            let v = in_d[i_base + c];
                            let w_off = w_base + c * oc;
                            let mut acc = S::zero();
                            for (o, &g) in g_row.iter().enumerate() {
                                dw_d[w_off + o] = dw_d[w_off + o] + v * g;
                                acc = acc + w_d[w_off + o] * g;
                            }
                            din_d[i_base + c] = din_d[i_base + c] + acc;
                        }
                    }
                }
            }
        }
    }
    (dw, db, din)
}

fn maxpool_forward<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let (n, h, w, ch) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, oh, ow, ch]);
    let mut argmax = vec![0u32; n * oh * ow * ch];
    let in_d = input.data();
    let out_d = out.data_mut();
    let idx_in = |b: usize, y: usize, x: usize, c: usize| (((b * h) + y) * w + x) * ch + c;
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..ch {
                    let mut best_idx = idx_in(b, 2 * y, 2 * x, c);
                    let mut best = in_d[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = idx_in(b, 2 * y + dy, 2 * x + dx, c);
                        if in_d[idx] > best {
                            best = in_d[idx];
                            best_idx = idx;
                        }
                    }
                    let o = (((b * oh) + y) * ow + x) * ch + c;
                    out_d[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    (out, argmax)
}

fn batchnorm_forward_train<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &mut Tensor<S>,
    running_var: &mut Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Vec<S>) {
    let ch = input.shape()[3];
    let m = input.len() / ch;
    let m_s = S::from_f64(m as f64);
    let eps = S::from_f64(BN_EPS);
    let momentum = S::from_f64(BN_MOMENTUM);

    let mut mean = vec![S::zero(); ch];
    let mut var = vec![S::zero(); ch];
    for (i, &v) in input.data().iter().enumerate() {
        mean[i % ch] += v;
    }
    for mu in mean.iter_mut() {
        *mu = *mu / m_s;
    }
    for (i, &v) in input.data().iter().enumerate() {
        let d = v - mean[i % ch];
        var[i % ch] += d * d;
    }
    for s in var.iter_mut() {
        *s = *s / m_s;
    }

    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    {
        let nd = normalized.data_mut();
        let od = out.data_mut();
        let gd = gamma.data();
        let bd = beta.data();
        for (i, &v) in input.data().iter().enumerate() {
            let c = i % ch;
            let xhat = (v - mean[c]) * inv_std[c];
            nd[i] = xhat;
            od[i] = gd[c] * xhat + bd[c];
        }
    }
    for c in 0..ch {
        let rm = running_mean.data_mut();
        rm[c] = (S::one() - momentum) * rm[c] + momentum * mean[c];
        let rv = running_var.data_mut();
        rv[c] = (S::one() - momentum) * rv[c] + momentum * var[c];
    }
    (out, normalized, inv_std)
}

fn batchnorm_infer<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
) -> Tensor<S> {
    let ch = input.shape()[3];
    let eps = S::from_f64(BN_EPS);
    let scale: Vec<S> = (0..ch)
        .map(|c| gamma.data()[c] / (running_var.data()[c] + eps).sqrt())
        .collect();
    let mut out = Tensor::zeros(input.shape());
    let od = out.data_mut();
    for (i, &v) in input.data().iter().enumerate() {
        let c = i % ch;
        od[i] = (v - running_mean.data()[c]) * scale[c] + beta.data()[c];
    }
    out
}

fn batchnorm_backward<S: Scalar>(
    gamma: &Tensor<S>,
    normalized: &Tensor<S>,
    inv_std: &[S],
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let ch = normalized.shape()[3];
    let m = normalized.len() / ch;
    let m_s = S::from_f64(m as f64);

    let mut dgamma = Tensor::zeros(&[ch]);
    let mut dbeta = Tensor::zeros(&[ch]);
    let mut sum_dy = vec![S::zero(); ch];
    let mut sum_dy_xhat = vec![S::zero(); ch];
    {
        let dg = dgamma.data_mut();
        let db = dbeta.data_mut();
        for (i, &g) in grad_out.data().iter().enumerate() {
            let c = i % ch;
            let xhat = normalized.data()[i];
            dg[c] += g * xhat;
            db[c] += g;
            sum_dy[c] += g;
            sum_dy_xhat[c] += g * xhat;
        }
    }
    let mut din = Tensor::zeros(normalized.shape());
    {
        let dd = din.data_mut();
        let gd = gamma.data();
        for (i, &g) in grad_out.data().iter().enumerate() {
            let c = i % ch;
            let xhat = normalized.data()[i];
            dd[i] = gd[c] * inv_std[c] / m_s
                * (m_s * g - sum_dy[c] - xhat * sum_dy_xhat[c]);
        }
    }
    (dgamma, dbeta, din)
}

fn dense_forward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    let (n, fan_in) = (input.shape()[0], input.shape()[1]);
    let units = bias.len();
    let mut out = Tensor::zeros(&[n, units]);
    let in_d = input.data();
    let w_d = weight.data();
    let out_d = out.data_mut();
    for b in 0..n {
        let o_base = b * units;
        out_d[o_base..o_base + units].copy_from_slice(bias.data());
        for f in 0..fan_in {
            let v = in_d[b * fan_in + f];
            let w_row = &w_d[f * units..(f + 1) * units];
            for (u, &wv) in w_row.iter().enumerate() {
                out_d[o_base + u] = out_d[o_base + u] + v * wv;
            }
        }
    }
    out
}

fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, fan_in) = (input.shape()[0], input.shape()[1]);
    let units = grad_out.shape()[1];
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[units]);
    let mut din = Tensor::zeros(input.shape());
    let in_d = input.data();
    let w_d = weight.data();
    let go_d = grad_out.data();
    let dw_d = dw.data_mut();
    let db_d = db.data_mut();
    let din_d = din.data_mut();
    for b in 0..n {
        let g_row = &go_d[b * units..(b + 1) * units];
        for (u, &g) in g_row.iter().enumerate() {
            db_d[u] = db_d[u] + g;
        }
        for f in 0..fan_in {
            let v = in_d[b * fan_in + f];
            let w_row = &w_d[f * units..(f + 1) * units];
            let dw_row = &mut dw_d[f * units..(f + 1) * units];
            let mut acc = S::zero();
            for (u, &g) in g_row.iter().enumerate() {
                dw_row[u] = dw_row[u] + v * g;
                acc = acc + w_row[u] * g;
            }
            din_d[b * fan_in + f] = din_d[b * fan_in + f] + acc;
        }
    }
    (dw, db, din)
}
