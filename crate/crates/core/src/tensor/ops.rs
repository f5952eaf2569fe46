use rand::Rng;
use rayon::prelude::*;

use super::{Mode, Result, Tensor, TensorError};

/// Splits an image tensor into `(batch, height, width, channels)`.
/// A 3-D tensor is treated as a batch of one.
fn image_dims(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        ref other => Err(TensorError::Dimension(format!(
            "{what} expects H×W×C or N×H×W×C, got {other:?}"
        ))),
    }
}

fn with_batch_shape(input: &Tensor, n: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if input.ndim() == 3 {
        vec![h, w, c]
    } else {
        vec![n, h, w, c]
    }
}

/// Valid (unpadded), stride-1 2-D cross-correlation.
///
/// `kernels` is laid out `K×K×Cin×Cout`, `bias` has `Cout` entries.
pub fn conv2d_valid(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, h, w, cin) = image_dims(input, "conv2d")?;
    let (k, cout) = kernel_dims(kernels, cin)?;
    if bias.len() != cout {
        return Err(TensorError::Dimension(format!(
            "conv2d bias has {} entries for {cout} output channels",
            bias.len()
        )));
    }
    if h < k || w < k {
        return Err(TensorError::Dimension(format!(
            "conv2d input {h}×{w} is smaller than the {k}×{k} kernel"
        )));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let in_stride = h * w * cin;
    let out_stride = oh * ow * cout;
    let mut out = vec![0.0; n * out_stride];
    let weights = kernels.data();
    let b = bias.data();
    out.par_chunks_mut(out_stride)
        .zip(input.data().par_chunks(in_stride))
        .for_each(|(dst, src)| {
            for y in 0..oh {
                for x in 0..ow {
                    let o = &mut dst[(y * ow + x) * cout..][..cout];
                    o.copy_from_slice(b);
                    for ky in 0..k {
                        for kx in 0..k {
                            let px = &src[((y + ky) * w + x + kx) * cin..][..cin];
                            let wbase = (ky * k + kx) * cin * cout;
                            for (ci, &v) in px.iter().enumerate() {
                                if v == 0.0 {
                                    continue;
                                }
                                let wrow = &weights[wbase + ci * cout..][..cout];
                                for (acc, &wv) in o.iter_mut().zip(wrow) {
                                    *acc += v * wv;
                                }
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(with_batch_shape(input, n, oh, ow, cout), out)
}

fn kernel_dims(kernels: &Tensor, cin: usize) -> Result<(usize, usize)> {
    match *kernels.shape() {
        [k1, k2, kc, cout] if k1 == k2 => {
            if kc != cin {
                return Err(TensorError::Dimension(format!(
                    "conv2d kernels expect {kc} input channels, input has {cin}"
                )));
            }
            Ok((k1, cout))
        }
        ref other => Err(TensorError::Dimension(format!(
            "conv2d kernels must be K×K×Cin×Cout, got {other:?}"
        ))),
    }
}

/// Gradients of [`conv2d_valid`]: `(d input, d kernels, d bias)`.
///
/// The input gradient is skipped when `need_input_grad` is false (first layer).
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (n, h, w, cin) = image_dims(input, "conv2d backward")?;
    let (k, cout) = kernel_dims(kernels, cin)?;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let (gn, gh, gw, gc) = image_dims(grad_out, "conv2d backward")?;
    if (gn, gh, gw, gc) != (n, oh, ow, cout) {
        return Err(TensorError::Dimension(format!(
            "conv2d output gradient {:?} does not match forward output",
            grad_out.shape()
        )));
    }
    let in_stride = h * w * cin;
    let out_stride = oh * ow * cout;
    let weights = kernels.data();
    let wlen = weights.len();

    let per_sample: Vec<(Option<Vec<f64>>, Vec<f64>, Vec<f64>)> = input
        .data()
        .par_chunks(in_stride)
        .zip(grad_out.data().par_chunks(out_stride))
        .map(|(src, g)| {
            let mut gin = need_input_grad.then(|| vec![0.0; in_stride]);
            let mut gw_acc = vec![0.0; wlen];
            let mut gb = vec![0.0; cout];
            for y in 0..oh {
                for x in 0..ow {
                    let go = &g[(y * ow + x) * cout..][..cout];
                    if go.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for (acc, &v) in gb.iter_mut().zip(go) {
                        *acc += v;
                    }
                    for ky in 0..k {
                        for kx in 0..k {
                            let pix = ((y + ky) * w + x + kx) * cin;
                            let wbase = (ky * k + kx) * cin * cout;
                            for ci in 0..cin {
                                let woff = wbase + ci * cout;
                                let v = src[pix + ci];
                                if v != 0.0 {
                                    for (acc, &gv) in gw_acc[woff..woff + cout].iter_mut().zip(go) {
                                        *acc += v * gv;
                                    }
                                }
                                if let Some(gin) = gin.as_mut() {
                                    let dot: f64 = weights[woff..woff + cout]
                                        .iter()
                                        .zip(go)
                                        .map(|(a, b)| a * b)
                                        .sum();
                                    gin[pix + ci] += dot;
                                }
                            }
                        }
                    }
                }
            }
            (gin, gw_acc, gb)
        })
        .collect();

    // Sequential reduction keeps the summation order independent of scheduling.
    let mut gk = vec![0.0; wlen];
    let mut gb = vec![0.0; cout];
    let mut gin_all = need_input_grad.then(|| Vec::with_capacity(n * in_stride));
    for (gin, gw_s, gb_s) in per_sample {
        for (a, b) in gk.iter_mut().zip(&gw_s) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(&gb_s) {
            *a += b;
        }
        if let (Some(all), Some(gin)) = (gin_all.as_mut(), gin) {
            all.extend_from_slice(&gin);
        }
    }
    let gin = match gin_all {
        Some(data) => Some(Tensor::new(input.shape().to_vec(), data)?),
        None => None,
    };
    Ok((
        gin,
        Tensor::new(kernels.shape().to_vec(), gk)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

/// For every pooled cell, the flat index of the winning input element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. A trailing odd row or column is dropped.
pub fn maxpool2x2(input: &Tensor) -> Result<Tensor> {
    maxpool2x2_indexed(input).map(|(t, _)| t)
}

pub(crate) fn maxpool2x2_indexed(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, h, w, c) = image_dims(input, "maxpool2x2")?;
    if h < 2 || w < 2 {
        return Err(TensorError::Dimension(format!(
            "maxpool2x2 needs at least 2×2 input, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for s in 0..n {
        let base = s * h * w * c;
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best_idx = base + ((2 * y) * w + 2 * x) * c + ch;
                    let mut best = src[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let t = Tensor::new(with_batch_shape(input, n, oh, ow, c), out)?;
    Ok((
        t,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(TensorError::Dimension(format!(
            "maxpool gradient has {} entries, forward produced {}",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let mut gin = vec![0.0; indices.input_shape.iter().product()];
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gin[idx] += g;
    }
    Tensor::new(indices.input_shape.clone(), gin)
}

/// Per-channel batch-normalization parameters. Channels are the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Intermediates kept by a training-mode batch-norm pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Batch normalization over `N×F` or `N×H×W×C` input.
///
/// Training mode normalizes with the (biased) batch statistics and folds
/// them into the running averages; inference mode uses the running averages.
pub fn batchnorm_forward(
    batch: &Tensor,
    params: &mut BatchNormParams,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let c = params.channels();
    let n = match *batch.shape() {
        [n, f] if f == c => n,
        [n, _, _, ch] if ch == c => n,
        ref other => {
            return Err(TensorError::Dimension(format!(
                "batchnorm with {c} channels cannot take input {other:?}"
            )))
        }
    };
    if params.epsilon <= 0.0 {
        return Err(TensorError::InvalidSpec(format!(
            "batchnorm epsilon must be positive, got {}",
            params.epsilon
        )));
    }
    let x = batch.data();
    let count = x.len() / c;
    match mode {
        Mode::Infer => Ok((batchnorm_infer(batch, params)?, None)),
        Mode::Train => {
            if n < 2 {
                return Err(TensorError::DegenerateBatch(n));
            }
            let mut mean = vec![0.0; c];
            for row in x.chunks(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks(c) {
                for j in 0..c {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let inv_std: Vec<f64> = var
                .iter()
                .map(|v| 1.0 / (v + params.epsilon).sqrt())
                .collect();
            let mut normalized = Vec::with_capacity(x.len());
            let mut out = Vec::with_capacity(x.len());
            for row in x.chunks(c) {
                for j in 0..c {
                    let xh = (row[j] - mean[j]) * inv_std[j];
                    normalized.push(xh);
                    out.push(params.gamma[j] * xh + params.beta[j]);
                }
            }
            let m = params.momentum;
            for j in 0..c {
                params.running_mean[j] = m * params.running_mean[j] + (1.0 - m) * mean[j];
                params.running_var[j] = m * params.running_var[j] + (1.0 - m) * var[j];
            }
            Ok((
                Tensor::new(batch.shape().to_vec(), out)?,
                Some(BatchNormCache {
                    normalized,
                    inv_std,
                }),
            ))
        }
    }
}

/// Inference-mode batch normalization using the running statistics.
pub(crate) fn batchnorm_infer(batch: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let c = params.channels();
    if batch.shape().last() != Some(&c) {
        return Err(TensorError::Dimension(format!(
            "batchnorm with {c} channels cannot take input {:?}",
            batch.shape()
        )));
    }
    let scale: Vec<f64> = (0..c)
        .map(|j| params.gamma[j] / (params.running_var[j] + params.epsilon).sqrt())
        .collect();
    let mut out = Vec::with_capacity(batch.len());
    for row in batch.data().chunks(c) {
        for j in 0..c {
            out.push((row[j] - params.running_mean[j]) * scale[j] + params.beta[j]);
        }
    }
    Tensor::new(batch.shape().to_vec(), out)
}

/// Gradients of a training-mode [`batchnorm_forward`]: `(d input, d gamma, d beta)`.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = gamma.len();
    let g = grad_out.data();
    if g.len() != cache.normalized.len() || g.len() % c != 0 {
        return Err(TensorError::Dimension(
            "batchnorm gradient does not match cached forward pass".into(),
        ));
    }
    let count = (g.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (grow, xrow) in g.chunks(c).zip(cache.normalized.chunks(c)) {
        for j in 0..c {
            dgamma[j] += grow[j] * xrow[j];
            dbeta[j] += grow[j];
        }
    }
    // d xhat = g * gamma; sum(d xhat) = gamma * dbeta; sum(d xhat * xhat) = gamma * dgamma
    let mut gin = Vec::with_capacity(g.len());
    for (grow, xrow) in g.chunks(c).zip(cache.normalized.chunks(c)) {
        for j in 0..c {
            let dxhat = grow[j] * gamma[j];
            let v = cache.inv_std[j] / count
                * (count * dxhat - gamma[j] * dbeta[j] - xrow[j] * gamma[j] * dgamma[j]);
            gin.push(v);
        }
    }
    Ok((Tensor::new(grad_out.shape().to_vec(), gin)?, dgamma, dbeta))
}

fn dense_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, f) = match *input.shape() {
        [f] => (1, f),
        [n, f] => (n, f),
        ref other => {
            return Err(TensorError::Dimension(format!(
                "dense expects F or N×F input, got {other:?}"
            )))
        }
    };
    match *weights.shape() {
        [wf, u] if wf == f => Ok((n, f, u)),
        ref other => Err(TensorError::Dimension(format!(
            "dense weights {other:?} do not accept {f} input features"
        ))),
    }
}

/// Affine map `input · weights + bias` with `weights` laid out `F×U`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, u) = dense_dims(input, weights)?;
    if bias.len() != u {
        return Err(TensorError::Dimension(format!(
            "dense bias has {} entries for {u} units",
            bias.len()
        )));
    }
    let w = weights.data();
    let mut out = Vec::with_capacity(n * u);
    for row in input.data().chunks(f) {
        let mut acc = bias.data().to_vec();
        for (i, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (a, &wv) in acc.iter_mut().zip(&w[i * u..(i + 1) * u]) {
                *a += v * wv;
            }
        }
        out.extend(acc);
    }
    let shape = if input.ndim() == 1 {
        vec![u]
    } else {
        vec![n, u]
    };
    Tensor::new(shape, out)
}

/// Gradients of [`dense_forward`]: `(d input, d weights, d bias)`.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f, u) = dense_dims(input, weights)?;
    if grad_out.len() != n * u {
        return Err(TensorError::Dimension(format!(
            "dense output gradient {:?} does not match {n}×{u}",
            grad_out.shape()
        )));
    }
    let w = weights.data();
    let mut gin = Vec::with_capacity(n * f);
    let mut gw = vec![0.0; f * u];
    let mut gb = vec![0.0; u];
    for (row, g) in input.data().chunks(f).zip(grad_out.data().chunks(u)) {
        for (a, &v) in gb.iter_mut().zip(g) {
            *a += v;
        }
        for i in 0..f {
            let wrow = &w[i * u..(i + 1) * u];
            gin.push(wrow.iter().zip(g).map(|(a, b)| a * b).sum::<f64>());
            let v = row[i];
            if v != 0.0 {
                for (a, &gv) in gw[i * u..(i + 1) * u].iter_mut().zip(g) {
                    *a += v * gv;
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gin)?,
        Tensor::new(vec![f, u], gw)?,
        Tensor::new(vec![u], gb)?,
    ))
}

/// Inverted-dropout scale factors: 0 for dropped elements, `1/(1-rate)` otherwise.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate(rate));
    }
    Ok(())
}

/// Inverted dropout. Inference mode is the identity.
pub fn dropout_forward<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    check_rate(rate)?;
    match mode {
        Mode::Infer => Ok(input.clone()),
        Mode::Train => {
            let mask = dropout_mask(input.len(), rate, rng)?;
            let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::new(input.shape().to_vec(), data)
        }
    }
}
