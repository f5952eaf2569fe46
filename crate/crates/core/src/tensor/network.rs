use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, BatchNormCache, BatchNormParams, PoolIndices};
use super::{Result, Tensor, TensorError};

/// Forward-pass mode. Training records intermediates for the backward pass,
/// uses batch statistics and applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Identity,
}

/// Declarative description of one layer. Sizes that follow from the
/// incoming shape (input channels, input features) are inferred at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { filters: usize, kernel_side: usize },
    Batchnorm { epsilon: f64, momentum: f64 },
    Maxpool2,
    Flatten,
    Dense { units: usize },
    Dropout { rate: f64 },
    Activation { function: ActivationKind },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Maxpool2 => "maxpool2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Activation { .. } => "activation",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_side,
            } if filters == 0 || kernel_side == 0 => Err(TensorError::InvalidSpec(
                "conv2d needs at least one filter and kernel side >= 1".into(),
            )),
            LayerSpec::Batchnorm { epsilon, momentum }
                if !(epsilon > 0.0) || !(0.0..1.0).contains(&momentum) =>
            {
                Err(TensorError::InvalidSpec(format!(
                    "batchnorm epsilon {epsilon} must be > 0 and momentum {momentum} in [0, 1)"
                )))
            }
            LayerSpec::Dense { units: 0 } => Err(TensorError::InvalidSpec(
                "dense layer needs at least one unit".into(),
            )),
            LayerSpec::Dropout { rate } => ops::check_rate(rate),
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let image = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(TensorError::Dimension(format!(
                    "{what} expects an H×W×C input, got {input:?}"
                ))),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_side,
            } => {
                let (h, w, _) = image("conv2d")?;
                if h < kernel_side || w < kernel_side {
                    return Err(TensorError::Dimension(format!(
                        "conv2d input {h}×{w} is smaller than the {kernel_side}×{kernel_side} kernel"
                    )));
                }
                Ok(vec![h - kernel_side + 1, w - kernel_side + 1, filters])
            }
            LayerSpec::Maxpool2 => {
                let (h, w, c) = image("maxpool2")?;
                if h < 2 || w < 2 {
                    return Err(TensorError::Dimension(format!(
                        "maxpool2 input {h}×{w} is smaller than 2×2"
                    )));
                }
                Ok(vec![h / 2, w / 2, c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units } => match *input {
                [_] => Ok(vec![units]),
                _ => Err(TensorError::Dimension(format!(
                    "dense expects a flat input, got {input:?}"
                ))),
            },
            LayerSpec::Batchnorm { .. }
            | LayerSpec::Dropout { .. }
            | LayerSpec::Activation { .. } => Ok(input.to_vec()),
        }
    }

    /// `(trainable, non_trainable)` parameter counts for a per-sample input shape.
    pub fn parameter_counts(&self, input: &[usize]) -> Result<(usize, usize)> {
        self.output_shape(input)?;
        Ok(match *self {
            LayerSpec::Conv2d {
                filters,
                kernel_side,
            } => {
                let cin = input[2];
                (kernel_side * kernel_side * cin * filters + filters, 0)
            }
            LayerSpec::Batchnorm { .. } => {
                let c = *input.last().expect("non-empty shape");
                (2 * c, 2 * c)
            }
            LayerSpec::Dense { units } => (input[0] * units + units, 0),
            _ => (0, 0),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    input: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Option<BatchNormCache>,
}

impl BatchNorm {
    fn params(&self) -> BatchNormParams {
        BatchNormParams {
            gamma: self.gamma.data().to_vec(),
            beta: self.beta.data().to_vec(),
            running_mean: self.running_mean.data().to_vec(),
            running_var: self.running_var.data().to_vec(),
            epsilon: self.epsilon,
            momentum: self.momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
    input: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Vec<f64>>,
}

/// A built layer: parameters plus whatever the last training-mode forward
/// pass recorded for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Batchnorm(BatchNorm),
    Maxpool2 {
        indices: Option<PoolIndices>,
    },
    Flatten {
        input_shape: Option<Vec<usize>>,
    },
    Dense(Dense),
    Dropout(Dropout),
    Activation {
        function: ActivationKind,
        input: Option<Tensor>,
    },
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
    t
}

impl Layer {
    fn build<R: Rng + ?Sized>(spec: &LayerSpec, input: &[usize], rng: &mut R) -> Result<Self> {
        spec.output_shape(input)?;
        Ok(match *spec {
            LayerSpec::Conv2d {
                filters,
                kernel_side,
            } => {
                let cin = input[2];
                let fan_in = (kernel_side * kernel_side * cin) as f64;
                let limit = (6.0 / fan_in).sqrt();
                Layer::Conv2d(Conv2d {
                    kernels: uniform_tensor(&[kernel_side, kernel_side, cin, filters], limit, rng),
                    bias: Tensor::zeros(&[filters]),
                    input: None,
                })
            }
            LayerSpec::Batchnorm { epsilon, momentum } => {
                let c = *input.last().expect("non-empty shape");
                Layer::Batchnorm(BatchNorm {
                    gamma: Tensor::full(&[c], 1.0),
                    beta: Tensor::zeros(&[c]),
                    running_mean: Tensor::zeros(&[c]),
                    running_var: Tensor::full(&[c], 1.0),
                    epsilon,
                    momentum,
                    cache: None,
                })
            }
            LayerSpec::Maxpool2 => Layer::Maxpool2 { indices: None },
            LayerSpec::Flatten => Layer::Flatten { input_shape: None },
            LayerSpec::Dense { units } => {
                let fan_in = input[0];
                let limit = (6.0 / fan_in as f64).sqrt();
                Layer::Dense(Dense {
                    weights: uniform_tensor(&[fan_in, units], limit, rng),
                    bias: Tensor::zeros(&[units]),
                    input: None,
                })
            }
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout { rate, mask: None }),
            LayerSpec::Activation { function } => Layer::Activation {
                function,
                input: None,
            },
        })
    }

    fn forward<R: Rng + ?Sized>(&mut self, x: Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
        let record = mode == Mode::Train;
        match self {
            Layer::Conv2d(c) => {
                let y = ops::conv2d_valid(&x, &c.kernels, &c.bias)?;
                c.input = record.then_some(x);
                Ok(y)
            }
            Layer::Batchnorm(bn) => {
                let mut p = bn.params();
                let (y, cache) = ops::batchnorm_forward(&x, &mut p, mode)?;
                if record {
                    bn.running_mean.data_mut().copy_from_slice(&p.running_mean);
                    bn.running_var.data_mut().copy_from_slice(&p.running_var);
                }
                bn.cache = cache;
                Ok(y)
            }
            Layer::Maxpool2 { indices } => {
                let (y, idx) = ops::maxpool2x2_indexed(&x)?;
                *indices = record.then_some(idx);
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                let n = x.shape()[0];
                let per: usize = x.shape()[1..].iter().product();
                *input_shape = record.then(|| x.shape().to_vec());
                x.reshape(&[n, per])
            }
            Layer::Dense(d) => {
                let y = ops::dense_forward(&x, &d.weights, &d.bias)?;
                d.input = record.then_some(x);
                Ok(y)
            }
            Layer::Dropout(d) => match mode {
                Mode::Infer => {
                    d.mask = None;
                    Ok(x)
                }
                Mode::Train => {
                    let mask = ops::dropout_mask(x.len(), d.rate, rng)?;
                    let mut y = x;
                    y.data_mut()
                        .iter_mut()
                        .zip(&mask)
                        .for_each(|(v, m)| *v *= m);
                    d.mask = Some(mask);
                    Ok(y)
                }
            },
            Layer::Activation { function, input } => {
                let y = apply_activation(*function, &x);
                *input = record.then_some(x);
                Ok(y)
            }
        }
    }

    fn infer(&self, x: Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d(c) => ops::conv2d_valid(&x, &c.kernels, &c.bias),
            Layer::Batchnorm(bn) => ops::batchnorm_infer(&x, &bn.params()),
            Layer::Maxpool2 { .. } => ops::maxpool2x2(&x),
            Layer::Flatten { .. } => {
                let n = x.shape()[0];
                let per: usize = x.shape()[1..].iter().product();
                x.reshape(&[n, per])
            }
            Layer::Dense(d) => ops::dense_forward(&x, &d.weights, &d.bias),
            Layer::Dropout(_) => Ok(x),
            Layer::Activation { function, .. } => Ok(apply_activation(*function, &x)),
        }
    }

    fn backward(&mut self, grad: Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let missing = |name: &str| {
            TensorError::State(format!(
                "{name} backward called before a training forward pass"
            ))
        };
        match self {
            Layer::Conv2d(c) => {
                let input = c.input.take().ok_or_else(|| missing("conv2d"))?;
                let (gin, gk, gb) =
                    ops::conv2d_backward(&input, &c.kernels, &grad, need_input_grad)?;
                accumulate(&mut c.kernels, gk.data());
                accumulate(&mut c.bias, gb.data());
                Ok(gin)
            }
            Layer::Batchnorm(bn) => {
                let cache = bn.cache.take().ok_or_else(|| missing("batchnorm"))?;
                let (gin, dgamma, dbeta) = ops::batchnorm_backward(&cache, bn.gamma.data(), &grad)?;
                accumulate(&mut bn.gamma, &dgamma);
                accumulate(&mut bn.beta, &dbeta);
                Ok(Some(gin))
            }
            Layer::Maxpool2 { indices } => {
                let idx = indices.take().ok_or_else(|| missing("maxpool2"))?;
                ops::maxpool2x2_backward(&idx, &grad).map(Some)
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.take().ok_or_else(|| missing("flatten"))?;
                grad.reshape(&shape).map(Some)
            }
            Layer::Dense(d) => {
                let input = d.input.take().ok_or_else(|| missing("dense"))?;
                let (gin, gw, gb) = ops::dense_backward(&input, &d.weights, &grad)?;
                accumulate(&mut d.weights, gw.data());
                accumulate(&mut d.bias, gb.data());
                Ok(Some(gin))
            }
            Layer::Dropout(d) => {
                let mask = d.mask.take().ok_or_else(|| missing("dropout"))?;
                let mut g = grad;
                g.data_mut()
                    .iter_mut()
                    .zip(&mask)
                    .for_each(|(v, m)| *v *= m);
                Ok(Some(g))
            }
            Layer::Activation { function, input } => {
                let x = input.take().ok_or_else(|| missing("activation"))?;
                let mut g = grad;
                if *function == ActivationKind::Relu {
                    g.data_mut().iter_mut().zip(x.data()).for_each(|(v, &xi)| {
                        if xi <= 0.0 {
                            *v = 0.0
                        }
                    });
                }
                Ok(Some(g))
            }
        }
    }
}

fn apply_activation(function: ActivationKind, x: &Tensor) -> Tensor {
    let mut y = x.clone();
    if function == ActivationKind::Relu {
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    y
}

fn accumulate(param: &mut Tensor, grad: &[f64]) {
    for (a, b) in param.grad_mut().iter_mut().zip(grad) {
        *a += b;
    }
}

/// A feed-forward stack of layers over fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(
        input_shape: &[usize],
        specs: Vec<LayerSpec>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in &specs {
            layers.push(Layer::build(spec, &shape, rng)?);
            shape = spec.output_shape(&shape)?;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            specs,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample output shape after every layer.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        shape_chain(&self.input_shape, &self.specs)
    }

    /// `(total, trainable, non_trainable)`.
    pub fn parameter_counts(&self) -> (usize, usize, usize) {
        let mut trainable = 0;
        let mut frozen = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => trainable += c.kernels.len() + c.bias.len(),
                Layer::Dense(d) => trainable += d.weights.len() + d.bias.len(),
                Layer::Batchnorm(b) => {
                    trainable += b.gamma.len() + b.beta.len();
                    frozen += b.running_mean.len() + b.running_var.len();
                }
                _ => {}
            }
        }
        (trainable + frozen, trainable, frozen)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.ndim() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(TensorError::Dimension(format!(
                "network expects batches of {:?}, got {:?}",
                self.input_shape,
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass over a batch. In training mode intermediates are kept
    /// for [`Network::backward`] and batch-norm running statistics move.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        x.clear_grad();
        for layer in &mut self.layers {
            x = layer.forward(x, mode, rng)?;
        }
        Ok(x)
    }

    /// Pure inference pass: running statistics, no dropout, no state change.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        x.clear_grad();
        for layer in &self.layers {
            x = layer.infer(x)?;
        }
        Ok(x)
    }

    /// Back-propagates `grad_output` (d loss / d network output) and adds the
    /// parameter gradients into each trainable tensor's gradient buffer.
    pub fn backward(&mut self, grad_output: Tensor) -> Result<()> {
        let mut g = grad_output;
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            match layer.backward(g, i > 0)? {
                Some(next) => g = next,
                // only the first layer may skip its input gradient
                None => return Ok(()),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for t in self.trainable_mut() {
            t.zero_grad();
        }
    }

    /// Trainable tensors in a fixed layer order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&mut c.kernels, &mut c.bias]),
                Layer::Batchnorm(b) => out.extend([&mut b.gamma, &mut b.beta]),
                Layer::Dense(d) => out.extend([&mut d.weights, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        self.named_tensors()
            .into_iter()
            .filter(|(name, _)| !name.ends_with("running_mean") && !name.ends_with("running_var"))
            .map(|(_, t)| t)
            .collect()
    }

    /// Every stored tensor, trainable or not, with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("{i:02}.{}.{s}", self.specs[i].name());
            match layer {
                Layer::Conv2d(c) => {
                    out.push((p("kernels"), &c.kernels));
                    out.push((p("bias"), &c.bias));
                }
                Layer::Batchnorm(b) => {
                    out.push((p("gamma"), &b.gamma));
                    out.push((p("beta"), &b.beta));
                    out.push((p("running_mean"), &b.running_mean));
                    out.push((p("running_var"), &b.running_var));
                }
                Layer::Dense(d) => {
                    out.push((p("weights"), &d.weights));
                    out.push((p("bias"), &d.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut tensors = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => tensors.extend([&mut c.kernels, &mut c.bias]),
                Layer::Batchnorm(b) => tensors.extend([
                    &mut b.gamma,
                    &mut b.beta,
                    &mut b.running_mean,
                    &mut b.running_var,
                ]),
                Layer::Dense(d) => tensors.extend([&mut d.weights, &mut d.bias]),
                _ => {}
            }
        }
        names.into_iter().zip(tensors).collect()
    }
}

/// Per-sample output shape after every spec, starting from `input`.
pub fn shape_chain(input: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    let mut shape = input.to_vec();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        shape = spec.output_shape(&shape)?;
        out.push(shape.clone());
    }
    Ok(out)
}

/// One training-mode forward/backward sweep under mean-squared-error loss.
///
/// Clears old gradients, leaves fresh ones on every trainable tensor and
/// returns the loss. Running statistics never receive a gradient.
pub fn reverse_gradients<R: Rng + ?Sized>(
    network: &mut Network,
    inputs: &Tensor,
    targets: &[f64],
    rng: &mut R,
) -> Result<f64> {
    network.zero_grad();
    let out = network.forward(inputs, Mode::Train, rng)?;
    if out.len() != targets.len() {
        return Err(TensorError::Dimension(format!(
            "network produced {} outputs for {} targets",
            out.len(),
            targets.len()
        )));
    }
    let count = targets.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = out
        .data()
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / count
        })
        .collect();
    network.backward(Tensor::new(out.shape().to_vec(), grad)?)?;
    Ok(loss / count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_weight(w: f64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(&[1], vec![LayerSpec::Dense { units: 1 }], &mut rng).unwrap();
        if let Layer::Dense(d) = &mut net.layers[0] {
            d.weights.data_mut()[0] = w;
            d.bias.data_mut()[0] = 0.0;
        }
        net
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        // loss(w) = (w·1 − 0)² so d loss / d w = 2w
        let mut net = one_weight(3.0);
        let x = Tensor::from_slice(&[1, 1], &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = reverse_gradients(&mut net, &x, &[0.0], &mut rng).unwrap();
        assert_eq!(loss, 9.0);
        let Layer::Dense(d) = &net.layers[0] else {
            unreachable!()
        };
        assert_eq!(d.weights.grad().unwrap(), &[6.0]);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut net = one_weight(2.0);
        let x = Tensor::from_slice(&[3, 1], &[1.0, -1.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = reverse_gradients(&mut net, &x, &[2.0, -2.0, 1.0], &mut rng).unwrap();
        assert_eq!(loss, 0.0);
        for t in net.trainable() {
            assert!(t.grad().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut net = one_weight(1.0);
        let err = net.backward(Tensor::zeros(&[1, 1])).unwrap_err();
        assert!(matches!(err, TensorError::State(_)));
    }

    #[test]
    fn running_stats_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = vec![
            LayerSpec::Dense { units: 3 },
            LayerSpec::Batchnorm {
                epsilon: 1e-5,
                momentum: 0.9,
            },
            LayerSpec::Dense { units: 1 },
        ];
        let mut net = Network::new(&[2], specs, &mut rng).unwrap();
        let x = Tensor::from_slice(&[4, 2], &[0.1, 0.2, -0.3, 0.5, 1.0, -1.0, 0.7, 0.0]).unwrap();
        reverse_gradients(&mut net, &x, &[1.0, 0.0, -1.0, 0.5], &mut rng).unwrap();
        for (name, t) in net.named_tensors() {
            let is_stat = name.ends_with("running_mean") || name.ends_with("running_var");
            assert_eq!(t.grad().is_none(), is_stat, "{name}");
        }
    }
}
