use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Tensor};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::netspec::{LayerKind, LayerSpec, NetworkSpec, PoolKind};

/// Kernel weights `[kernel][channel][kh][kw]` plus one bias per kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams<T> {
    pub kernels: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(kernels: usize, channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvParams {
            kernels,
            channels,
            kernel_h,
            kernel_w,
            weight: vec![T::ZERO; kernels * channels * kernel_h * kernel_w],
            bias: vec![T::ZERO; kernels],
        }
    }

    pub fn area(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    /// Offset of the `kh × kw` slice for `(kernel, channel)`.
    pub fn slice_offset(&self, kernel: usize, channel: usize) -> usize {
        (kernel * self.channels + channel) * self.area()
    }

    pub fn slice(&self, kernel: usize, channel: usize) -> &[T] {
        let o = self.slice_offset(kernel, channel);
        &self.weight[o..o + self.area()]
    }

    pub fn slice_mut(&mut self, kernel: usize, channel: usize) -> &mut [T] {
        let o = self.slice_offset(kernel, channel);
        let a = self.area();
        &mut self.weight[o..o + a]
    }
}

/// Weight matrix `[output][input]` plus bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseParams {
            inputs,
            outputs,
            weight: vec![T::ZERO; inputs * outputs],
            bias: vec![T::ZERO; outputs],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerParams<T> {
    Conv(ConvParams<T>),
    Dense(DenseParams<T>),
    None,
}

/// Trainable state of a network; `layers` is parallel to `spec.layers`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<T = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams<T>>,
    pub head: DenseParams<T>,
}

/// He-style bound for a uniform initializer: `sqrt(6 / fan_in)`.
pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

pub fn fill_he_uniform<T: Scalar, R: Rng + ?Sized>(values: &mut [T], fan_in: usize, rng: &mut R) {
    let bound = he_uniform_bound(fan_in);
    for v in values {
        *v = T::from_f64(rng.gen_range(-bound..bound));
    }
}

impl<T: Scalar> NetworkWeights<T> {
    /// All-zero weights shaped by `spec` (validated first).
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let spec = spec.clone().checked()?;
        let shapes = spec.feature_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut features = spec.input_shape.iter().product::<usize>();
        for (layer, shape) in spec.layers.iter().zip(&shapes) {
            let params = match layer.kind {
                LayerKind::Conv | LayerKind::SkipConnection => {
                    let s = layer.spatial.expect("validated");
                    LayerParams::Conv(ConvParams::zeros(
                        layer.kernels(),
                        layer.channels(),
                        s.kernel_h,
                        s.kernel_w,
                    ))
                }
                LayerKind::FullyConnected => {
                    LayerParams::Dense(DenseParams::zeros(features, layer.units.unwrap()))
                }
                LayerKind::Pool => LayerParams::None,
            };
            if layer.kind != LayerKind::SkipConnection {
                features = shape.iter().product();
            }
            layers.push(params);
        }
        let head = DenseParams::zeros(spec.head_inputs()?, spec.head_classes);
        Ok(NetworkWeights { spec, layers, head })
    }

    /// He-style fan-in uniform weights, zero biases.
    pub fn he_init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        for p in w.layers.iter_mut() {
            match p {
                LayerParams::Conv(c) => {
                    let fan_in = c.channels * c.area();
                    fill_he_uniform(&mut c.weight, fan_in, rng);
                }
                LayerParams::Dense(d) => fill_he_uniform(&mut d.weight, d.inputs, rng),
                LayerParams::None => {}
            }
        }
        let fan_in = w.head.inputs;
        fill_he_uniform(&mut w.head.weight, fan_in, rng);
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        let map_conv = |c: &ConvParams<T>| ConvParams::zeros(c.kernels, c.channels, c.kernel_h, c.kernel_w);
        NetworkWeights {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|p| match p {
                    LayerParams::Conv(c) => LayerParams::Conv(map_conv(c)),
                    LayerParams::Dense(d) => LayerParams::Dense(DenseParams::zeros(d.inputs, d.outputs)),
                    LayerParams::None => LayerParams::None,
                })
                .collect(),
            head: DenseParams::zeros(self.head.inputs, self.head.outputs),
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        let dense = |d: &DenseParams<T>| DenseParams {
            inputs: d.inputs,
            outputs: d.outputs,
            weight: cv(&d.weight),
            bias: cv(&d.bias),
        };
        NetworkWeights {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|p| match p {
                    LayerParams::Conv(c) => LayerParams::Conv(ConvParams {
                        kernels: c.kernels,
                        channels: c.channels,
                        kernel_h: c.kernel_h,
                        kernel_w: c.kernel_w,
                        weight: cv(&c.weight),
                        bias: cv(&c.bias),
                    }),
                    LayerParams::Dense(d) => LayerParams::Dense(dense(d)),
                    LayerParams::None => LayerParams::None,
                })
                .collect(),
            head: dense(&self.head),
        }
    }

    pub fn conv(&self, layer_id: usize) -> Option<&ConvParams<T>> {
        let pos = self.spec.position(layer_id)?;
        match &self.layers[pos] {
            LayerParams::Conv(c) => Some(c),
            _ => None,
        }
    }

    pub fn conv_mut(&mut self, layer_id: usize) -> Option<&mut ConvParams<T>> {
        let pos = self.spec.position(layer_id)?;
        match &mut self.layers[pos] {
            LayerParams::Conv(c) => Some(c),
            _ => None,
        }
    }

    /// Every parameter buffer in a fixed order (layers, then head).
    pub fn buffers(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for p in &self.layers {
            match p {
                LayerParams::Conv(c) => {
                    out.push(&c.weight);
                    out.push(&c.bias);
                }
                LayerParams::Dense(d) => {
                    out.push(&d.weight);
                    out.push(&d.bias);
                }
                LayerParams::None => {}
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for p in self.layers.iter_mut() {
            match p {
                LayerParams::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                LayerParams::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                LayerParams::None => {}
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Checks that every buffer matches the spec's shapes.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = Self::zeros(&self.spec)?;
        if self.layers.len() != expected.layers.len() {
            return Err(Error::Shape {
                layer_id: 0,
                reason: format!(
                    "{} parameter layers for a {}-layer spec",
                    self.layers.len(),
                    expected.layers.len()
                ),
            });
        }
        for ((layer, got), want) in self.spec.layers.iter().zip(&self.layers).zip(&expected.layers) {
            let ok = match (got, want) {
                (LayerParams::Conv(a), LayerParams::Conv(b)) => {
                    a.kernels == b.kernels
                        && a.channels == b.channels
                        && a.kernel_h == b.kernel_h
                        && a.kernel_w == b.kernel_w
                        && a.weight.len() == b.weight.len()
                        && a.bias.len() == b.bias.len()
                }
                (LayerParams::Dense(a), LayerParams::Dense(b)) => {
                    a.inputs == b.inputs
                        && a.outputs == b.outputs
                        && a.weight.len() == b.weight.len()
                        && a.bias.len() == b.bias.len()
                }
                (LayerParams::None, LayerParams::None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Shape {
                    layer_id: layer.layer_id,
                    reason: "parameter shape does not match spec".into(),
                });
            }
        }
        let h = &self.head;
        if h.inputs != expected.head.inputs
            || h.outputs != expected.head.outputs
            || h.weight.len() != h.inputs * h.outputs
            || h.bias.len() != h.outputs
        {
            return Err(Error::Shape {
                layer_id: self.spec.layers.len() + 1,
                reason: "head shape does not match spec".into(),
            });
        }
        Ok(())
    }

    /// `self ← self + scale · other`.
    pub fn axpy(&mut self, scale: T, other: &NetworkWeights<T>) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * *y;
            }
        }
    }

    /// Replaces the head with a fresh He-initialized one for `classes` outputs.
    pub fn reset_head<R: Rng + ?Sized>(&mut self, classes: usize, rng: &mut R) {
        self.spec.head_classes = classes;
        let inputs = self.head.inputs;
        self.head = DenseParams::zeros(inputs, classes);
        fill_he_uniform(&mut self.head.weight, inputs, rng);
    }
}

/// Per-layer activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `values[0]` is the network input; main-path layers append their output.
    pub values: Vec<Tensor<T>>,
    /// Slot each layer reads from / writes to (`usize::MAX` for skip layers).
    pub in_slot: Vec<usize>,
    pub out_slot: Vec<usize>,
    pool_argmax: Vec<Option<Vec<u32>>>,
    pub logits: Tensor<T>,
}

impl<T: Scalar> Trace<T> {
    /// Output of layer `layer_id` (post-activation for conv/fc).
    pub fn output(&self, spec: &NetworkSpec, layer_id: usize) -> Option<&Tensor<T>> {
        let pos = spec.position(layer_id)?;
        self.values.get(self.out_slot[pos])
    }

    /// Which ReLUs are active and which max-pool inputs won, as one flat
    /// list. Two traces with equal patterns lie in the same linear region.
    pub fn activation_pattern(&self, spec: &NetworkSpec) -> Vec<u32> {
        let mut out = Vec::new();
        for (pos, layer) in spec.layers.iter().enumerate() {
            if let Some(arg) = &self.pool_argmax[pos] {
                out.extend_from_slice(arg);
            }
            if layer.relu && self.out_slot[pos] != usize::MAX {
                out.extend(self.values[self.out_slot[pos]].data.iter().map(|&v| (v > T::ZERO) as u32));
            }
        }
        out
    }
}

fn conv_of<'a, T>(p: &'a LayerParams<T>, layer: &LayerSpec) -> Result<&'a ConvParams<T>> {
    match p {
        LayerParams::Conv(c) => Ok(c),
        _ => Err(Error::Shape {
            layer_id: layer.layer_id,
            reason: "expected conv parameters".into(),
        }),
    }
}

impl<T: Scalar> NetworkWeights<T> {
    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape;
        if [c, h, w] != self.spec.input_shape || x.batch() == 0 {
            return Err(Error::Shape {
                layer_id: 0,
                reason: format!(
                    "input {:?} does not match spec input {:?}",
                    x.shape, self.spec.input_shape
                ),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(x)?.logits)
    }

    /// Forward pass keeping every intermediate needed for backprop.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        self.check_shapes()?;
        let spec = &self.spec;
        let n_layers = spec.layers.len();
        let mut values = vec![x.clone()];
        let mut in_slot = vec![usize::MAX; n_layers];
        let mut out_slot = vec![usize::MAX; n_layers];
        let mut pool_argmax = vec![None; n_layers];
        let mut cur = 0usize;
        for (pos, layer) in spec.layers.iter().enumerate() {
            let input = &values[cur];
            let out = match layer.kind {
                LayerKind::Conv => {
                    let c = conv_of(&self.layers[pos], layer)?;
                    let s = layer.spatial.expect("validated");
                    let mut z = ops::conv_forward(input, &c.weight, &c.bias, c.kernels, &s);
                    for (spos, skip) in spec.layers.iter().enumerate() {
                        let Some(ep) = skip.skip_endpoints else { continue };
                        if ep.target != layer.layer_id {
                            continue;
                        }
                        let src_pos = spec.position(ep.source).expect("validated");
                        let sc = conv_of(&self.layers[spos], skip)?;
                        let ss = skip.spatial.expect("validated");
                        let contrib =
                            ops::conv_forward(&values[out_slot[src_pos]], &sc.weight, &sc.bias, sc.kernels, &ss);
                        if contrib.shape != z.shape {
                            return Err(Error::Shape {
                                layer_id: skip.layer_id,
                                reason: format!("skip output {:?} vs target {:?}", contrib.shape, z.shape),
                            });
                        }
                        z.add_assign(&contrib);
                    }
                    if layer.relu {
                        ops::relu_in_place(&mut z);
                    }
                    z
                }
                LayerKind::Pool => match layer.pool {
                    Some(PoolKind::Max2x2) => {
                        let (y, arg) = ops::maxpool_forward(input);
                        pool_argmax[pos] = Some(arg);
                        y
                    }
                    _ => ops::global_avg_forward(input),
                },
                LayerKind::FullyConnected => {
                    let LayerParams::Dense(d) = &self.layers[pos] else {
                        return Err(Error::Shape {
                            layer_id: layer.layer_id,
                            reason: "expected dense parameters".into(),
                        });
                    };
                    let mut y = ops::dense_forward(input, &d.weight, &d.bias, d.outputs);
                    if layer.relu {
                        ops::relu_in_place(&mut y);
                    }
                    y
                }
                LayerKind::SkipConnection => continue,
            };
            in_slot[pos] = cur;
            values.push(out);
            cur = values.len() - 1;
            out_slot[pos] = cur;
        }
        let logits = ops::dense_forward(&values[cur], &self.head.weight, &self.head.bias, self.head.outputs);
        Ok(Trace {
            values,
            in_slot,
            out_slot,
            pool_argmax,
            logits,
        })
    }

    /// Reverse pass from `grad_logits`; returns parameter gradients shaped
    /// like `self`.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> NetworkWeights<T> {
        let spec = &self.spec;
        let mut grads = self.zeros_like();
        let mut gslots: Vec<Option<Tensor<T>>> = vec![None; trace.values.len()];
        let last = trace.values.len() - 1;
        let dfeat = ops::dense_backward(
            &trace.values[last],
            &self.head.weight,
            self.head.outputs,
            grad_logits,
            &mut grads.head.weight,
            &mut grads.head.bias,
        );
        gslots[last] = Some(dfeat);

        fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for pos in (0..spec.layers.len()).rev() {
            let layer = &spec.layers[pos];
            if layer.kind == LayerKind::SkipConnection {
                continue;
            }
            let (i, o) = (trace.in_slot[pos], trace.out_slot[pos]);
            let Some(mut g) = gslots[o].take() else { continue };
            let input = &trace.values[i];
            let need_input = i != 0;
            let dx = match layer.kind {
                LayerKind::Conv => {
                    if layer.relu {
                        ops::relu_backward_in_place(&trace.values[o], &mut g);
                    }
                    for (spos, skip) in spec.layers.iter().enumerate() {
                        let Some(ep) = skip.skip_endpoints else { continue };
                        if ep.target != layer.layer_id {
                            continue;
                        }
                        let src_pos = spec.position(ep.source).expect("validated");
                        let src_slot = trace.out_slot[src_pos];
                        let LayerParams::Conv(sc) = &self.layers[spos] else { unreachable!() };
                        let LayerParams::Conv(gsc) = &mut grads.layers[spos] else { unreachable!() };
                        let ss = skip.spatial.expect("validated");
                        let dsrc = ops::conv_backward(
                            &trace.values[src_slot],
                            &sc.weight,
                            sc.kernels,
                            &ss,
                            &g,
                            &mut gsc.weight,
                            &mut gsc.bias,
                            true,
                        )
                        .expect("input gradient requested");
                        accumulate(&mut gslots[src_slot], dsrc);
                    }
                    let LayerParams::Conv(c) = &self.layers[pos] else { unreachable!() };
                    let LayerParams::Conv(gc) = &mut grads.layers[pos] else { unreachable!() };
                    let s = layer.spatial.expect("validated");
                    ops::conv_backward(input, &c.weight, c.kernels, &s, &g, &mut gc.weight, &mut gc.bias, need_input)
                }
                LayerKind::Pool => Some(match &trace.pool_argmax[pos] {
                    Some(arg) => ops::maxpool_backward(input.shape, arg, &g),
                    None => ops::global_avg_backward(input.shape, &g),
                }),
                LayerKind::FullyConnected => {
                    if layer.relu {
                        ops::relu_backward_in_place(&trace.values[o], &mut g);
                    }
                    let LayerParams::Dense(d) = &self.layers[pos] else { unreachable!() };
                    let LayerParams::Dense(gd) = &mut grads.layers[pos] else { unreachable!() };
                    Some(ops::dense_backward(input, &d.weight, d.outputs, &g, &mut gd.weight, &mut gd.bias))
                }
                LayerKind::SkipConnection => unreachable!(),
            };
            if let (Some(dx), true) = (dx, need_input) {
                let dx = if dx.shape == trace.values[i].shape {
                    dx
                } else {
                    // dense layers see a flattened view of their input
                    Tensor::from_vec(trace.values[i].shape, dx.data)
                };
                accumulate(&mut gslots[i], dx);
            }
        }
        grads
    }

    /// Mean cross-entropy, parameter gradients and the number of correct
    /// predictions for one batch.
    pub fn loss_and_grad(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, NetworkWeights<T>, usize)> {
        self.check_labels(labels, x.batch())?;
        let trace = self.forward_trace(x)?;
        let (loss, dlogits) = ops::softmax_cross_entropy(&trace.logits, labels);
        let correct = ops::argmax_rows(&trace.logits)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let grads = self.backward(&trace, &dlogits);
        Ok((loss, grads, correct))
    }

    pub fn loss(&self, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        self.check_labels(labels, x.batch())?;
        let logits = self.forward(x)?;
        Ok(ops::softmax_cross_entropy(&logits, labels).0)
    }

    fn check_labels(&self, labels: &[usize], batch: usize) -> Result<()> {
        if labels.len() != batch {
            return Err(Error::Shape {
                layer_id: 0,
                reason: format!("{} labels for a batch of {batch}", labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= self.spec.head_classes) {
            return Err(Error::Shape {
                layer_id: 0,
                reason: format!("label {bad} out of range for {} classes", self.spec.head_classes),
            });
        }
        Ok(())
    }
}
