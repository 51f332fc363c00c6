//! Central finite-difference verification of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{LayerParams, NetworkWeights};
use super::ops::{softmax_cross_entropy, Tensor};
use crate::error::Result;
use crate::netspec::{LayerKind, NetworkSpec};
use crate::seed;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckEntry {
    /// Layer id, or `0` for the classification head.
    pub layer_id: usize,
    pub kind: String,
    pub buffer: String,
    pub index: usize,
    /// Analytic gradient from the f32 training path.
    pub analytic: f64,
    /// Analytic gradient of the same network evaluated in f64.
    pub analytic_f64: f64,
    pub numeric: f64,
    /// Relative error of the f64 analytic gradient.
    pub rel_error: f64,
    pub rel_error_f32: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub entries: Vec<GradCheckEntry>,
    /// Coordinates redrawn because `±ε` changed a ReLU or max-pool switch.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn kinds(&self) -> Vec<String> {
        let mut k: Vec<String> = self.entries.iter().map(|e| e.kind.clone()).collect();
        k.sort();
        k.dedup();
        k
    }
}

/// `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - n).abs() / denom
    }
}

struct Target {
    layer_id: usize,
    kind: &'static str,
    buffer: &'static str,
    pos: Option<usize>,
    bias: bool,
    len: usize,
}

fn targets(w: &NetworkWeights<f32>) -> Vec<Target> {
    let mut out = Vec::new();
    for (pos, (layer, p)) in w.spec.layers.iter().zip(&w.layers).enumerate() {
        let kind = match layer.kind {
            LayerKind::Conv => "conv",
            LayerKind::SkipConnection => "skip",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::Pool => continue,
        };
        let (wl, bl) = match p {
            LayerParams::Conv(c) => (c.weight.len(), c.bias.len()),
            LayerParams::Dense(d) => (d.weight.len(), d.bias.len()),
            LayerParams::None => continue,
        };
        out.push(Target { layer_id: layer.layer_id, kind, buffer: "weight", pos: Some(pos), bias: false, len: wl });
        out.push(Target { layer_id: layer.layer_id, kind, buffer: "bias", pos: Some(pos), bias: true, len: bl });
    }
    out.push(Target { layer_id: 0, kind: "head", buffer: "weight", pos: None, bias: false, len: w.head.weight.len() });
    out.push(Target { layer_id: 0, kind: "head", buffer: "bias", pos: None, bias: true, len: w.head.bias.len() });
    out
}

fn buffer_mut<'a, T>(w: &'a mut NetworkWeights<T>, t: &Target) -> &'a mut Vec<T> {
    match t.pos {
        None => {
            if t.bias {
                &mut w.head.bias
            } else {
                &mut w.head.weight
            }
        }
        Some(pos) => match &mut w.layers[pos] {
            LayerParams::Conv(c) => {
                if t.bias {
                    &mut c.bias
                } else {
                    &mut c.weight
                }
            }
            LayerParams::Dense(d) => {
                if t.bias {
                    &mut d.bias
                } else {
                    &mut d.weight
                }
            }
            LayerParams::None => unreachable!(),
        },
    }
}

fn buffer<'a, T>(w: &'a NetworkWeights<T>, t: &Target) -> &'a [T] {
    match t.pos {
        None => {
            if t.bias {
                &w.head.bias
            } else {
                &w.head.weight
            }
        }
        Some(pos) => match &w.layers[pos] {
            LayerParams::Conv(c) => {
                if t.bias {
                    &c.bias
                } else {
                    &c.weight
                }
            }
            LayerParams::Dense(d) => {
                if t.bias {
                    &d.bias
                } else {
                    &d.weight
                }
            }
            LayerParams::None => unreachable!(),
        },
    }
}

/// Checks `coords` random coordinates of every weight buffer (and up to
/// `coords` of every bias buffer) of a He-initialized network with random
/// biases on a random batch of `batch` images. Central differences are
/// taken in f64; coordinates whose `±ε` probes land in different ReLU or
/// max-pool regions are redrawn, since the loss is not differentiable
/// across them.
pub fn grad_check(
    spec: &NetworkSpec,
    seed_value: u64,
    coords: usize,
    batch: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed_value, &[0x6763]);
    let mut w32 = NetworkWeights::<f32>::he_init(spec, &mut rng)?;
    // buffers alternate weight, bias; non-zero biases exercise their paths
    for b in w32.buffers_mut().into_iter().skip(1).step_by(2) {
        for v in b.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    let [c, h, wd] = spec.input_shape;
    let x32 = Tensor::from_vec(
        [batch, c, h, wd],
        (0..batch * c * h * wd).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
    );
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..spec.head_classes)).collect();

    let (_, g32, _) = w32.loss_and_grad(&x32, &labels)?;
    let w64 = w32.cast::<f64>();
    let x64 = x32.cast::<f64>();
    let (_, g64, _) = w64.loss_and_grad(&x64, &labels)?;
    let base_pattern = w64.forward_trace(&x64)?.activation_pattern(spec);

    let mut entries = Vec::new();
    let mut kinks_skipped = 0;
    for t in targets(&w32) {
        if t.len == 0 {
            continue;
        }
        let want = if t.bias { coords.min(t.len) } else { coords };
        let mut found = 0;
        let mut attempts = 0;
        while found < want && attempts < 50 * want {
            attempts += 1;
            let idx = rng.gen_range(0..t.len);
            let mut probe = w64.clone();
            let base = buffer(&w64, &t)[idx];
            buffer_mut(&mut probe, &t)[idx] = base + epsilon;
            let up = probe.forward_trace(&x64)?;
            let up_pattern = up.activation_pattern(spec);
            buffer_mut(&mut probe, &t)[idx] = base - epsilon;
            let down = probe.forward_trace(&x64)?;
            if up_pattern != base_pattern || down.activation_pattern(spec) != base_pattern {
                kinks_skipped += 1;
                continue;
            }
            let loss_up = softmax_cross_entropy(&up.logits, &labels).0;
            let loss_down = softmax_cross_entropy(&down.logits, &labels).0;
            let numeric = (loss_up - loss_down) / (2.0 * epsilon);
            let analytic = buffer(&g32, &t)[idx] as f64;
            let analytic_f64 = buffer(&g64, &t)[idx];
            entries.push(GradCheckEntry {
                layer_id: t.layer_id,
                kind: t.kind.to_string(),
                buffer: t.buffer.to_string(),
                index: idx,
                analytic,
                analytic_f64,
                numeric,
                rel_error: relative_error(analytic_f64, numeric),
                rel_error_f32: relative_error(analytic, numeric),
            });
            found += 1;
        }
    }
    Ok(GradCheckReport {
        seed: seed_value,
        epsilon,
        entries,
        kinks_skipped,
    })
}
