use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::NetworkWeights;
use super::ops::{argmax_rows, Tensor};
use crate::dataset::SampleSet;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Classical momentum coefficient; 0 disables it.
    #[serde(default)]
    pub momentum: f32,
}

impl Default for TrainBudget {
    fn default() -> Self {
        TrainBudget {
            epochs: 3,
            lr: 0.05,
            batch_size: 32,
            seed: 0,
            momentum: 0.0,
        }
    }
}

/// SGD with optional momentum over the whole parameter set.
pub struct Sgd {
    lr: f32,
    momentum: f32,
    velocity: Option<NetworkWeights<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, weights: &mut NetworkWeights<f32>, grads: &NetworkWeights<f32>) {
        if self.momentum == 0.0 {
            weights.axpy(-self.lr, grads);
            return;
        }
        let v = self.velocity.get_or_insert_with(|| grads.zeros_like());
        for (vb, gb) in v.buffers_mut().into_iter().zip(grads.buffers()) {
            for (x, g) in vb.iter_mut().zip(gb) {
                *x = self.momentum * *x + *g;
            }
        }
        weights.axpy(-self.lr, v);
    }
}

/// One SGD update. The returned loss is the batch loss before the update.
pub fn train_step(
    weights: &mut NetworkWeights<f32>,
    x: &Tensor<f32>,
    labels: &[usize],
    lr: f32,
) -> Result<f64> {
    if !(lr >= 0.0) {
        return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
    }
    let (loss, grads, _) = weights.loss_and_grad(x, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { loss });
    }
    if lr > 0.0 {
        weights.axpy(-lr, &grads);
    }
    Ok(loss)
}

fn check_labels(weights: &NetworkWeights<f32>, data: &SampleSet) -> Result<()> {
    if data.classes > weights.spec.head_classes {
        return Err(Error::Shape {
            layer_id: weights.spec.layers.len() + 1,
            reason: format!(
                "task has {} classes but the head has {}",
                data.classes, weights.spec.head_classes
            ),
        });
    }
    Ok(())
}

/// Mini-batch SGD for `budget.epochs` epochs with a seeded shuffle. Returns
/// the running training accuracy of the final epoch (or the accuracy of the
/// untouched weights when `epochs == 0`).
pub fn train(
    mut weights: NetworkWeights<f32>,
    data: &SampleSet,
    budget: &TrainBudget,
) -> Result<(NetworkWeights<f32>, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    check_labels(&weights, data)?;
    if budget.epochs == 0 {
        let acc = evaluate(&weights, data)?;
        return Ok((weights, acc));
    }
    let mut rng = seed::from_seed(budget.seed);
    let mut opt = Sgd::new(budget.lr, budget.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = budget.batch_size.max(1);
    let mut last_acc = 0.0;
    for _ in 0..budget.epochs {
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for chunk in order.chunks(bs) {
            let (x, y) = data.batch(chunk);
            let (loss, grads, c) = weights.loss_and_grad(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss });
            }
            correct += c;
            opt.step(&mut weights, &grads);
        }
        last_acc = correct as f64 / data.len() as f64;
    }
    if !weights.all_finite() {
        return Err(Error::NonFiniteLoss { loss: f64::NAN });
    }
    Ok((weights, last_acc))
}

/// Runs exactly `iterations` SGD updates, cycling through seeded shuffles
/// of the data. `on_iteration(done, &weights)` is called after every update
/// and once before the first (with `done == 0`).
pub fn train_iterations(
    weights: &mut NetworkWeights<f32>,
    data: &SampleSet,
    iterations: usize,
    budget: &TrainBudget,
    mut on_iteration: impl FnMut(usize, &NetworkWeights<f32>) -> Result<()>,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    check_labels(weights, data)?;
    let mut rng = seed::from_seed(budget.seed);
    let mut opt = Sgd::new(budget.lr, budget.momentum);
    let bs = budget.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    on_iteration(0, weights)?;
    for it in 1..=iterations {
        let mut batch = Vec::with_capacity(bs);
        while batch.len() < bs.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (x, y) = data.batch(&batch);
        let (loss, grads, _) = weights.loss_and_grad(&x, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { loss });
        }
        opt.step(weights, &grads);
        on_iteration(it, weights)?;
    }
    Ok(())
}

const EVAL_BATCH: usize = 128;

/// Top-1 accuracy.
pub fn evaluate(weights: &NetworkWeights<f32>, data: &SampleSet) -> Result<f64> {
    Ok(correct_count(weights, data)? as f64 / data.len() as f64)
}

pub fn correct_count(weights: &NetworkWeights<f32>, data: &SampleSet) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let positions: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let logits = weights.forward(&x)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct)
}
