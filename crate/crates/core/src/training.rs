//! Loss, Adagrad optimizer, the epoch loop with early stopping, and the CNN
//! freeze/finetune schedule.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Sample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SquaredError,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without validation improvement.
    pub patience: usize,
    /// CNN parameters are frozen for this many initial epochs, then finetuned.
    pub cnn_freeze_epochs: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-4,
            max_epochs: 150,
            patience: 6,
            cnn_freeze_epochs: 20,
            seed: 0,
            loss_kind: LossKind::SquaredError,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample squared error over the two output channels.
pub fn loss(pred: (f64, f64), target: (f64, f64)) -> f64 {
    let ds = pred.0 - target.0;
    let de = pred.1 - target.1;
    ds * ds + de * de
}

/// Adagrad state: per-parameter sum of squared gradients.
#[derive(Debug, Clone)]
pub struct Adagrad {
    acc: Vec<Tensor>,
    pub epsilon: f64,
}

impl Adagrad {
    pub fn new(store: &ParamStore) -> Self {
        let acc = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Adagrad { acc, epsilon: 1e-8 }
    }

    pub fn accumulator(&self, id: ParamId) -> &Tensor {
        &self.acc[id.0]
    }

    /// acc += g²; θ -= lr · g / (sqrt(acc) + ε); gradients are then zeroed.
    /// Parameters in `frozen` are left untouched (value, accumulator, and
    /// gradient alike).
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        lr: f64,
        frozen: &HashSet<ParamId>,
    ) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            if frozen.contains(&id) {
                let p = store.get_mut(id);
                p.grad = Tensor::zeros(p.value.shape().to_vec());
                continue;
            }
            let p = store.get_mut(id);
            if !p.grad.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter '{}'",
                    p.name
                )));
            }
            let acc = &mut self.acc[id.0];
            let eps = self.epsilon;
            for i in 0..p.grad.len() {
                let g = p.grad.data()[i];
                let a = acc.data()[i] + g * g;
                acc.data_mut()[i] = a;
                p.value.data_mut()[i] -= lr * g / (a.sqrt() + eps);
            }
            p.grad = Tensor::zeros(p.value.shape().to_vec());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    /// CSV form: epoch,train_loss,val_loss,seconds. With `with_timing` off
    /// the seconds column is written as 0.000 so same-seed runs are
    /// byte-identical.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.epochs {
            let secs = if with_timing { r.seconds } else { 0.0 };
            out.push_str(&format!(
                "{},{:.12},{:.12},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, secs
            ));
        }
        out
    }
}

pub fn mean_loss(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument("loss over empty sample set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let pred = params.forward(s)?;
        total += loss(pred, (s.target[0], s.target[1]));
    }
    Ok(total / samples.len() as f64)
}

/// Minibatch training with Adagrad, early stopping, and the CNN freeze
/// schedule. Returns the history; `params` is left at the best-validation
/// checkpoint.
pub fn fit(
    params: &mut ModelParams,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument("fit needs non-empty train and validation sets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adagrad::new(&params.store);
    let cnn_ids: HashSet<ParamId> = params.cnn_param_ids().into_iter().collect();
    let no_freeze = HashSet::new();

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_values: Vec<Tensor> = Vec::new();
    let mut stale = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let frozen = if epoch <= cfg.cnn_freeze_epochs {
            &cnn_ids
        } else {
            &no_freeze
        };

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            params.store.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let sample = &train[idx];
                let mut g = Graph::new();
                let l = params.loss_graph(&mut g, sample)?;
                let lv = g.value(l).item()?;
                if !lv.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged at epoch {epoch} (non-finite loss)"
                    )));
                }
                batch_loss += lv;
                g.backward(l, 1.0 / batch.len() as f64, &mut params.store)?;
            }
            opt.step(&mut params.store, cfg.learning_rate, frozen)?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = mean_loss(params, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch} (non-finite validation loss)"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_values = params.store.iter().map(|(_, p)| p.value.clone()).collect();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    // restore the best checkpoint
    if !best_values.is_empty() {
        for (i, id) in params.store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            params.store.get_mut(id).value = best_values[i].clone();
        }
    }
    Ok(TrainHistory { epochs: history, best_epoch, best_val_loss: best_val })
}
