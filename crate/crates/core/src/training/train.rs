use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::optim::{adam_step, clip_grad_norm, cosine_lr, mse_loss, AdamState, EarlyStopping};
use crate::autodiff::Tape;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::MCSTModel;
use crate::ssm::DropoutCtx;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_min: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 100,
            patience: 15,
            batch_size: 64,
            lr_min: 1e-5,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return Err(Error::Config(format!(
                "need 0 < lr_min <= lr_init (got {} and {})",
                self.lr_min, self.lr_init
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::Config("betas must lie in [0, 1) and adam_eps be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation MAE. `on_epoch` sees each record as it is made.
pub fn train(
    model: &mut MCSTModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.nodes() != model.cfg.n_nodes {
        return Err(Error::Config(format!(
            "model has {} nodes, data has {}",
            model.cfg.n_nodes,
            data.nodes()
        )));
    }
    let (t_in, t_out) = (model.cfg.t_in, model.cfg.t_out);
    let train_w = data.windows(Split::Train, t_in, t_out)?;
    let val_w = data.windows(Split::Val, t_in, t_out)?;
    let mut adam = AdamState::new(&model.params, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<Vec<Tensor>> = None;
    let mut history = Vec::new();
    let mut step: u64 = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr_init, cfg.lr_min);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (i, batch) in train_w.batches(cfg.batch_size, Some((cfg.seed, epoch as u64)))?.enumerate() {
            let dropout = DropoutCtx {
                rate: model.cfg.dropout,
                seed: cfg.seed,
                step,
            };
            let loss = {
                let tape = Tape::new();
                let p = model.params.bind(&tape, true);
                let diverged = |e: Error| Error::Divergence {
                    epoch,
                    step: i,
                    detail: e.to_string(),
                };
                let pred = model
                    .forward(&p, tape.constant(batch.x.clone()), &batch.tod_idx, &batch.dow_idx, Some(&dropout))
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => diverged(e),
                        other => other,
                    })?;
                let loss = mse_loss(pred, tape.constant(batch.y.clone()))?;
                let value = loss.value().item()?;
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step: i,
                        detail: format!("loss is {value}"),
                    });
                }
                let mut grads = tape.backward(loss)?;
                model.params.absorb_grads(&p, &mut grads);
                value
            };
            if let Some(c) = cfg.clip_norm {
                let norm = clip_grad_norm(&mut model.params, c);
                if !norm.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step: i,
                        detail: format!("gradient norm is {norm}"),
                    });
                }
            }
            adam_step(&mut model.params, &mut adam, lr)?;
            step += 1;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let val = evaluate(model, &val_w, &data.normalizer, cfg.batch_size).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence {
                epoch,
                step: step as usize,
                detail: format!("validation: {e}"),
            },
            other => other,
        })?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_mae: val.mae(),
            val_rmse: val.rmse(),
            val_mape: val.mape(),
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val mae {:.4}, lr {:.2e}",
            record.train_loss,
            record.val_mae,
            lr
        );
        on_epoch(&record);
        history.push(record);
        let decision = stopper.update(epoch, val.mae());
        if decision.improved {
            best = Some(model.params.snapshot());
        }
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    let best_epoch = stopper
        .best_epoch
        .ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    if let Some(values) = best {
        model.params.restore(&values);
    }
    model.params.zero_grads();
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_mae: stopper.best,
        stopped_early,
    })
}
