//! Pinball losses, optimisers and the mini-batch training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{SeriesWindow, WindowSet};
use crate::error::{Error, Result};
use crate::model::CausalForecaster;
use crate::params::{ParamContainer, ParamStore};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// `(q - 1{y < yhat}) (y - yhat)`.
pub fn quantile_loss(y: f64, yhat: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("quantile level {q} outside (0, 1)")));
    }
    let below = if y < yhat { 1.0 } else { 0.0 };
    Ok((q - below) * (y - yhat))
}

/// Composite loss with its `per[j][k]` breakdown by quantile `j` and
/// horizon step `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CqlBreakdown {
    pub total: f64,
    pub per: Vec<Vec<f64>>,
}

/// Sum of quantile losses over windows, levels and horizon steps.
/// `forecasts[w]` is `horizon x |Q|` and `targets[w]` has `horizon` entries.
pub fn composite_quantile_loss(
    targets: &[Vec<f64>],
    forecasts: &[Tensor],
    quantiles: &[f64],
) -> Result<CqlBreakdown> {
    if targets.len() != forecasts.len() {
        return Err(Error::shape(format!(
            "{} target windows for {} forecasts",
            targets.len(),
            forecasts.len()
        )));
    }
    let tau = targets.first().map_or(0, Vec::len);
    let mut per = vec![vec![0.0; tau]; quantiles.len()];
    for (y, f) in targets.iter().zip(forecasts) {
        if y.len() != tau || f.shape() != (tau, quantiles.len()) {
            return Err(Error::shape(format!(
                "forecast {:?} for {} targets and {} levels",
                f.shape(),
                y.len(),
                quantiles.len()
            )));
        }
        for (j, &q) in quantiles.iter().enumerate() {
            for k in 0..tau {
                per[j][k] += quantile_loss(y[k], f.get(k, j), q)?;
            }
        }
    }
    let total = per.iter().flatten().sum();
    Ok(CqlBreakdown { total, per })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Global gradient norm cap; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            early_stop_patience: 10,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config(format!("clip norm {}", self.clip_norm)));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimiser moments, serialisable for resuming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Option<ParamContainer>,
    pub v: Option<ParamContainer>,
}

pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn from_state(state: &OptimizerState, lr: f64, params: &ParamStore) -> Result<Self> {
        let mut opt = Self::new(state.kind, lr, params);
        opt.step = state.step;
        if let (Some(m), Some(v)) = (&state.m, &state.v) {
            opt.m = ParamStore::from_container(m)?;
            opt.v = ParamStore::from_container(v)?;
            let same = |s: &ParamStore| {
                s.len() == params.len()
                    && s.iter().zip(params.iter()).all(|(a, b)| a.0 == b.0 && a.1.shape() == b.1.shape())
            };
            if !same(&opt.m) || !same(&opt.v) {
                return Err(Error::config("optimizer state does not match the parameters"));
            }
        }
        Ok(opt)
    }

    pub fn state(&self) -> OptimizerState {
        let adam = self.kind == OptimizerKind::Adam;
        OptimizerState {
            kind: self.kind,
            step: self.step,
            m: adam.then(|| self.m.to_container()),
            v: adam.then(|| self.v.to_container()),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, p) in params.iter_mut() {
                    p.add_scaled(grads.get(id)?, -lr);
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.step as i32);
                let c2 = 1.0 - BETA2.powi(self.step as i32);
                for (id, p) in params.iter_mut() {
                    let g = grads.get(id)?.data();
                    let m = self.m.get_mut(id)?.data_mut();
                    let v = self.v.get_mut(id)?.data_mut();
                    for (k, w) in p.data_mut().iter_mut().enumerate() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so that its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, t)| t.squared_norm()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.map_values(|v| v * s);
    }
    norm
}

/// Composite loss of one window recorded on `g`.
pub fn window_loss(
    model: &CausalForecaster,
    g: &mut Graph,
    params: &ParamStore,
    w: &SeriesWindow,
    rng: Option<&mut SplitMix64>,
) -> Result<Var> {
    let y = w
        .y
        .clone()
        .ok_or_else(|| Error::Input("training window has no targets".into()))?;
    let vars = model.forward_graph(g, params, w, rng)?;
    g.pinball(vars.forecast, y, model.config().quantiles.clone())
}

/// Mean composite loss per window in inference mode.
pub fn evaluate_cql(model: &CausalForecaster, windows: &WindowSet) -> Result<f64> {
    let losses: Vec<f64> = windows
        .windows
        .par_iter()
        .map(|w| {
            let mut g = Graph::new();
            let loss = window_loss(model, &mut g, model.params(), w, None)?;
            Ok(g.value(loss).get(0, 0))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_cql: f64,
    pub val_cql: f64,
    /// Wall time of the epoch; not part of any checkpoint.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Epoch 0 is the untrained model.
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    /// Columns `epoch,train_cql,val_cql`. Wall-clock times are left out so
    /// the file depends only on the run's inputs.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_cql,val_cql")?;
        for r in &self.records {
            writeln!(f, "{},{},{}", r.epoch, r.train_cql, r.val_cql)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub history: TrainHistory,
    /// Optimiser state at the best validation epoch.
    pub optimizer: OptimizerState,
}

/// Trains from the model's current parameters; on return the model holds
/// the best validation parameters.
pub fn fit(
    model: &mut CausalForecaster,
    train: &WindowSet,
    validation: &WindowSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    fit_from(model, train, validation, cfg, None)
}

/// Continues `previous` for `cfg.epochs` more epochs. The model must hold
/// `previous.params`.
pub fn fit_from(
    model: &mut CausalForecaster,
    train: &WindowSet,
    validation: &WindowSet,
    cfg: &TrainConfig,
    previous: Option<&TrainOutcome>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::config("training and validation windows must be non-empty"));
    }
    let mut optimizer = match previous {
        Some(prev) => Optimizer::from_state(&prev.optimizer, cfg.learning_rate, model.params())?,
        None => Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params()),
    };
    let mut history = match previous {
        Some(prev) => prev.history.clone(),
        None => {
            let start = Instant::now();
            let record = EpochRecord {
                epoch: 0,
                train_cql: evaluate_cql(model, train)?,
                val_cql: evaluate_cql(model, validation)?,
                seconds: start.elapsed().as_secs_f64(),
            };
            if !record.train_cql.is_finite() || !record.val_cql.is_finite() {
                return Err(Error::Diverged {
                    epoch: 0,
                    reason: "initial loss is not finite".into(),
                    last_good: Box::new(model.params().clone()),
                });
            }
            info!("epoch 0 train {:.5} val {:.5}", record.train_cql, record.val_cql);
            TrainHistory {
                records: vec![record],
                best_epoch: 0,
                stopped_early: false,
            }
        }
    };
    history.stopped_early = false;
    let mut best_val = history
        .best()
        .map(|r| r.val_cql)
        .ok_or_else(|| Error::State("history has no best epoch".into()))?;
    let mut best_params = model.params().clone();
    let mut best_state = optimizer.state();
    let first_epoch = history.records.last().map_or(0, |r| r.epoch) + 1;
    let mut bad_epochs = 0;

    for epoch in first_epoch..first_epoch + cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::new(derive_seed(cfg.seed, &format!("shuffle/{epoch}"))).shuffle(&mut order);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<(f64, ParamStore)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = SplitMix64::new(derive_seed(cfg.seed, &format!("dropout/{epoch}/{i}")));
                    let mut g = Graph::new();
                    let loss = window_loss(model, &mut g, model.params(), &train.windows[i], Some(&mut rng))?;
                    let value = g.value(loss).get(0, 0);
                    if !value.is_finite() {
                        return Ok((value, model.params().zeros_like()));
                    }
                    let grads = g.backward(loss)?;
                    Ok((value, g.param_grads(&grads, model.params())))
                })
                .collect::<Result<_>>()?;
            let mut total = 0.0;
            let mut grads = model.params().zeros_like();
            for (loss, g) in &parts {
                total += loss;
                for (id, t) in grads.iter_mut() {
                    t.add_assign(g.get(id)?);
                }
            }
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite batch loss in batch {batch_no}"),
                    last_good: Box::new(best_params),
                });
            }
            let n = batch.len() as f64;
            grads.map_values(|v| v / n);
            let norm = clip_grad_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite gradient in batch {batch_no}"),
                    last_good: Box::new(best_params),
                });
            }
            optimizer.step(model.params_mut(), &grads)?;
        }

        let record = EpochRecord {
            epoch,
            train_cql: evaluate_cql(model, train)?,
            val_cql: evaluate_cql(model, validation)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        if !record.train_cql.is_finite() || !record.val_cql.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite evaluation loss".into(),
                last_good: Box::new(best_params),
            });
        }
        info!(
            "epoch {epoch} train {:.5} val {:.5} ({:.1}s)",
            record.train_cql, record.val_cql, record.seconds
        );
        let improved = record.val_cql < best_val;
        history.records.push(record);
        if improved {
            best_val = history.records.last().unwrap().val_cql;
            history.best_epoch = epoch;
            best_params = model.params().clone();
            best_state = optimizer.state();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.early_stop_patience {
                debug!("no improvement for {bad_epochs} epochs, stopping");
                history.stopped_early = true;
                break;
            }
        }
    }
    model.set_params(best_params.clone())?;
    Ok(TrainOutcome {
        params: best_params,
        history,
        optimizer: best_state,
    })
}
