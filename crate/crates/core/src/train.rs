//! Adam, the mini-batch epoch loop with early stopping, and evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{stack_batch, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::loss::{asl_loss, batch_cost, AslConfig};
use crate::metrics::{aggregate_metrics, MetricsReport, PredictionSet};
use crate::model::{forward, predict, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; at least 1.
    pub patience: usize,
    pub shuffle_seed: u64,
    pub asl: AslConfig,
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            shuffle_seed: 0,
            asl: AslConfig::default(),
            tau: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            p.push("adam_epsilon must be > 0".into());
        }
        if self.batch_size == 0 {
            p.push("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            p.push("max_epochs must be >= 1".into());
        }
        if self.patience == 0 {
            p.push("patience must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.tau) {
            p.push(format!("tau must lie in [0, 1), got {}", self.tau));
        }
        if let Err(Error::Config(more)) = self.asl.validate() {
            p.extend(more);
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// First and second moments per parameter tensor, and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((theta, &gi), (mi, vi)) in iter {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
    Ok(())
}

/// Loss and parameter gradients of one batch.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[&EmbeddingRecord],
    asl: &AslConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let b = stack_batch(batch)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let v = tape.constant(b.visual);
    let t = tape.constant(b.textual);
    let scores = forward(&mut tape, params, &bound, v, t)?;
    if !tape.value(scores).all_finite() {
        return Err(Error::Numerical("non-finite scores".into()));
    }
    let loss = asl_loss(&mut tape, scores, &b.labels, asl)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g = bound
        .vars()
        .iter()
        .map(|&var| grads.take(var).expect("trainable leaf has a gradient"))
        .collect();
    Ok((value, g))
}

/// Forward, loss, backward and one Adam update on `batch`; returns the
/// pre-update loss.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    batch: &[&EmbeddingRecord],
    cfg: &TrainConfig,
) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(params, batch, &cfg.asl)?;
    adam_step(params.tensors_mut(), &grads, state, cfg)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_cost: f64,
    pub valid_cost: f64,
    /// Percent.
    pub valid_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// One line per epoch: `epoch train_cost valid_cost valid_macro_f1`.
    pub fn to_log(&self) -> String {
        let mut s = String::from("epoch\ttrain_cost\tvalid_cost\tvalid_macro_f1\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{}\t{:.17e}\t{:.17e}\t{:.17e}",
                e.epoch, e.train_cost, e.valid_cost, e.valid_macro_f1
            );
        }
        let _ = writeln!(s, "# best_epoch {} stopped_early {}", self.best_epoch, self.stopped_early);
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: History,
}

pub fn train(
    params: ModelParams,
    train_set: &[EmbeddingRecord],
    valid_set: &[EmbeddingRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_observer(params, train_set, valid_set, cfg, |_| {})
}

/// Like [`train`], calling `observer` after every epoch.
pub fn train_with_observer(
    mut params: ModelParams,
    train_set: &[EmbeddingRecord],
    valid_set: &[EmbeddingRecord],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.audit()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation sets".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut state = AdamState::new(params.tensors());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut cost_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EmbeddingRecord> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut params, &mut state, &batch, cfg).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            })?;
            cost_sum += loss * batch.len() as f64;
        }
        let train_cost = cost_sum / train_set.len() as f64;

        let scores = score_records(&params, valid_set)?;
        let valid_cost = validation_cost(&scores, valid_set, &cfg.asl)
            .map_err(|e| Error::Numerical(format!("epoch {epoch}, validation: {e}")))?;
        let preds = predictions(valid_set, scores, cfg.tau)?;
        let record = EpochRecord {
            epoch,
            train_cost,
            valid_cost,
            valid_macro_f1: aggregate_metrics(&preds)?.f1_macro,
        };
        observer(&record);
        epochs.push(record);

        match &best {
            Some((c, _, _)) if valid_cost >= *c => {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = epoch < cfg.max_epochs;
                    break;
                }
            }
            _ => {
                best = Some((valid_cost, epoch, params.clone()));
                stale = 0;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        history: History {
            epochs,
            best_epoch,
            stopped_early,
        },
    })
}

fn validation_cost(scores: &[Vec<f64>], records: &[EmbeddingRecord], asl: &AslConfig) -> Result<f64> {
    if scores.iter().flatten().any(|z| !z.is_finite()) {
        return Err(Error::Numerical("non-finite validation scores".into()));
    }
    batch_cost(
        scores.iter().zip(records).map(|(s, r)| (s.as_slice(), r.labels.as_slice())),
        asl,
    )
}

const SCORE_CHUNK: usize = 256;

/// Confidence vectors for every record, in input order.
pub fn score_records(params: &ModelParams, records: &[EmbeddingRecord]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(SCORE_CHUNK) {
        let refs: Vec<&EmbeddingRecord> = chunk.iter().collect();
        let b = stack_batch(&refs)?;
        let scores = predict(params, &b.visual, &b.textual)?;
        out.extend(scores.data().chunks(scores.last_dim()).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn predictions(records: &[EmbeddingRecord], scores: Vec<Vec<f64>>, tau: f64) -> Result<PredictionSet> {
    let y_true = records.iter().map(|r| r.labels.clone()).collect();
    PredictionSet::from_scores(y_true, scores, tau)
}

/// Scores every record, quantizes at `tau`, and computes the metric suite.
pub fn evaluate(params: &ModelParams, records: &[EmbeddingRecord], tau: f64) -> Result<(PredictionSet, MetricsReport)> {
    if records.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let scores = score_records(params, records)?;
    let preds = predictions(records, scores, tau)?;
    let report = aggregate_metrics(&preds)?;
    Ok((preds, report))
}
