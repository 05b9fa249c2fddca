//! Training: losses, the pretraining loop and task finetuning.
//!
//! Every phase shares one loop. Each batch is evaluated one tape per post
//! (in parallel), gradients are reduced in batch order and scaled by
//! `1/|B|`, then a single Adam step is taken. The parameters of the epoch with
//! the best validation objective are restored at the end.

pub mod config;
pub mod losses;
pub mod objectives;
pub mod report;
pub mod tier2;

pub use config::{RunConfig, TrainConfig};
pub use losses::{loss_pred, loss_temp, EarlyStopping, PostPredictions, StateTransitions};
pub use objectives::Task;
pub use report::{EpochRecord, LossSummary, Phase, StopReason, TrainReport};
pub use tier2::train_tier2;

use crate::data::split::MIN_INTERVALS;
use crate::data::{PostRecord, SplitData};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{optimizer_step, AdamState, GradBuffer};
use objectives::{Objective, PassContext, VALIDATION_EPOCH};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

fn check_posts(posts: &[PostRecord], what: &str) -> Result<()> {
    if posts.is_empty() {
        return Err(Error::Invalid(format!("empty {what} set")));
    }
    let short: Vec<_> = posts
        .iter()
        .filter(|p| p.num_intervals() < MIN_INTERVALS)
        .map(|p| p.post_id.as_str())
        .take(5)
        .collect();
    if !short.is_empty() {
        return Err(Error::Invalid(format!(
            "{what} posts with fewer than {MIN_INTERVALS} intervals: {}",
            short.join(", ")
        )));
    }
    Ok(())
}

fn mean_losses(items: &[LossSummary]) -> LossSummary {
    let n = items.len().max(1) as f64;
    let mut s = LossSummary::default();
    for l in items {
        s.pred += l.pred;
        s.temp += l.temp;
        s.total += l.total;
        s.task += l.task;
    }
    LossSummary {
        pred: s.pred / n,
        temp: s.temp / n,
        total: s.total / n,
        task: s.task / n,
    }
}

fn validate_pass(model: &Model, objective: Objective, cfg: &TrainConfig, posts: &[PostRecord]) -> Result<LossSummary> {
    let ctx = PassContext {
        seed: cfg.seed,
        epoch: VALIDATION_EPOCH,
        teacher_forcing: 1.0,
        train: false,
    };
    let losses = posts
        .par_iter()
        .enumerate()
        .map(|(i, p)| model.evaluate_post(objective, cfg, p, i, ctx).map(|r| r.losses))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_losses(&losses))
}

/// Shared epoch loop. `phase` labels the report records.
fn fit(
    model: &mut Model,
    objective: Objective,
    phase: Phase,
    cfg: &TrainConfig,
    train: &[PostRecord],
    val: &[PostRecord],
) -> Result<TrainReport> {
    cfg.validate()?;
    check_posts(train, "training")?;
    let started = Instant::now();
    let mut state = AdamState::new(&model.store);
    let freeze_encoder = cfg.freeze_encoder;
    state.freeze(|n| objective.unused(n) || (freeze_encoder && n.starts_with("enc.")), &model.store);
    let adam = cfg.adam();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let t_epoch = Instant::now();
        let p_tf = cfg.teacher_forcing(epoch);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let ctx = PassContext {
            seed: cfg.seed,
            epoch: epoch as u64,
            teacher_forcing: p_tf,
            train: true,
        };
        let mut epoch_losses = Vec::with_capacity(train.len());
        let (mut lr, mut norm_sum, mut steps) = (0.0, 0.0, 0u64);
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| model.evaluate_post(objective, cfg, &train[i], i, ctx))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            let mut grads = GradBuffer::zeros_like(&model.store);
            for r in &results {
                grads.add(r.grads.as_ref().expect("training pass returns gradients"));
                epoch_losses.push(r.losses);
            }
            grads.scale(1.0 / batch.len() as f64);
            let info = optimizer_step(&mut model.store, &mut grads, &mut state, &adam)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, step {}: {e}", state.step + 1)))?;
            lr = info.lr;
            norm_sum += info.grad_norm;
            steps += 1;
        }
        let train_summary = mean_losses(&epoch_losses);
        let validation = if val.is_empty() {
            None
        } else {
            Some(validate_pass(model, objective, cfg, val)?)
        };
        let monitored = validation.unwrap_or(train_summary).objective();
        if stopper.observe(epoch, monitored) {
            best = model.store.clone();
        }
        records.push(EpochRecord {
            phase,
            epoch,
            train: train_summary,
            validation,
            lambda: cfg.lambda,
            teacher_forcing: p_tf,
            lr,
            grad_norm: norm_sum / steps.max(1) as f64,
            steps: state.step,
            seconds: t_epoch.elapsed().as_secs_f64(),
        });
        if stopper.should_stop() {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    model.store = best;
    Ok(TrainReport {
        epochs: records,
        best_epoch: stopper.best_epoch,
        stop_reason,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Self-supervised pretraining on next-interval prediction plus temporal consistency.
pub fn pretrain(model: &mut Model, data: &SplitData, cfg: &TrainConfig) -> Result<TrainReport> {
    fit(model, Objective::Pretrain, Phase::Pretrain, cfg, &data.train, &data.val)
}

/// Task finetuning from a pretrained model.
pub fn finetune(model: &mut Model, task: Task, data: &SplitData, cfg: &TrainConfig) -> Result<TrainReport> {
    if task == Task::Classify {
        if model.config.num_classes() < 2 {
            return Err(Error::Config("classification needs at least two opinion labels in the model".into()));
        }
        for p in data.train.iter().chain(&data.val) {
            match p.opinion.as_deref() {
                None => return Err(Error::Invalid(format!("post {} has no opinion label", p.post_id))),
                Some(l) => {
                    model.config.class_index(l)?;
                }
            }
        }
    }
    let phase = match task {
        Task::Forecast => Phase::Forecast,
        Task::Classify => Phase::Classify,
    };
    fit(model, Objective::Finetune(task), phase, cfg, &data.train, &data.val)
}

#[cfg(test)]
mod tests;
