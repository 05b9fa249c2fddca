//! Tier-2 training with tier 1 frozen.
//!
//! A sample is an opinion group (posts created at or after a frame start `F`)
//! and an issue time `τ`. Tier-1 summaries are computed once per sample; the
//! loss compares `log1p` of the corrected group cumulative with the observed
//! one at 6-hourly checkpoints after `τ`.

use super::config::TrainConfig;
use super::report::{EpochRecord, LossSummary, Phase, StopReason, TrainReport};
use super::EarlyStopping;
use crate::data::{PostRecord, SplitData};
use crate::embeddings::SECONDS_PER_DAY;
use crate::error::{Error, Result};
use crate::model::two_tier::{group_cumulative, Tier2Input};
use crate::model::Model;
use crate::numerics::{optimizer_step, AdamState, GradBuffer, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

const CHECKPOINT_SPACING: f64 = 6.0 * 3600.0;
const MIN_FRAME: f64 = 3.0 * SECONDS_PER_DAY;
const MAX_FRAME: f64 = 38.0 * SECONDS_PER_DAY;

/// One cached training sample.
#[derive(Clone, Debug)]
pub struct Tier2Sample {
    pub input: Tier2Input,
    /// 1-based horizon steps of the checkpoints.
    pub ks: Vec<usize>,
    /// `log1p` observed group cumulative at each checkpoint.
    pub targets: Vec<[f64; 4]>,
}

/// Draw `n` (frame, issue) pairs per opinion with issue times in `[lo, hi]`
/// and targets no later than `hi_target`.
fn draw_samples(
    model: &Model,
    posts: &[PostRecord],
    (lo, hi): (f64, f64),
    hi_target: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tier2Sample>> {
    let step = model.config.tau_step;
    let horizon = model.config.horizon;
    let mut jobs = Vec::new();
    for label in &model.config.opinions {
        let group: Vec<&PostRecord> = posts.iter().filter(|p| p.opinion.as_deref() == Some(label)).collect();
        let Some(first) = group.iter().map(|p| p.t0).reduce(f64::min) else {
            continue;
        };
        let lo = lo.max(first + MIN_FRAME);
        if !(hi > lo) {
            continue;
        }
        for _ in 0..n {
            let tau = rng.gen_range(lo..hi);
            let frame = rng.gen_range((tau - MAX_FRAME).max(first)..=tau - MIN_FRAME);
            let members: Vec<PostRecord> = group.iter().filter(|p| p.t0 >= frame).map(|p| (*p).clone()).collect();
            if !members.iter().any(|p| p.t0 <= tau) {
                continue;
            }
            let last = (tau + horizon).min(hi_target);
            let n_ck = ((last - tau) / CHECKPOINT_SPACING).floor() as usize;
            if n_ck == 0 {
                continue;
            }
            let ks: Vec<usize> = (1..=n_ck)
                .map(|i| (i as f64 * CHECKPOINT_SPACING / step).round() as usize)
                .collect();
            jobs.push((members, tau, ks));
        }
    }
    let samples = jobs
        .into_par_iter()
        .map(|(members, tau, ks)| {
            let k_max = *ks.last().expect("at least one checkpoint");
            let input = model.summarize_group(&members, tau, step, k_max)?;
            let targets = ks
                .iter()
                .map(|&k| group_cumulative(&members, tau + k as f64 * step).map(f64::ln_1p))
                .collect();
            Ok(Tier2Sample { input, ks, targets })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(samples.into_iter().filter(|s| !s.input.posts.is_empty()).collect())
}

/// Mean squared `log1p` error over the sample's checkpoints, with gradients.
fn sample_loss(model: &Model, store: &ParamStore, s: &Tier2Sample, want_grad: bool) -> Result<(f64, Option<GradBuffer>)> {
    let mut g = Graph::new();
    let f = model.tier2_factors_node(&mut g, store, &s.input, &s.ks)?;
    let cum = s.input.summed_cumulative();
    let n = s.ks.len();
    let base: Vec<f64> = s.ks.iter().flat_map(|&k| cum[k - 1]).collect();
    let obs: Vec<f64> = (0..n).flat_map(|_| s.input.observed_total).collect();
    let scaled = g.mul_const(f, Tensor::new(n, 4, base)?);
    let obs = g.constant(Tensor::new(n, 4, obs)?);
    let pred = g.add(scaled, obs);
    let lp = g.log1p(pred)?;
    let t = g.constant(Tensor::new(n, 4, s.targets.concat())?);
    let d = g.sub(lp, t);
    let sq = g.square(d);
    let sum = g.sum(sq);
    let loss = g.scale(sum, 1.0 / n as f64);
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("tier-2 loss at issue time {}", s.input.issue_time)));
    }
    let grads = if want_grad { Some(g.backward(loss, store)?) } else { None };
    Ok((v, grads))
}

fn mean_loss(model: &Model, samples: &[Tier2Sample]) -> Result<f64> {
    let v = samples
        .par_iter()
        .map(|s| sample_loss(model, &model.store, s, false).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
}

fn summary(loss: f64) -> LossSummary {
    LossSummary {
        task: loss,
        ..Default::default()
    }
}

/// Train the tier-2 parameters on groups drawn from the training split, with
/// validation issue times inside the validation period.
pub fn train_tier2(model: &mut Model, data: &SplitData, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if model.config.opinions.is_empty() {
        return Err(Error::Config("tier-2 training needs opinion labels".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7132);
    let span = |ps: &[PostRecord]| {
        let lo = ps.iter().map(|p| p.t0).fold(f64::INFINITY, f64::min);
        let hi = ps.iter().map(|p| p.t0).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (train_lo, train_hi) = span(&data.train);
    let train = draw_samples(
        model,
        &data.train,
        (train_lo, train_hi - SECONDS_PER_DAY),
        train_hi,
        cfg.tier2_samples,
        &mut rng,
    )?;
    if train.is_empty() {
        return Err(Error::Invalid("training split too short for tier-2 samples".into()));
    }
    let mut both = data.train.clone();
    both.extend(data.val.iter().cloned());
    let (val_lo, val_hi) = span(&data.val);
    let val = if data.val.is_empty() {
        Vec::new()
    } else {
        draw_samples(model, &both, (val_lo, val_hi - SECONDS_PER_DAY), val_hi, cfg.tier2_samples.div_ceil(2), &mut rng)?
    };

    let mut state = AdamState::new(&model.store);
    state.freeze(|n| !n.starts_with("t2."), &model.store);
    let adam = crate::numerics::AdamConfig {
        lr: cfg.tier2_lr,
        warmup_steps: 0,
        ..cfg.adam()
    };
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.tier2_epochs {
        let t_epoch = Instant::now();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let (mut loss_sum, mut lr, mut norm_sum, mut steps) = (0.0, 0.0, 0.0, 0u64);
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_loss(model, &model.store, &train[i], true))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = GradBuffer::zeros_like(&model.store);
            for (v, g) in &results {
                loss_sum += v;
                grads.add(g.as_ref().expect("gradients requested"));
            }
            grads.scale(1.0 / batch.len() as f64);
            let info = optimizer_step(&mut model.store, &mut grads, &mut state, &adam)?;
            lr = info.lr;
            norm_sum += info.grad_norm;
            steps += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let validation = if val.is_empty() { None } else { Some(mean_loss(model, &val)?) };
        if stopper.observe(epoch, validation.unwrap_or(train_loss)) {
            best = model.store.clone();
        }
        records.push(EpochRecord {
            phase: Phase::Tier2,
            epoch,
            train: summary(train_loss),
            validation: validation.map(summary),
            lambda: cfg.lambda,
            teacher_forcing: 1.0,
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
