//! Full synthetic pipeline: simulate, pretrain, finetune both tasks, train
//! the group tier and run every evaluation protocol.
//!
//! ```text
//! cargo run --release --example end_to_end -- [pretrain_epochs]
//! ```

use icssm::data::split::DEFAULT_FRACTIONS;
use icssm::data::{simulate_dataset, split_dataset, DatasetManifest, SimConfig};
use icssm::eval::{
    dynamic_opinion_forecast, early_prediction_sweep, overall_eval, staged_next_eval, DynamicConfig, Stage,
    DEFAULT_CHECKPOINTS_MINUTES,
};
use icssm::model::{Model, ModelConfig};
use icssm::training::{finetune, pretrain, train_tier2, Task, TrainConfig};
use std::time::Instant;

fn main() -> icssm::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let clock = Instant::now();
    let posts = simulate_dataset(&SimConfig::default(), 0)?;
    let data = split_dataset(&posts, &DatasetManifest::derive("synthetic", &posts), DEFAULT_FRACTIONS)?;
    let mut model = Model::new(ModelConfig {
        opinions: data.manifest.opinions.clone(),
        s_ref: data.manifest.s_ref,
        ..Default::default()
    })?;

    let cfg = TrainConfig { epochs, ..Default::default() };
    let r = pretrain(&mut model, &data, &cfg)?;
    let (first, last) = (r.epochs[0].train.total, r.epochs.last().unwrap().train.total);
    println!("pretrain: {} epochs, L_total {first:.3} -> {last:.3}, {:.0?}", r.epochs.len(), clock.elapsed());

    let ft = TrainConfig { epochs: 10, lr: 5e-4, warmup_steps: 0, ..Default::default() };
    let mut forecaster = model.clone();
    finetune(&mut forecaster, Task::Forecast, &data, &ft)?;
    println!("forecast finetune done, {:.0?}", clock.elapsed());
    let mut classifier = model.clone();
    let cls = TrainConfig { epochs: 30, lr: 2e-3, warmup_steps: 0, patience: 0, ..Default::default() };
    finetune(&mut classifier, Task::Classify, &data, &cls)?;
    println!("classify finetune done, {:.0?}", clock.elapsed());
    let t2 = train_tier2(&mut forecaster, &data, &TrainConfig::default())?;
    println!(
        "tier 2: {} epochs, loss {:.4} -> {:.4}, {:.0?}",
        t2.epochs.len(),
        t2.epochs[0].train.task,
        t2.epochs.last().unwrap().train.task,
        clock.elapsed()
    );

    let six = 6.0 * 3600.0;
    let fc = overall_eval(&forecaster, &data.test, six, None)?;
    println!(
        "totals at 6h: rmse {:.4} vs carry-forward {:.4} ({:+.1}%)",
        fc.forecast.rmse.unwrap(),
        fc.baseline.rmse.unwrap(),
        100.0 * fc.improvement
    );
    let pre = overall_eval(&model, &data.test, six, None)?;
    println!("  pretrained-only rmse {:.4}", pre.forecast.rmse.unwrap());
    let cl = overall_eval(&classifier, &data.test, six, Some(&classifier.config.opinions))?;
    println!("classification macro-F1 {:.3}", cl.classification.unwrap().macro_f1.unwrap());
    for row in early_prediction_sweep(&forecaster, &data.test, &DEFAULT_CHECKPOINTS_MINUTES)? {
        println!("  {:>3} min: rmse {:.4} (carry-forward {:.4})", row.minutes, row.rmse, row.baseline_rmse);
    }
    for stage in Stage::ALL {
        let r = staged_next_eval(&forecaster, &data.test, stage)?;
        println!("  staged {stage:?}: n {} rmse {:.4}", r.n, r.rmse.unwrap());
    }
    println!("evaluation done, {:.0?}", clock.elapsed());

    let mut fresh_cfg = SimConfig::default();
    fresh_cfg.span_days = 45.0;
    for o in &mut fresh_cfg.opinions {
        o.posts /= 2;
    }
    let fresh = simulate_dataset(&fresh_cfg, 1)?;
    let frame = fresh_cfg.start + 2.0 * 86_400.0;
    for label in &forecaster.config.opinions {
        let group: Vec<_> = fresh.iter().filter(|p| p.opinion.as_deref() == Some(label)).cloned().collect();
        let d = dynamic_opinion_forecast(&forecaster, &group, frame, &DynamicConfig::default())?;
        for s in &d.summaries {
            println!(
                "  {label} {:>4} days: {} records, coverage {:.3}, shared band width {:.1}",
                s.window_days,
                s.records,
                s.coverage.unwrap_or(f64::NAN),
                s.shared_band_width
            );
        }
    }
    println!("total {:.0?}", clock.elapsed());
    Ok(())
}
