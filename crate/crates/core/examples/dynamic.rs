//! Opinion-level forecasting: train the group tier, then issue forecasts every
//! six hours for fresh groups and report band coverage per window length.
//!
//! ```text
//! cargo run --release --example dynamic -- [forecast.ckpt]
//! ```

use icssm::data::split::DEFAULT_FRACTIONS;
use icssm::data::{simulate_dataset, split_dataset, DatasetManifest, SimConfig};
use icssm::eval::{dynamic_opinion_forecast, DynamicConfig};
use icssm::model::{Model, ModelConfig};
use icssm::training::{finetune, pretrain, train_tier2, Task, TrainConfig};

const DAY: f64 = 86_400.0;

fn main() -> icssm::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => Model::load(path.as_ref())?,
        None => {
            let posts = simulate_dataset(&SimConfig::default(), 0)?;
            let data = split_dataset(&posts, &DatasetManifest::derive("synthetic", &posts), DEFAULT_FRACTIONS)?;
            let mut m = Model::new(ModelConfig {
                opinions: data.manifest.opinions.clone(),
                s_ref: data.manifest.s_ref,
                ..Default::default()
            })?;
            pretrain(&mut m, &data, &TrainConfig { epochs: 5, ..Default::default() })?;
            let ft = TrainConfig { epochs: 5, lr: 5e-4, warmup_steps: 0, ..Default::default() };
            finetune(&mut m, Task::Forecast, &data, &ft)?;
            let t2 = train_tier2(&mut m, &data, &TrainConfig::default())?;
            println!("group tier: {} epochs, best {}", t2.epochs.len(), t2.best_epoch);
            m
        }
    };

    let mut fresh_cfg = SimConfig::default();
    fresh_cfg.span_days = 45.0;
    for o in &mut fresh_cfg.opinions {
        o.posts /= 2;
    }
    let fresh = simulate_dataset(&fresh_cfg, 1)?;
    let frame = fresh_cfg.start + 2.0 * DAY;
    let cfg = DynamicConfig::default();
    for label in &model.config.opinions {
        let group: Vec<_> = fresh.iter().filter(|p| p.opinion.as_deref() == Some(label)).cloned().collect();
        let d = dynamic_opinion_forecast(&model, &group, frame, &cfg)?;
        println!("{label}: {} posts, {} issues", group.len(), d.issues);
        for s in &d.summaries {
            println!(
                "  {:>4} days: {} scored targets, coverage {:.3}, shared band width {:.1}",
                s.window_days,
                s.scored_targets,
                s.coverage.unwrap_or(f64::NAN),
                s.shared_band_width
            );
        }
        if let Some(r) = d.records.iter().find(|r| r.truth.is_some() && r.target_time >= frame + 14.0 * DAY) {
            println!(
                "  day 14 ({} days): point {:.0?}, band {:.0?}..{:.0?}, truth {:.0?}",
                r.window_days,
                r.point,
                r.lower,
                r.upper,
                r.truth.unwrap()
            );
        }
    }
    Ok(())
}
