//! Finetune the opinion classifier on the first six hours of each post.
//!
//! ```text
//! cargo run --release --example classify -- [pretrained.ckpt]
//! ```

use icssm::data::split::DEFAULT_FRACTIONS;
use icssm::data::{simulate_dataset, split_dataset, DatasetManifest, SimConfig};
use icssm::eval::overall_eval;
use icssm::model::{Model, ModelConfig};
use icssm::training::{finetune, pretrain, Task, TrainConfig};

fn main() -> icssm::Result<()> {
    let posts = simulate_dataset(&SimConfig::default(), 0)?;
    let data = split_dataset(&posts, &DatasetManifest::derive("synthetic", &posts), DEFAULT_FRACTIONS)?;
    let mut model = match std::env::args().nth(1) {
        Some(path) => Model::load(path.as_ref())?,
        None => {
            let mut m = Model::new(ModelConfig {
                opinions: data.manifest.opinions.clone(),
                s_ref: data.manifest.s_ref,
                ..Default::default()
            })?;
            pretrain(&mut m, &data, &TrainConfig { epochs: 5, ..Default::default() })?;
            m
        }
    };
    let cfg = TrainConfig { epochs: 30, lr: 2e-3, warmup_steps: 0, patience: 0, ..Default::default() };
    let report = finetune(&mut model, Task::Classify, &data, &cfg)?;
    for e in &report.epochs {
        println!(
            "epoch {:>2}: train CE {:.4}, validation CE {:.4}",
            e.epoch,
            e.train.task,
            e.validation.map_or(f64::NAN, |v| v.task)
        );
    }
    let r = overall_eval(&model, &data.test, 6.0 * 3600.0, Some(&model.config.opinions))?;
    let c = r.classification.expect("labels requested");
    println!("test accuracy {:.3}, macro-F1 {:.3}", c.accuracy.unwrap_or(f64::NAN), c.macro_f1.unwrap_or(f64::NAN));

    let post = &data.test[0];
    let probs = model.classify_opinion(post, 6.0 * 3600.0)?;
    println!("{} (label {:?}):", post.post_id, post.opinion);
    for (label, p) in model.config.opinions.iter().zip(probs) {
        println!("  {label:>8} {p:.3}");
    }
    Ok(())
}
