//! Pretrain on a synthetic corpus and report per-epoch losses.
//!
//! ```text
//! cargo run --release --example pretrain -- [epochs] [checkpoint]
//! ```

use icssm::data::{simulate_dataset, split_dataset, DatasetManifest, SimConfig};
use icssm::data::split::DEFAULT_FRACTIONS;
use icssm::model::{Model, ModelConfig};
use icssm::training::{pretrain, TrainConfig};

fn main() -> icssm::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let out = args.next();

    let posts = simulate_dataset(&SimConfig::default(), 0)?;
    let data = split_dataset(&posts, &DatasetManifest::derive("synthetic", &posts), DEFAULT_FRACTIONS)?;
    println!(
        "{} train / {} val / {} test posts, s_ref {:.0}s",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.manifest.s_ref
    );
    let mut model = Model::new(ModelConfig {
        opinions: data.manifest.opinions.clone(),
        s_ref: data.manifest.s_ref,
        ..Default::default()
    })?;
    println!("{} parameters", model.num_parameters());

    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let report = pretrain(&mut model, &data, &cfg)?;
    for e in &report.epochs {
        let v = e.validation.unwrap_or_default();
        println!(
            "epoch {:>2}  p_tf {:.2}  train {:.4} (pred {:.4}, temp {:.4})  val {:.4}  {:.1}s",
            e.epoch, e.teacher_forcing, e.train.total, e.train.pred, e.train.temp, v.total, e.seconds
        );
    }
    println!("best epoch {}, stopped by {:?}", report.best_epoch, report.stop_reason);
    if let Some(path) = out {
        model.save(path.as_ref())?;
        println!("saved {path}");
    }
    Ok(())
}
