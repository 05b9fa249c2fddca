//! Finetune for forecasting and roll one test post forward at five-minute
//! steps, comparing the forecast with the realised trajectory.
//!
//! ```text
//! cargo run --release --example forecast -- [pretrained.ckpt]
//! ```

use icssm::data::split::DEFAULT_FRACTIONS;
use icssm::data::{simulate_dataset, split_dataset, DatasetManifest, SimConfig};
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
    let ft = TrainConfig { epochs: 10, lr: 5e-4, warmup_steps: 0, ..Default::default() };
    let report = finetune(&mut model, Task::Forecast, &data, &ft)?;
    println!("finetuned {} epochs, best {}", report.epochs.len(), report.best_epoch);

    let post = data.test.iter().max_by_key(|p| p.num_intervals()).expect("test split is non-empty");
    let six = 6.0 * 3600.0;
    let series = model.rollout_trajectory(post, six, 300.0, 3.0 * 86_400.0)?;
    println!("post {} ({} observations)", post.post_id, post.num_intervals());
    println!("{:>6} {:>36} {:>36}", "hours", "forecast", "observed");
    for i in (0..series.len()).step_by(72) {
        let t = series.times[i];
        let truth = icssm::model::two_tier::group_cumulative(std::slice::from_ref(post), t);
        println!(
            "{:>6.1} {:>36} {:>36}",
            (t - post.t0) / 3600.0,
            format!("{:.0?}", series.cumulative[i]),
            format!("{:.0?}", truth)
        );
    }
    Ok(())
}
