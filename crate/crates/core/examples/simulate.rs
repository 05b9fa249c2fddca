//! Generate the default synthetic corpus and print per-opinion statistics.
//!
//! ```text
//! cargo run --release --example simulate -- [seed]
//! ```

use icssm::data::insights::channel_insights;
use icssm::data::{simulate_posts, SimConfig};
use std::time::Instant;

fn main() -> icssm::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = SimConfig::default();
    let start = Instant::now();
    let posts = simulate_posts(&cfg, seed)?;
    println!("{} posts in {:.2?}", posts.len(), start.elapsed());
    for o in &cfg.opinions {
        let group: Vec<_> = posts.iter().filter(|p| p.record.opinion.as_deref() == Some(&o.name)).collect();
        let n = group.len() as f64;
        let obs = group.iter().map(|p| p.record.num_intervals()).sum::<usize>() as f64 / n;
        let mut mean = [0.0; 4];
        let mut early = 0.0;
        for p in &group {
            let t = p.record.total().as_f64();
            for c in 0..4 {
                mean[c] += t[c] / n;
            }
            let six = p.count_until(p.record.t0 + 6.0 * 3600.0).iter().sum::<f64>();
            early += six / t.iter().sum::<f64>().max(1.0) / n;
        }
        println!(
            "{:>8}: {} posts, {:.1} observations/post, mean totals {:?}, share within 6h {:.2}",
            o.name,
            group.len(),
            obs,
            mean.map(|v| v.round()),
            early
        );
        println!("          sample text: {:?}", group[0].record.text);
    }
    let records: Vec<_> = posts.into_iter().map(|p| p.record).collect();
    for ins in channel_insights(&records, 10.0) {
        let alpha = ins.fit.and_then(|f| f.alpha).map_or("n/a".to_string(), |a| format!("{a:.2}"));
        println!("{:>8}: {} posts with engagement, tail exponent {alpha}", ins.channel, ins.n);
    }
    Ok(())
}
