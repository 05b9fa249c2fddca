#![allow(dead_code)]

use icssm::data::split::DEFAULT_FRACTIONS;
use icssm::data::{
    simulate_dataset, split_dataset, DatasetManifest, Engagement, ObservationRecord, PostRecord, SimConfig,
    SplitData, UserMeta,
};
use icssm::numerics::Tensor;
use rand::Rng;

pub const HOUR: f64 = 3600.0;
pub const DAY: f64 = 86_400.0;

pub fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// A post with `n` observations at random gaps and random counts.
pub fn random_post(rng: &mut impl Rng, id: &str, n: usize) -> PostRecord {
    let t0 = 1.7e9 + rng.gen_range(0.0..1e6);
    let mut t = t0;
    let observations = (0..n)
        .map(|_| {
            t += rng.gen_range(120.0..3600.0);
            ObservationRecord {
                t,
                e: Engagement::from_array([
                    rng.gen_range(0..40),
                    rng.gen_range(0..5),
                    rng.gen_range(0..9),
                    rng.gen_range(0..12),
                ]),
            }
        })
        .collect();
    PostRecord {
        post_id: id.into(),
        t0,
        text: "rates are going up again".into(),
        user: UserMeta {
            user_id: "u".into(),
            followers: 1200,
            verified: false,
            account_age_days: 400.0,
        },
        opinion: Some("economy".into()),
        observations,
    }
}

/// Default generator with `per_opinion` posts each and a shorter span.
pub fn small_sim_config(per_opinion: usize, span_days: f64) -> SimConfig {
    let mut cfg = SimConfig::default();
    for o in &mut cfg.opinions {
        o.posts = per_opinion;
    }
    cfg.span_days = span_days;
    cfg
}

pub fn small_split(per_opinion: usize, seed: u64) -> SplitData {
    let posts = simulate_dataset(&small_sim_config(per_opinion, 20.0), seed).unwrap();
    split_dataset(&posts, &DatasetManifest::derive("synthetic", &posts), DEFAULT_FRACTIONS).unwrap()
}
