//! Invariants checked over generated inputs.

mod common;

use common::{random_post, small_sim_config};
use icssm::data::split::{temporal_split, MIN_INTERVALS};
use icssm::data::{censor_to_intervals, simulate_dataset, Event};
use icssm::data::sim::simulate_hawkes;
use icssm::data::HawkesParams;
use icssm::embeddings::{ate, rte};
use icssm::model::{History, Model, ModelConfig};
use icssm::numerics::ops::causal_conv1d;
use icssm::numerics::{matexp, optimizer_step, AdamConfig, AdamState, GradBuffer, Generator, Graph, ParamStore, Tensor};
use icssm::ssm::{discretize, icmamba_block, scan_chunked, scan_sequential, BlockParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(r: usize, c: usize, v: &[f64]) -> Tensor {
    Tensor::new(r, c, v[..r * c].to_vec()).unwrap()
}

fn values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagonal_semigroup(a in values(8, -3.0, -0.001), s in 0.0f64..5.0, t in 0.0f64..5.0) {
        let Generator::Diagonal(whole) = matexp(&Generator::Diagonal(a.clone()), s + t).unwrap() else { unreachable!() };
        let part1 = discretize(&a, s).unwrap();
        let part2 = discretize(&a, t).unwrap();
        for i in 0..a.len() {
            prop_assert!((whole[i] - part1[i] * part2[i]).abs() < 1e-12);
            prop_assert!(whole[i] > 0.0 && whole[i] <= 1.0);
        }
    }

    #[test]
    fn causal_conv_prefix(x in values(60, -2.0, 2.0), k in values(12, -1.0, 1.0), cut in 1usize..15) {
        let (l, d, w) = (15, 4, 3);
        let x = tensor(l, d, &x);
        let k = tensor(d, w, &k);
        let full = causal_conv1d(&x, &k, None).unwrap();
        let part = causal_conv1d(&x.slice_rows(0, cut), &k, None).unwrap();
        prop_assert!(part == full.slice_rows(0, cut));
    }

    #[test]
    fn scan_prefix_and_chunking(seed in 0u64..1000, l in 1usize..80, cut in 0usize..80, chunk in 1usize..20) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, n) = (3, 2);
        let a = Tensor::new(d, n, (0..d * n).map(|_| -rng.gen_range(0.01..2.0)).collect()).unwrap();
        let b = common::rand_tensor(&mut rng, l, n, 1.0);
        let c = common::rand_tensor(&mut rng, l, n, 1.0);
        let x = common::rand_tensor(&mut rng, l, d, 1.0);
        let dt: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..3.0)).collect();
        let full = scan_sequential(&a, &b, &c, &x, &dt).unwrap();
        let cut = cut.min(l);
        let part = scan_sequential(&a, &b.slice_rows(0, cut), &c.slice_rows(0, cut), &x.slice_rows(0, cut), &dt[..cut]).unwrap();
        prop_assert!(part.y == full.y.slice_rows(0, cut));
        let chunked = scan_chunked(&a, &b, &c, &x, &dt, chunk).unwrap();
        prop_assert!(chunked.h.max_abs_diff(&full.h) < 1e-10);
    }

    #[test]
    fn doubling_a_gap_changes_the_state(seed in 0u64..1000, j in 1usize..10) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, d, n) = (10, 2, 3);
        let a = Tensor::new(d, n, (0..d * n).map(|_| -rng.gen_range(0.05..2.0)).collect()).unwrap();
        let b = Tensor::filled(l, n, 1.0);
        let c = Tensor::filled(l, n, 1.0);
        let x = Tensor::new(l, d, (0..l * d).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap();
        let dt: Vec<f64> = (0..l).map(|_| rng.gen_range(0.1..2.0)).collect();
        let mut doubled = dt.clone();
        doubled[j] *= 2.0;
        let h1 = scan_sequential(&a, &b, &c, &x, &dt).unwrap().h;
        let h2 = scan_sequential(&a, &b, &c, &x, &doubled).unwrap().h;
        // Positive states contract further over the longer gap.
        for i in 0..d * n {
            prop_assert!(h2.get(j, i) < h1.get(j, i));
        }
        prop_assert!(h1.slice_rows(0, j) == h2.slice_rows(0, j));
    }

    #[test]
    fn block_prefix(seed in 0u64..200, cut in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = BlockParams::new(&mut store, "b", 6, 2, 5, 3, 3, &mut rng);
        let l = 12;
        let u = common::rand_tensor(&mut rng, l, 6, 1.0);
        let te = common::rand_tensor(&mut rng, l, 2, 1.0);
        let gaps: Vec<f64> = (0..l).map(|i| if i == 0 { 0.0 } else { 100.0 * (i % 5 + 1) as f64 }).collect();
        let run = |rows: usize| {
            let mut g = Graph::new();
            let un = g.constant(u.slice_rows(0, rows));
            let tn = g.constant(te.slice_rows(0, rows));
            let tr = icmamba_block(&mut g, &store, &p, un, tn, &gaps[..rows], 300.0, None).unwrap();
            g.value(tr.out).clone()
        };
        let full = run(l);
        prop_assert!(run(cut) == full.slice_rows(0, cut));
    }

    #[test]
    fn rte_is_translation_invariant(t in -1e6f64..1e6, r in -1e6f64..1e6, c in 1.0f64..1e5, sigma in 10.0f64..1e4) {
        prop_assert!((rte(t + c, r + c, sigma).unwrap() - rte(t, r, sigma).unwrap()).abs() < 1e-9);
        prop_assert_eq!(ate(t, 8, 10_000.0).unwrap(), ate(t, 8, 10_000.0).unwrap());
        let moved = ate(t + c, 8, 10_000.0).unwrap();
        prop_assert_ne!(moved, ate(t, 8, 10_000.0).unwrap());
    }

    #[test]
    fn clipping_ceiling(g in values(10, -1e3, 1e3), clip in 0.01f64..10.0) {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(2, 3));
        let b = store.add("b", Tensor::zeros(1, 4));
        let mut grads = GradBuffer::zeros_like(&store);
        grads.accumulate(a, &tensor(2, 3, &g));
        grads.accumulate(b, &tensor(1, 4, &g[6..]));
        let mut state = AdamState::new(&store);
        let cfg = AdamConfig { clip_norm: clip, ..Default::default() };
        let info = optimizer_step(&mut store, &mut grads, &mut state, &cfg).unwrap();
        prop_assert!(info.clipped_norm <= clip + 1e-9);
        prop_assert!(grads.global_norm() <= clip + 1e-9);
    }

    #[test]
    fn censoring_conserves_counts(
        ev in prop::collection::vec((0.0f64..100.0, 0usize..4), 0..60),
        mut obs in prop::collection::vec(0.5f64..120.0, 1..12),
    ) {
        obs.sort_by(f64::total_cmp);
        obs.dedup();
        let events: Vec<Event> = ev.iter().map(|&(t, channel)| Event { t, channel }).collect();
        let out = censor_to_intervals(0.0, &events, &obs).unwrap();
        let sum: u64 = out.iter().map(|o| o.e.total()).sum();
        let last = *obs.last().unwrap();
        prop_assert_eq!(sum as usize, events.iter().filter(|e| e.t > 0.0 && e.t <= last).count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn split_is_deterministic_disjoint_and_complete(seed in 0u64..50, train in 0.3f64..0.8) {
        let mut cfg = small_sim_config(8, 10.0);
        cfg.gap_law.max_hours = 40.0;
        let posts = simulate_dataset(&cfg, seed).unwrap();
        let rest = 1.0 - train;
        let fractions = [train, rest / 2.0, rest - rest / 2.0];
        let s = temporal_split(&posts, fractions).unwrap();
        prop_assert_eq!(&s, &temporal_split(&posts, fractions).unwrap());
        let mut ids: Vec<&str> = s.train.iter().chain(&s.val).chain(&s.test).map(|p| p.post_id.as_str()).collect();
        ids.extend(s.dropped.iter().map(String::as_str));
        ids.sort();
        let mut want: Vec<&str> = posts.iter().map(|p| p.post_id.as_str()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        for p in s.train.iter().chain(&s.val).chain(&s.test) {
            prop_assert!(p.observations.len() >= MIN_INTERVALS);
        }
        let last = |v: &[icssm::data::PostRecord]| v.iter().map(|p| p.t0).fold(f64::NEG_INFINITY, f64::max);
        let first = |v: &[icssm::data::PostRecord]| v.iter().map(|p| p.t0).fold(f64::INFINITY, f64::min);
        prop_assert!(last(&s.train) <= first(&s.val) && last(&s.val) <= first(&s.test));
    }
}

#[test]
fn empty_scan_is_empty() {
    let a = Tensor::filled(2, 3, -1.0);
    let out = scan_sequential(&a, &Tensor::zeros(0, 3), &Tensor::zeros(0, 3), &Tensor::zeros(0, 2), &[]).unwrap();
    assert_eq!(out.y.rows(), 0);
    assert_eq!(out.h.rows(), 0);
}

#[test]
fn long_scan_stays_within_geometric_bound() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (l, d, n) = (8192, 2, 3);
    let a = Tensor::new(d, n, (0..d * n).map(|_| -rng.gen_range(0.05..1.0)).collect()).unwrap();
    let b = common::rand_tensor(&mut rng, l, n, 1.0);
    let c = common::rand_tensor(&mut rng, l, n, 1.0);
    let x = common::rand_tensor(&mut rng, l, d, 1.0);
    let dt: Vec<f64> = (0..l).map(|_| rng.gen_range(0.5..2.0)).collect();
    let h = scan_sequential(&a, &b, &c, &x, &dt).unwrap().h;
    for i in 0..d * n {
        let (k, j) = (i / n, i % n);
        let decay = (0.5 * a.get(k, j)).exp();
        let bound = 1.0 / (1.0 - decay);
        let worst = (0..l).map(|t| h.get(t, i).abs()).fold(0.0, f64::max);
        assert!(worst <= bound, "channel {i}: {worst} > {bound}");
    }
}

#[test]
fn simulator_has_no_hidden_state() {
    let p = HawkesParams { mu: [0.5, 0.2, 0.2, 0.1], branching: 0.4, beta: 1.0, coupling: 0.2, baseline_decay_hours: None };
    let mean = |seeds: std::ops::Range<u64>| {
        let n = seeds.end - seeds.start;
        seeds
            .map(|s| simulate_hawkes(&p, 1.0, 48.0, &mut ChaCha8Rng::seed_from_u64(s)).len() as f64)
            .sum::<f64>()
            / n as f64
    };
    let first = mean(0..400);
    let again = mean(0..400);
    assert_eq!(first, again);
    let doubled = mean(0..800);
    let expected = 48.0 / (1.0 - 0.4);
    // Cluster counts are overdispersed: var ≈ mean / (1 − α)².
    let se = (expected / (0.6f64 * 0.6) / 400.0).sqrt();
    assert!((first - doubled).abs() < 4.0 * se, "{first} vs {doubled}");
}

#[test]
fn autoregressive_reroll_reproduces_the_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = Model::new(ModelConfig {
        d_emb: 4,
        d_v: 2,
        d_model: 6,
        d_state: 3,
        head_hidden: 5,
        l_max: 32,
        s_ref: 600.0,
        opinions: vec!["economy".into(), "health".into()],
        ..Default::default()
    })
    .unwrap();
    let post = random_post(&mut rng, "r", 6);
    let tau_obs = post.observations[3].t - post.t0;
    let (step, k_total) = (600.0, 30);
    let free = model.rollout(&post, tau_obs, step, k_total, None).unwrap();
    let h = History::from_post(&post, Some(tau_obs));
    let m = h.m();
    let tau0 = post.t0 + tau_obs;
    for k in [1, 7, 20] {
        // Steps before k are fed the free rollout's own outputs as observed values;
        // from k on the model continues on its own.
        let content = model.content_vector(&post, None).unwrap();
        let s = model
            .stream(&h, tau0, Some((tau0, step, k_total)), content, |row, own| {
                if row >= m && row - m < k {
                    free.hats[row - m]
                } else {
                    own
                }
            })
            .unwrap();
        for j in k..k_total {
            let got = s.outputs[m + j].pred.map(|v| v.exp_m1().max(0.0));
            for c in 0..4 {
                assert!((got[c] - free.increments[j][c]).abs() < 1e-8, "k {k}, step {j}");
            }
        }
    }
}
